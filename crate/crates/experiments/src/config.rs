//! Flat `key=value` configuration files.
//!
//! Lines are trimmed, `#` starts a comment, duplicate keys are rejected. Each
//! experiment pulls the keys it knows through a [`Reader`], which also
//! records the resolved value of every key (defaults included). Leftover keys
//! are an error, and the resolved set is hashed into run metadata.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use neon_lab::categorical::ArSampler;
use neon_lab::grid::GridAxis;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", no + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", no + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{k}`", no + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }
}

/// A type that can be read from and written back to a config value.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

scalar_value!(f64, u64, usize, bool, String);

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

fn split_list(s: &str, sep: char) -> impl Iterator<Item = &str> {
    s.split(sep).map(str::trim).filter(|x| !x.is_empty())
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: Vec<T> = split_list(s, ',').map(T::parse_value).collect::<Result<_, _>>()?;
        if v.is_empty() {
            return Err("empty list".into());
        }
        Ok(v)
    }
    fn render(&self) -> String {
        self.iter().map(T::render).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for [f64; 2] {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v = Vec::<f64>::parse_value(s)?;
        v.try_into().map_err(|_| "expected two numbers `a,b`".to_string())
    }
    fn render(&self) -> String {
        format!("{},{}", self[0], self[1])
    }
}

/// Row-major 2×2 matrix written `a,b;c,d`.
impl ConfigValue for [[f64; 2]; 2] {
    fn parse_value(s: &str) -> Result<Self, String> {
        let rows: Vec<[f64; 2]> = split_list(s, ';').map(<[f64; 2]>::parse_value).collect::<Result<_, _>>()?;
        rows.try_into().map_err(|_| "expected a 2x2 matrix `a,b;c,d`".to_string())
    }
    fn render(&self) -> String {
        format!("{};{}", self[0].render(), self[1].render())
    }
}

impl ConfigValue for GridAxis {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse()
    }
    fn render(&self) -> String {
        format!("{}:{}:{}", self.start, self.stop, self.step)
    }
}

impl ConfigValue for ArSampler {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|e| format!("{e}"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

/// Typed access to a [`RawConfig`] that tracks which keys were consumed.
pub struct Reader<'a> {
    raw: &'a RawConfig,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl<'a> Reader<'a> {
    pub fn new(raw: &'a RawConfig) -> Self {
        Self { raw, resolved: RefCell::new(BTreeMap::new()) }
    }

    pub fn get<T: ConfigValue>(&self, key: &str, default: T) -> Result<T, CliError> {
        let value = match self.raw.entries.get(key) {
            Some(s) => T::parse_value(s).map_err(|e| CliError::Config(format!("`{key}`: {e}")))?,
            None => default,
        };
        self.resolved.borrow_mut().insert(key.to_string(), value.render());
        Ok(value)
    }

    /// Fails on keys nobody asked for, then returns the resolved config.
    pub fn finish(self, experiment: &str) -> Result<Resolved, CliError> {
        let mut resolved = self.resolved.into_inner();
        if let Some(id) = self.raw.entries.get("experiment") {
            if id != experiment {
                return Err(CliError::Config(format!("config is for `{id}`, not `{experiment}`")));
            }
        }
        let unknown: Vec<&String> = self
            .raw
            .entries
            .keys()
            .filter(|k| *k != "experiment" && !resolved.contains_key(*k))
            .collect();
        if !unknown.is_empty() {
            let names: Vec<&str> = unknown.iter().map(|s| s.as_str()).collect();
            return Err(CliError::Config(format!("unknown key(s): {}", names.join(", "))));
        }
        resolved.insert("experiment".into(), experiment.into());
        Ok(Resolved { entries: resolved })
    }
}

/// Every key of a run with its effective value.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    entries: BTreeMap<String, String>,
}

impl Resolved {
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn sha256(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}
