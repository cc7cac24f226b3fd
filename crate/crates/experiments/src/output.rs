//! CSV artifacts and their `.meta` siblings.

use std::path::{Path, PathBuf};

use neon_lab::table::ResultTable;

use crate::config::Resolved;
use crate::error::CliError;

pub const CODE_VERSION: &str = concat!("neon-experiments ", env!("CARGO_PKG_VERSION"));

/// Provenance written next to every CSV.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub config_sha256: String,
    pub seed: u64,
    pub extra: Vec<(String, String)>,
}

impl RunMeta {
    pub fn new(cfg: &Resolved, seed: u64) -> Self {
        Self { config_sha256: cfg.sha256(), seed, extra: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let mut s = format!("config_sha256={}\nseed={}\nversion={CODE_VERSION}\n", self.config_sha256, self.seed);
        for (k, v) in &self.extra {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes `dir/name` and `dir/name.meta`; returns the CSV path.
pub fn write_table(dir: &Path, name: &str, table: &ResultTable, meta: &RunMeta) -> Result<PathBuf, CliError> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, table.to_csv_string()).map_err(|e| CliError::io(&path, e))?;
    let meta_path = dir.join(format!("{name}.meta"));
    std::fs::write(&meta_path, meta.render()).map_err(|e| CliError::io(&meta_path, e))?;
    Ok(path)
}

/// `0.9` → `0.9`, `1` → `1.0`: stable file-name fragments for sweep values.
pub fn tag(v: f64) -> String {
    format!("{v:?}")
}
