//! Binary checkpoint files.
//!
//! Layout: `NEONCKPT`, a version byte, a little-endian `u32` metadata length,
//! UTF-8 `key=value` lines, a little-endian `u64` count, then that many
//! little-endian `f64` values. The checkpoint's own fields are stored under
//! reserved keys and its free-form metadata under `meta.`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use neon_lab::checkpoint::{Checkpoint, ModelKind};
use neon_lab::param::ParamVector;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"NEONCKPT";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: expected magic `NEONCKPT`")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u8),
    #[error("truncated checkpoint: {0}")]
    Truncated(&'static str),
    #[error("malformed checkpoint metadata: {0}")]
    BadMeta(String),
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
}

const RESERVED: [&str; 4] = ["kind", "seed", "budget_images", "lr"];

pub fn encode(c: &Checkpoint) -> Result<Vec<u8>, CkptError> {
    let mut meta = String::new();
    let fields = [
        ("kind", c.kind.to_string()),
        ("seed", c.seed.to_string()),
        ("budget_images", c.budget_images.to_string()),
        ("lr", format!("{:e}", c.lr)),
    ];
    for (k, v) in fields {
        meta.push_str(&format!("{k}={v}\n"));
    }
    for (k, v) in &c.meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(CkptError::BadMeta(format!("key `{k}` cannot be stored")));
        }
        meta.push_str(&format!("meta.{k}={v}\n"));
    }
    let meta_len = u32::try_from(meta.len()).map_err(|_| CkptError::BadMeta("metadata too long".into()))?;
    let mut out = Vec::with_capacity(21 + meta.len() + 8 * c.params.dim());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(c.params.dim() as u64).to_le_bytes());
    for v in c.params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(buf: &mut &'a [u8], n: usize, what: &'static str) -> Result<&'a [u8], CkptError> {
    if buf.len() < n {
        return Err(CkptError::Truncated(what));
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CkptError> {
    let mut buf = bytes;
    if take(&mut buf, 8, "magic").map_err(|_| CkptError::BadMagic)? != MAGIC {
        return Err(CkptError::BadMagic);
    }
    let version = take(&mut buf, 1, "version")?[0];
    if version != VERSION {
        return Err(CkptError::UnsupportedVersion(version));
    }
    let meta_len = u32::from_le_bytes(take(&mut buf, 4, "metadata length")?.try_into().unwrap()) as usize;
    let meta = std::str::from_utf8(take(&mut buf, meta_len, "metadata")?)
        .map_err(|_| CkptError::BadMeta("not UTF-8".into()))?;
    let count = u64::from_le_bytes(take(&mut buf, 8, "parameter count")?.try_into().unwrap());
    let count = usize::try_from(count).map_err(|_| CkptError::Truncated("parameter values"))?;
    let body = take(&mut buf, count.checked_mul(8).ok_or(CkptError::Truncated("parameter values"))?, "parameter values")?;
    if !buf.is_empty() {
        return Err(CkptError::TrailingBytes(buf.len()));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

    let mut fields = BTreeMap::new();
    let mut user = BTreeMap::new();
    for line in meta.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| CkptError::BadMeta(format!("line `{line}`")))?;
        match k.strip_prefix("meta.") {
            Some(uk) => user.insert(uk.to_string(), v.to_string()),
            None if RESERVED.contains(&k) => fields.insert(k, v.to_string()),
            None => return Err(CkptError::BadMeta(format!("unknown field `{k}`"))),
        };
    }
    let field = |k: &str| fields.get(k).ok_or_else(|| CkptError::BadMeta(format!("missing `{k}`")));
    let bad = |k: &str| CkptError::BadMeta(format!("unparsable `{k}`"));
    let kind: ModelKind = field("kind")?.parse().map_err(|_| bad("kind"))?;
    let params = ParamVector::new(values).map_err(|e| CkptError::BadMeta(e.to_string()))?;
    let mut c = Checkpoint::new(params, kind, field("seed")?.parse().map_err(|_| bad("seed"))?);
    c.budget_images = field("budget_images")?.parse().map_err(|_| bad("budget_images"))?;
    c.lr = field("lr")?.parse().map_err(|_| bad("lr"))?;
    c.meta = user;
    Ok(c)
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<(), CkptError> {
    let bytes = encode(c)?;
    let io = |source| CkptError::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CkptError> {
    let io = |source| CkptError::Io { path: path.to_path_buf(), source };
    let mut bytes = Vec::new();
    std::fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
    decode(&bytes)
}
