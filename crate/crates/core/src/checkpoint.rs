use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::param::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Gaussian,
    Ddpm,
    Categorical,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Gaussian => "gaussian",
            ModelKind::Ddpm => "ddpm",
            ModelKind::Categorical => "categorical",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown model kind `{0}` (expected gaussian, ddpm or categorical)")]
pub struct UnknownModelKind(pub String);

impl FromStr for ModelKind {
    type Err = UnknownModelKind;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(ModelKind::Gaussian),
            "ddpm" => Ok(ModelKind::Ddpm),
            "categorical" => Ok(ModelKind::Categorical),
            other => Err(UnknownModelKind(other.to_string())),
        }
    }
}

/// Parameters plus the provenance needed to interpret and reproduce them.
///
/// `meta` carries kind-specific layout (e.g. MLP widths) and lineage such as
/// merge parents; keys and values must not contain `=` or newlines.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamVector,
    pub kind: ModelKind,
    pub seed: u64,
    /// Cumulative training examples seen.
    pub budget_images: u64,
    pub lr: f64,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: ParamVector, kind: ModelKind, seed: u64) -> Self {
        Self {
            params,
            kind,
            seed,
            budget_images: 0,
            lr: 0.0,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    /// Short content hash of the parameters, used to name merge parents.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.params.iter() {
            h.update(v.to_le_bytes());
        }
        let bytes: [u8; 32] = h.finalize().into();
        bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_round_trip() {
        for k in [ModelKind::Gaussian, ModelKind::Ddpm, ModelKind::Categorical] {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("vae".parse::<ModelKind>().is_err());
    }

    #[test]
    fn digest_tracks_params() {
        let a = Checkpoint::new(ParamVector::new(vec![1.0, 2.0]).unwrap(), ModelKind::Gaussian, 0);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.params = ParamVector::new(vec![1.0, 2.0000001]).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 16);
    }
}
