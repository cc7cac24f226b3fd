use std::path::PathBuf;

use neon_lab::categorical::CatError;
use neon_lab::ddpm::DdpmError;
use neon_lab::gaussian::GaussError;
use neon_lab::metrics::MetricsError;
use neon_lab::neon::NeonError;
use neon_lab::param::ParamError;
use neon_lab::table::TableError;
use thiserror::Error;

use crate::ckpt_io::CkptError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("numeric divergence: {0}")]
    Divergence(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Checkpoint(#[from] CkptError),
    #[error("{0}")]
    Model(String),
}

impl CliError {
    /// 0 success, 2 config, 3 divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Model(_) => 2,
            Self::Divergence(_) => 3,
            Self::Io { .. } => 4,
            Self::Checkpoint(e) => {
                if matches!(e, CkptError::Io { .. }) {
                    4
                } else {
                    2
                }
            }
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

impl From<DdpmError> for CliError {
    fn from(e: DdpmError) -> Self {
        match e {
            DdpmError::Diverged { .. } | DdpmError::NonFiniteActivation { .. } => Self::Divergence(e.to_string()),
            other => Self::Model(other.to_string()),
        }
    }
}

impl From<GaussError> for CliError {
    fn from(e: GaussError) -> Self {
        match e {
            GaussError::Diverged { .. } | GaussError::CovarianceCollapse { .. } => Self::Divergence(e.to_string()),
            other => Self::Model(other.to_string()),
        }
    }
}

macro_rules! model_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Model(e.to_string())
            }
        }
    )*};
}

model_error!(CatError, MetricsError, NeonError, ParamError);

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        match e {
            TableError::Io(io) => Self::Io { path: PathBuf::new(), source: io },
            other => Self::Model(other.to_string()),
        }
    }
}
