//! Tiny MLP denoiser trained as a short-horizon DDPM on 2D points.

mod adam;
mod loss;
mod mlp;
mod sample;
mod schedule;
mod train;

use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::param::ParamError;

pub use adam::{adam_preconditioner, AdamState};
pub use loss::{ddpm_loss_grad, ddpm_loss_grad_with_noise, ddpm_mean_grad, NoiseDraw};
pub use mlp::{mlp_forward, time_embedding_into, Activations, MlpParams, MlpWidths, DEFAULT_HIDDEN, DEFAULT_TIME_EMBED};
pub use sample::{ddpm_sample, SamplerConfig, SAMPLE_CHUNK};
pub use schedule::{cosine_schedule, cosine_schedule_capped, NoiseSchedule, COSINE_OFFSET, MAX_BETA, TOY_BETA_CAP};
pub use train::{ddpm_finetune, ddpm_train, mlp_from_checkpoint, schedule_from_checkpoint, TrainConfig, TrainedDdpm};

#[derive(Debug, Error)]
pub enum DdpmError {
    #[error("a diffusion schedule needs at least 2 steps, got {0}")]
    BadSteps(usize),
    #[error("beta cap must lie in (0, 1), got {0}")]
    BadBetaCap(f64),
    #[error("invalid MLP widths {0:?} (time embedding must be even, hidden widths > 0)")]
    BadWidths(MlpWidths),
    #[error("expected {expected} values, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("parameter {0} is not finite")]
    NonFiniteParam(usize),
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("step {t} outside 0..{steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("requested zero samples")]
    NoSamples,
    #[error("score scale must be finite and > 0, got {0}")]
    BadZeta(f64),
    #[error("learning rate must be finite and > 0, got {0}")]
    BadLr(f64),
    #[error("Adam has taken no steps yet, so there is no second-moment estimate")]
    NoSecondMoment,
    #[error("training loss became non-finite in epoch {epoch}")]
    Diverged { epoch: usize, last: Box<Checkpoint> },
    #[error("bad DDPM checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}
