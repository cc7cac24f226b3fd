use super::adam::AdamState;
use super::loss::{ddpm_loss_grad_with_noise, NoiseDraw};
use super::mlp::{MlpParams, MlpWidths, DEFAULT_HIDDEN};
use super::schedule::{cosine_schedule_capped, NoiseSchedule, MAX_BETA, TOY_BETA_CAP};
use super::DdpmError;
use crate::checkpoint::{Checkpoint, ModelKind};
use crate::gaussian::Point;
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub widths: MlpWidths,
    /// Diffusion steps `T`.
    pub steps: usize,
    pub beta_cap: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 10_000,
            batch_size: 256,
            widths: MlpWidths::standard(DEFAULT_HIDDEN),
            steps: 20,
            beta_cap: TOY_BETA_CAP,
        }
    }
}

/// A DDPM checkpoint together with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDdpm {
    pub checkpoint: Checkpoint,
    pub adam: AdamState,
}

impl TrainedDdpm {
    pub fn mlp(&self) -> Result<MlpParams, DdpmError> {
        mlp_from_checkpoint(&self.checkpoint)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, DdpmError> {
        schedule_from_checkpoint(&self.checkpoint)
    }
}

pub fn mlp_from_checkpoint(c: &Checkpoint) -> Result<MlpParams, DdpmError> {
    if c.kind != ModelKind::Ddpm {
        return Err(DdpmError::BadCheckpoint(format!("kind is {}, expected ddpm", c.kind)));
    }
    let widths = c
        .meta
        .get("widths")
        .ok_or_else(|| DdpmError::BadCheckpoint("missing `widths` metadata".into()))?;
    MlpParams::from_params(MlpWidths::decode(widths)?, &c.params)
}

pub fn schedule_from_checkpoint(c: &Checkpoint) -> Result<NoiseSchedule, DdpmError> {
    let steps = c
        .meta
        .get("steps")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| DdpmError::BadCheckpoint("missing `steps` metadata".into()))?;
    let cap = match c.meta.get("beta_cap") {
        Some(v) => v
            .parse()
            .map_err(|_| DdpmError::BadCheckpoint(format!("malformed beta_cap `{v}`")))?,
        None => MAX_BETA,
    };
    cosine_schedule_capped(steps, cap)
}

fn to_checkpoint(p: &MlpParams, sched: &NoiseSchedule, seed: u64, lr: f64, budget: u64) -> Checkpoint {
    let mut c = Checkpoint::new(p.to_params(), ModelKind::Ddpm, seed)
        .with_meta("widths", p.widths().encode())
        .with_meta("steps", sched.steps())
        .with_meta("beta_cap", sched.beta_cap());
    c.lr = lr;
    c.budget_images = budget;
    c
}

/// Minibatch Adam on the noise-prediction loss. Each epoch reshuffles; the
/// shuffle and all diffusion noise come from one stream forked off `rng`.
#[allow(clippy::too_many_arguments)]
fn run_epochs(
    params: &mut MlpParams,
    adam: &mut AdamState,
    data: &[Point],
    lr: f64,
    epochs: usize,
    batch_size: usize,
    sched: &NoiseSchedule,
    rng: &mut RngState,
    on_diverge: impl Fn(&MlpParams) -> Checkpoint,
) -> Result<(), DdpmError> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch = Vec::with_capacity(batch_size);
    for epoch in 0..epochs {
        let epoch_start = params.clone();
        rng.shuffle(&mut order);
        for idx in order.chunks(batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| data[i]));
            let noise = NoiseDraw::draw(batch.len(), sched.steps(), rng);
            let step = ddpm_loss_grad_with_noise(params, &batch, &noise, sched);
            let grad = match step {
                Ok((loss, grad)) if loss.is_finite() => grad,
                Ok(_) | Err(DdpmError::NonFiniteActivation { .. }) => {
                    return Err(DdpmError::Diverged { epoch, last: Box::new(on_diverge(&epoch_start)) });
                }
                Err(e) => return Err(e),
            };
            adam.step(params.as_mut_slice(), &grad, lr)?;
        }
        if params.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(DdpmError::Diverged { epoch, last: Box::new(on_diverge(&epoch_start)) });
        }
    }
    Ok(())
}

fn validate(data: &[Point], lr: f64, batch_size: usize) -> Result<(), DdpmError> {
    if data.is_empty() || batch_size == 0 {
        return Err(DdpmError::EmptyBatch);
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(DdpmError::BadLr(lr));
    }
    Ok(())
}

/// Trains from a fresh initialization. The budget is `epochs × |data|`.
pub fn ddpm_train(data: &[Point], cfg: &TrainConfig, rng: &RngState) -> Result<TrainedDdpm, DdpmError> {
    validate(data, cfg.lr, cfg.batch_size)?;
    let sched = cosine_schedule_capped(cfg.steps, cfg.beta_cap)?;
    let mut params = MlpParams::init(cfg.widths.clone(), &mut rng.fork("init"))?;
    let mut adam = AdamState::new(params.len());
    let seed = rng.seed();
    let lr = cfg.lr;
    let n = data.len() as u64;
    run_epochs(
        &mut params,
        &mut adam,
        data,
        cfg.lr,
        cfg.epochs,
        cfg.batch_size,
        &sched,
        &mut rng.fork("train"),
        |p| to_checkpoint(p, &sched, seed, lr, 0),
    )?;
    let checkpoint = to_checkpoint(&params, &sched, seed, lr, cfg.epochs as u64 * n)
        .with_meta("epochs", cfg.epochs)
        .with_meta("batch_size", cfg.batch_size);
    Ok(TrainedDdpm { checkpoint, adam })
}

/// Continues training `base` (parameters and Adam moments) on `data`.
pub fn ddpm_finetune(
    base: &TrainedDdpm,
    data: &[Point],
    lr: f64,
    epochs: usize,
    batch_size: usize,
    rng: &RngState,
) -> Result<TrainedDdpm, DdpmError> {
    validate(data, lr, batch_size)?;
    let sched = base.schedule()?;
    let mut params = base.mlp()?;
    let mut adam = base.adam.clone();
    let seed = base.checkpoint.seed;
    let prior = base.checkpoint.budget_images;
    run_epochs(
        &mut params,
        &mut adam,
        data,
        lr,
        epochs,
        batch_size,
        &sched,
        &mut rng.fork("finetune"),
        |p| to_checkpoint(p, &sched, seed, lr, prior),
    )?;
    let budget = prior + epochs as u64 * data.len() as u64;
    let mut checkpoint = to_checkpoint(&params, &sched, seed, lr, budget);
    for (k, v) in &base.checkpoint.meta {
        checkpoint.meta.entry(k.clone()).or_insert_with(|| v.clone());
    }
    let checkpoint = checkpoint
        .with_meta("finetune_epochs", epochs)
        .with_meta("finetune_images", epochs as u64 * data.len() as u64);
    Ok(TrainedDdpm { checkpoint, adam })
}
