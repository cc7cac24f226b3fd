//! File-level merge and alignment on user-supplied checkpoints and samples.

use std::path::{Path, PathBuf};

use neon_lab::checkpoint::{Checkpoint, ModelKind};
use neon_lab::ddpm::{ddpm_mean_grad, mlp_from_checkpoint, schedule_from_checkpoint, AdamState, MlpParams};
use neon_lab::gaussian::{gauss_nll_grad, GaussianParams, Point};
use neon_lab::neon::{alignment, directional_curvature, neon_merge, AlignmentReport, HVP_STEP};
use neon_lab::param::{ParamVector, Preconditioner};
use neon_lab::rng::RngState;

use crate::ckpt_io::{read_checkpoint, write_checkpoint};
use crate::config::{ConfigValue, Reader};
use crate::error::CliError;
use crate::exp2::adam_precond_from;
use crate::output::{write_table, RunMeta};

/// Reads a two-column numeric CSV with a header row.
pub fn read_points(path: &Path) -> Result<Vec<Point>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != 2 {
            return Err(CliError::Config(format!("{}: row {} has {} cells, expected 2", path.display(), i + 1, rec.len())));
        }
        let cell = |j: usize| {
            rec[j].trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                CliError::Config(format!("{}: row {}: `{}` is not a finite number", path.display(), i + 1, &rec[j]))
            })
        };
        out.push([cell(0)?, cell(1)?]);
    }
    Ok(out)
}

pub fn write_points(path: &Path, points: &[Point]) -> Result<(), CliError> {
    let mut t = neon_lab::table::ResultTable::new(["x", "y"]);
    for p in points {
        t.push(vec![p[0].into(), p[1].into()])?;
    }
    std::fs::write(path, t.to_csv_string()).map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!("checked io kind"),
        }
    } else {
        CliError::Config(format!("{}: {e}", path.display()))
    }
}

/// Writes `neon_merge(theta_r, theta_s, w)` to `out`.
pub fn merge_files(theta_r: &Path, theta_s: &Path, w: f64, out: &Path) -> Result<Checkpoint, CliError> {
    let r = read_checkpoint(theta_r)?;
    let s = read_checkpoint(theta_s)?;
    let merged = neon_merge(&r, &s, w)?;
    write_checkpoint(out, &merged)?;
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondKind {
    Identity,
    Adam,
}

impl ConfigValue for PrecondKind {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "identity" => Ok(Self::Identity),
            "adam" => Ok(Self::Adam),
            other => Err(format!("expected `identity` or `adam`, got `{other}`")),
        }
    }

    fn render(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::Adam => "adam".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub checkpoint: PathBuf,
    pub real: PathBuf,
    pub synthetic: PathBuf,
    pub alpha: f64,
    pub precond: PrecondKind,
    /// Estimate `z` by a finite-difference Hessian-vector product.
    pub curvature: bool,
    pub seed: u64,
    /// Noise draws per point for DDPM gradients.
    pub grad_repeats: usize,
    pub precond_batch: usize,
}

impl AlignConfig {
    pub fn read(r: &Reader) -> Result<Self, CliError> {
        let path = |k: &str| -> Result<PathBuf, CliError> {
            let p: PathBuf = r.get(k, PathBuf::new())?;
            if p.as_os_str().is_empty() {
                return Err(CliError::Config(format!("`{k}` is required")));
            }
            Ok(p)
        };
        let cfg = Self {
            checkpoint: path("checkpoint")?,
            real: path("real")?,
            synthetic: path("synthetic")?,
            alpha: r.get("alpha", 1e-4)?,
            precond: r.get("precond", PrecondKind::Identity)?,
            curvature: r.get("curvature", false)?,
            seed: r.get("seed", 0u64)?,
            grad_repeats: r.get("grad_repeats", 4usize)?,
            precond_batch: r.get("precond_batch", 256usize)?,
        };
        if cfg.grad_repeats == 0 || cfg.precond_batch == 0 {
            return Err(CliError::Config("grad_repeats and precond_batch must be >= 1".into()));
        }
        Ok(cfg)
    }
}

type GradFn<'a> = Box<dyn Fn(&ParamVector) -> Result<ParamVector, CliError> + 'a>;

/// Risk gradient of the checkpoint's model family on a fixed sample set.
fn risk_grad<'a>(c: &Checkpoint, data: &'a [Point], rng: &RngState, repeats: usize) -> Result<GradFn<'a>, CliError> {
    match c.kind {
        ModelKind::Gaussian => Ok(Box::new(move |theta: &ParamVector| Ok(gauss_nll_grad(&GaussianParams::from_params(theta)?, data)))),
        ModelKind::Ddpm => {
            let widths = mlp_from_checkpoint(c)?.widths().clone();
            let sched = schedule_from_checkpoint(c)?;
            let rng = rng.clone();
            Ok(Box::new(move |theta: &ParamVector| {
                let mlp = MlpParams::from_params(widths.clone(), theta)?;
                Ok(ddpm_mean_grad(&mlp, data, &sched, &rng, repeats)?.1)
            }))
        }
        ModelKind::Categorical => Err(CliError::Config("align takes Gaussian or DDPM checkpoints".into())),
    }
}

fn gaussian_adam_precond(g: &GaussianParams, data: &[Point], batch: usize, rng: &RngState) -> Result<Preconditioner, CliError> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.fork("shuffle").shuffle(&mut order);
    let mut st = AdamState::new(5);
    for chunk in order.chunks(batch) {
        let pts: Vec<Point> = chunk.iter().map(|&i| data[i]).collect();
        st.observe(gauss_nll_grad(g, &pts).as_slice())?;
    }
    Ok(st.preconditioner()?)
}

pub fn align(cfg: &AlignConfig) -> Result<AlignmentReport, CliError> {
    let c = read_checkpoint(&cfg.checkpoint)?;
    let real = read_points(&cfg.real)?;
    let synth = read_points(&cfg.synthetic)?;
    if real.is_empty() || synth.is_empty() {
        return Err(CliError::Config("sample files must hold at least one point".into()));
    }
    let rng = RngState::new(cfg.seed).fork("align");
    let grad_d = risk_grad(&c, &real, &rng.fork("grad/real"), cfg.grad_repeats)?;
    let grad_s = risk_grad(&c, &synth, &rng.fork("grad/synth"), cfg.grad_repeats)?;
    let r_d = grad_d(&c.params)?;
    let r_s = grad_s(&c.params)?;
    let precond = match (cfg.precond, c.kind) {
        (PrecondKind::Identity, _) => Preconditioner::identity(c.params.dim()),
        (PrecondKind::Adam, ModelKind::Gaussian) => {
            gaussian_adam_precond(&GaussianParams::from_checkpoint(&c)?, &real, cfg.precond_batch, &rng.fork("precond"))?
        }
        (PrecondKind::Adam, _) => adam_precond_from(&mlp_from_checkpoint(&c)?, &real, &schedule_from_checkpoint(&c)?, cfg.precond_batch, &rng.fork("precond"))?,
    };
    let z = if cfg.curvature {
        let v = precond.apply(&r_s)?;
        Some(directional_curvature(|t: &ParamVector| grad_d(t).map_err(|e| e.to_string()), &c.params, &v, HVP_STEP)?)
    } else {
        None
    };
    Ok(alignment(&r_d, &r_s, &precond, cfg.alpha, z)?)
}

pub fn write_alignment(dir: &Path, report: &AlignmentReport, meta: &RunMeta) -> Result<PathBuf, CliError> {
    write_table(dir, "alignment.csv", &report.to_table(), meta)
}
