//! Shared pieces of the DDPM toy protocol: target law, base training and
//! FID evaluation along a merge.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use neon_lab::checkpoint::Checkpoint;
use neon_lab::ddpm::{
    ddpm_sample, ddpm_train, mlp_from_checkpoint, schedule_from_checkpoint, MlpWidths, SamplerConfig,
    TrainConfig, TrainedDdpm, DEFAULT_TIME_EMBED,
};
use neon_lab::gaussian::{gauss_sample, GaussianParams, Point};
use neon_lab::metrics::frechet_2d;
use neon_lab::neon::risk_along_merge;
use neon_lab::rng::RngState;
use neon_lab::table::{format_real, ResultTable};

use crate::config::Reader;
use crate::error::CliError;

/// Target law and base-model recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySetup {
    pub mu_ref: [f64; 2],
    pub sigma_ref: [[f64; 2]; 2],
    pub n_base: usize,
    pub train: TrainConfig,
}

impl Default for ToySetup {
    fn default() -> Self {
        Self {
            mu_ref: [0.0, 0.0],
            sigma_ref: [[2.0, 1.0], [1.0, 2.0]],
            n_base: 1000,
            train: TrainConfig::default(),
        }
    }
}

impl ToySetup {
    /// Reads the base recipe and target law.
    pub fn read(r: &Reader) -> Result<Self, CliError> {
        let d = Self::default();
        let hidden: Vec<usize> = r.get("hidden", d.train.widths.hidden.clone())?;
        let time_embed: usize = r.get("time_embed", DEFAULT_TIME_EMBED)?;
        let setup = Self {
            mu_ref: r.get("mu_ref", d.mu_ref)?,
            sigma_ref: r.get("sigma_ref", d.sigma_ref)?,
            n_base: r.get("n_base", d.n_base)?,
            train: TrainConfig {
                lr: r.get("lr", d.train.lr)?,
                epochs: r.get("epochs", d.train.epochs)?,
                batch_size: r.get("batch_size", d.train.batch_size)?,
                widths: MlpWidths { time_embed, hidden },
                steps: r.get("steps", d.train.steps)?,
                beta_cap: r.get("beta_cap", d.train.beta_cap)?,
            },
        };
        setup.truth()?;
        if setup.n_base < 3 {
            return Err(CliError::Config("n_base must be >= 3".into()));
        }
        Ok(setup)
    }

    pub fn truth(&self) -> Result<GaussianParams, CliError> {
        GaussianParams::from_cov(self.mu_ref, self.sigma_ref)
            .map_err(|e| CliError::Config(format!("sigma_ref: {e}")))
    }

    /// The real training set for `seed`.
    pub fn real_data(&self, seed: u64) -> Result<Vec<Point>, CliError> {
        Ok(gauss_sample(&self.truth()?, self.n_base, &mut RngState::new(seed).fork("real")))
    }

    pub fn train_base(&self, seed: u64) -> Result<TrainedDdpm, CliError> {
        self.train_with(seed, &self.train, "base")
    }

    /// Trains on the seed's real data with another recipe, e.g. other widths.
    pub fn train_with(&self, seed: u64, cfg: &TrainConfig, label: &str) -> Result<TrainedDdpm, CliError> {
        let data = self.real_data(seed)?;
        Ok(ddpm_train(&data, cfg, &RngState::new(seed).fork(label))?)
    }
}

type Slot = Arc<Mutex<Option<Arc<TrainedDdpm>>>>;

/// Memoizes trained models by recipe, seed and label so experiments that
/// share a base do not retrain it. Each slot trains at most once.
#[derive(Debug, Default)]
pub struct BaseCache {
    slots: Mutex<BTreeMap<String, Slot>>,
}

impl BaseCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn base(&self, setup: &ToySetup, seed: u64) -> Result<Arc<TrainedDdpm>, CliError> {
        self.get(setup, seed, &setup.train, "base")
    }

    pub fn get(&self, setup: &ToySetup, seed: u64, cfg: &TrainConfig, label: &str) -> Result<Arc<TrainedDdpm>, CliError> {
        let key = format!("{seed}|{label}|{:?}|{:?}|{}|{cfg:?}", setup.mu_ref, setup.sigma_ref, setup.n_base);
        let slot = Arc::clone(self.slots.lock().expect("cache lock").entry(key).or_default());
        let mut guard = slot.lock().expect("slot lock");
        if let Some(m) = guard.as_ref() {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(setup.train_with(seed, cfg, label)?);
        *guard = Some(Arc::clone(&m));
        Ok(m)
    }
}

/// Draws `n` points from a DDPM checkpoint with score scale `zeta`.
pub fn sample_checkpoint(c: &Checkpoint, zeta: f64, n: usize, rng: &RngState) -> Result<Vec<Point>, CliError> {
    let mlp = mlp_from_checkpoint(c)?;
    let sched = schedule_from_checkpoint(c)?;
    let sc = SamplerConfig::new(zeta)?;
    Ok(ddpm_sample(&mlp, &sched, sc, n, rng)?)
}

/// FID of DDPM checkpoints against the target law.
///
/// Model samples reuse one stream for every checkpoint so curves over `w`
/// are not dominated by sampling noise. The reference sample is drawn fresh
/// per evaluation, keyed by curve label and merge weight, unless `fixed`.
#[derive(Debug, Clone)]
pub struct FidEval {
    pub truth: GaussianParams,
    pub samples: usize,
    pub fixed_reference: bool,
    pub rng: RngState,
}

impl FidEval {
    pub fn fid(&self, c: &Checkpoint, label: &str) -> Result<f64, CliError> {
        let xs = sample_checkpoint(c, 1.0, self.samples, &self.rng.fork("eval"))?;
        let ref_label = if self.fixed_reference {
            "ref".to_string()
        } else {
            let w = c.meta.get("merge_w").cloned().unwrap_or_else(|| format_real(0.0));
            format!("ref/{label}/{w}")
        };
        let refs = gauss_sample(&self.truth, self.samples, &mut self.rng.fork(&ref_label));
        Ok(frechet_2d(&xs, &refs)?)
    }

    /// Rows `w, fid, log10_fid` for `neon_merge(theta_r, theta_s, w)`.
    /// Merges whose sampler or fit fails are `nan`.
    pub fn curve(&self, theta_r: &Checkpoint, theta_s: &Checkpoint, ws: &[f64], label: &str) -> Result<Curve, CliError> {
        let t = risk_along_merge(theta_r, theta_s, ws, |c| self.fid(c, label))?;
        let fids: Vec<f64> = t.real_column("risk")?.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        Ok(Curve { ws: ws.to_vec(), fids })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub ws: Vec<f64>,
    pub fids: Vec<f64>,
}

impl Curve {
    /// `(w, fid)` at the smallest finite FID; the first one on ties.
    pub fn argmin(&self) -> Option<(f64, f64)> {
        self.ws
            .iter()
            .zip(&self.fids)
            .filter(|(_, f)| f.is_finite())
            .fold(None, |best: Option<(f64, f64)>, (&w, &f)| match best {
                Some((_, bf)) if bf <= f => best,
                _ => Some((w, f)),
            })
    }

    pub fn at(&self, w: f64) -> Option<f64> {
        self.ws.iter().position(|&x| x == w).map(|i| self.fids[i])
    }

    pub fn table(&self) -> ResultTable {
        let mut t = ResultTable::new(["w", "fid", "log10_fid"]);
        for (&w, &f) in self.ws.iter().zip(&self.fids) {
            t.push(vec![w.into(), f.into(), f.log10().into()]).expect("three cells");
        }
        t
    }
}
