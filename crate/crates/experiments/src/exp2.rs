//! Cosine between the real and synthetic risk gradients at the base model,
//! as a function of the sampler's score scale.

use std::path::{Path, PathBuf};

use neon_lab::ddpm::{ddpm_loss_grad, ddpm_mean_grad, AdamState, MlpParams, NoiseSchedule};
use neon_lab::gaussian::{gauss_sample, Point};
use neon_lab::grid::GridAxis;
use neon_lab::neon::alignment;
use neon_lab::param::{ParamVector, Preconditioner};
use neon_lab::rng::RngState;
use neon_lab::table::ResultTable;

use crate::config::Reader;
use crate::error::CliError;
use crate::output::{tag, write_table, RunMeta};
use crate::stats::{mean, spearman, stderr};
use crate::toy::{sample_checkpoint, BaseCache, ToySetup};

#[derive(Debug, Clone, PartialEq)]
pub struct Exp2Config {
    /// Seeds `seed .. seed + n_seeds`.
    pub seed: u64,
    pub n_seeds: usize,
    pub setup: ToySetup,
    pub zetas: GridAxis,
    pub n_pop: usize,
    pub n_synth: usize,
    /// Noise draws per point in each gradient estimate.
    pub grad_repeats: usize,
    /// Minibatch size of the gradients folded into the Adam moments.
    pub precond_batch: usize,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Self {
            seed: 0,
            n_seeds: 5,
            setup: ToySetup::default(),
            zetas: GridAxis::new(0.8, 1.2, 0.05).expect("valid axis"),
            n_pop: 100_000,
            n_synth: 100_000,
            grad_repeats: 4,
            precond_batch: 256,
        }
    }
}

impl Exp2Config {
    pub fn read(r: &Reader) -> Result<Self, CliError> {
        let d = Self::default();
        let cfg = Self {
            seed: r.get("seed", d.seed)?,
            n_seeds: r.get("n_seeds", d.n_seeds)?,
            setup: ToySetup::read(r)?,
            zetas: r.get("zetas", d.zetas)?,
            n_pop: r.get("n_pop", d.n_pop)?,
            n_synth: r.get("n_synth", d.n_synth)?,
            grad_repeats: r.get("grad_repeats", d.grad_repeats)?,
            precond_batch: r.get("precond_batch", d.precond_batch)?,
        };
        for (k, v) in [("n_seeds", cfg.n_seeds), ("n_pop", cfg.n_pop), ("n_synth", cfg.n_synth), ("grad_repeats", cfg.grad_repeats), ("precond_batch", cfg.precond_batch)] {
            if v == 0 {
                return Err(CliError::Config(format!("{k} must be >= 1")));
            }
        }
        Ok(cfg)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (self.seed..self.seed + self.n_seeds as u64).collect()
    }
}

/// One `(seed, zeta)` measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineRow {
    pub seed: u64,
    pub zeta: f64,
    pub cos: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp2Outcome {
    pub zetas: Vec<f64>,
    pub per_seed: Vec<CosineRow>,
    pub mean_cos: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl Exp2Outcome {
    pub fn at(&self, zeta: f64) -> Option<f64> {
        self.zetas.iter().position(|&z| (z - zeta).abs() < 1e-9).map(|i| self.mean_cos[i])
    }

    pub fn spearman(&self) -> Option<f64> {
        spearman(&self.zetas, &self.mean_cos)
    }

    pub fn table(&self) -> ResultTable {
        let mut t = ResultTable::new(["zeta", "mean_cos", "stderr"]);
        for i in 0..self.zetas.len() {
            t.push(vec![self.zetas[i].into(), self.mean_cos[i].into(), self.stderr[i].into()]).expect("three cells");
        }
        t
    }

    pub fn per_seed_table(&self) -> ResultTable {
        let mut t = ResultTable::new(["seed", "zeta", "cos", "s"]);
        for r in &self.per_seed {
            t.push(vec![(r.seed as i64).into(), r.zeta.into(), r.cos.into(), r.s.into()]).expect("four cells");
        }
        t
    }

    pub fn summary(&self) -> ResultTable {
        let mut t = ResultTable::new(["name", "value"]);
        t.push(vec!["spearman_zeta_cos".into(), self.spearman().into()]).expect("two cells");
        t.push(vec!["mean_cos_at_1".into(), self.at(1.0).into()]).expect("two cells");
        t
    }

    pub fn write(&self, dir: &Path, meta: &RunMeta) -> Result<Vec<PathBuf>, CliError> {
        Ok(vec![
            write_table(dir, "cosine_similarity.csv", &self.table(), meta)?,
            write_table(dir, "cosine_per_seed.csv", &self.per_seed_table(), meta)?,
            write_table(dir, "summary.csv", &self.summary(), meta)?,
        ])
    }
}

/// Diagonal Adam preconditioner from one shuffled pass of minibatch
/// gradients over `data`, with the parameters held fixed.
pub fn adam_precond_from(
    mlp: &MlpParams,
    data: &[Point],
    sched: &NoiseSchedule,
    batch: usize,
    rng: &RngState,
) -> Result<Preconditioner, CliError> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut r = rng.fork("shuffle");
    r.shuffle(&mut order);
    let mut noise = rng.fork("noise");
    let mut st = AdamState::new(mlp.len());
    let mut buf = Vec::with_capacity(batch);
    for chunk in order.chunks(batch) {
        buf.clear();
        buf.extend(chunk.iter().map(|&i| data[i]));
        let (_, g) = ddpm_loss_grad(mlp, &buf, sched, &mut noise)?;
        st.observe(g.as_slice())?;
    }
    Ok(st.preconditioner()?)
}

/// Cosines for one seed, one per entry of `zetas`.
pub fn seed_cosines(cfg: &Exp2Config, cache: &BaseCache, seed: u64) -> Result<Vec<CosineRow>, CliError> {
    let base = cache.base(&cfg.setup, seed)?;
    let mlp = base.mlp()?;
    let sched = base.schedule()?;
    let rng = RngState::new(seed).fork("exp2");
    let pop = gauss_sample(&cfg.setup.truth()?, cfg.n_pop, &mut rng.fork("pop"));
    let (_, r_d) = ddpm_mean_grad(&mlp, &pop, &sched, &rng.fork("grad/real"), cfg.grad_repeats)?;
    let precond = adam_precond_from(&mlp, &pop, &sched, cfg.precond_batch, &rng.fork("precond"))?;
    let mut rows = Vec::new();
    for zeta in cfg.zetas.values() {
        let synth = sample_checkpoint(&base.checkpoint, zeta, cfg.n_synth, &rng.fork(&format!("synth/{}", tag(zeta))))?;
        let (_, r_s): (f64, ParamVector) = ddpm_mean_grad(&mlp, &synth, &sched, &rng.fork("grad/synth"), cfg.grad_repeats)?;
        let rep = alignment(&r_d, &r_s, &precond, 1.0, None)?;
        rows.push(CosineRow { seed, zeta, cos: rep.cos_sim.unwrap_or(f64::NAN), s: rep.s });
    }
    Ok(rows)
}

pub fn run(cfg: &Exp2Config, cache: &BaseCache) -> Result<Exp2Outcome, CliError> {
    let zetas = cfg.zetas.values();
    let mut per_seed = Vec::new();
    for seed in cfg.seeds() {
        per_seed.extend(seed_cosines(cfg, cache, seed)?);
    }
    let column = |i: usize| -> Vec<f64> { per_seed.iter().filter(|r| r.zeta == zetas[i]).map(|r| r.cos).collect() };
    let mean_cos = (0..zetas.len()).map(|i| mean(&column(i))).collect();
    let stderr = (0..zetas.len()).map(|i| stderr(&column(i))).collect();
    Ok(Exp2Outcome { zetas, per_seed, mean_cos, stderr })
}
