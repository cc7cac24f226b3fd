//! FID along the merge for each score scale and fine-tune budget.

use std::path::{Path, PathBuf};

use neon_lab::checkpoint::Checkpoint;
use neon_lab::ddpm::ddpm_finetune;
use neon_lab::grid::GridAxis;
use neon_lab::rng::RngState;
use neon_lab::table::ResultTable;

use crate::ckpt_io::write_checkpoint;
use crate::config::Reader;
use crate::error::CliError;
use crate::output::{tag, write_table, RunMeta};
use crate::toy::{sample_checkpoint, BaseCache, Curve, FidEval, ToySetup};

#[derive(Debug, Clone, PartialEq)]
pub struct Exp1Config {
    pub seed: u64,
    pub setup: ToySetup,
    pub zetas: Vec<f64>,
    /// Fine-tune budgets in passes over the synthetic set.
    pub budgets: Vec<usize>,
    pub ws: GridAxis,
    pub n_synth: usize,
    pub ft_lr: f64,
    pub ft_batch: usize,
    pub fid_samples: usize,
    pub fixed_reference: bool,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Self {
            seed: 0,
            setup: ToySetup::default(),
            zetas: vec![0.9, 1.1],
            budgets: vec![50, 250],
            ws: GridAxis::new(-1.25, 1.25, 0.05).expect("valid axis"),
            n_synth: 1000,
            ft_lr: 1e-4,
            ft_batch: 256,
            fid_samples: 10_000,
            fixed_reference: false,
        }
    }
}

impl Exp1Config {
    pub fn read(r: &Reader) -> Result<Self, CliError> {
        let d = Self::default();
        let cfg = Self {
            seed: r.get("seed", d.seed)?,
            setup: ToySetup::read(r)?,
            zetas: r.get("zetas", d.zetas)?,
            budgets: r.get("budgets", d.budgets)?,
            ws: r.get("ws", d.ws)?,
            n_synth: r.get("n_synth", d.n_synth)?,
            ft_lr: r.get("ft_lr", d.ft_lr)?,
            ft_batch: r.get("ft_batch", d.ft_batch)?,
            fid_samples: r.get("fid_samples", d.fid_samples)?,
            fixed_reference: r.get("fixed_reference", d.fixed_reference)?,
        };
        if cfg.n_synth < 1 || cfg.fid_samples < 3 {
            return Err(CliError::Config("n_synth must be >= 1 and fid_samples >= 3".into()));
        }
        if cfg.zetas.iter().any(|z| !(*z > 0.0 && z.is_finite())) {
            return Err(CliError::Config("zetas must be finite and > 0".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp1Curve {
    pub zeta: f64,
    pub budget: usize,
    pub finetune_images: u64,
    pub theta_s: Checkpoint,
    pub curve: Curve,
}

impl Exp1Curve {
    pub fn stem(&self) -> String {
        format!("zeta{}_budget{}", tag(self.zeta), self.budget)
    }

    pub fn file_name(&self) -> String {
        format!("fid_vs_w_{}.csv", self.stem())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp1Outcome {
    pub seed: u64,
    pub base: Checkpoint,
    pub curves: Vec<Exp1Curve>,
}

impl Exp1Outcome {
    pub fn summary(&self) -> ResultTable {
        let mut t = ResultTable::new(["zeta", "budget", "finetune_images", "argmin_w", "min_fid", "fid_at_0"]);
        for c in &self.curves {
            let best = c.curve.argmin();
            t.push(vec![
                c.zeta.into(),
                c.budget.into(),
                (c.finetune_images as i64).into(),
                best.map(|b| b.0).into(),
                best.map(|b| b.1).into(),
                c.curve.at(0.0).into(),
            ])
            .expect("six cells");
        }
        t
    }

    pub fn write(&self, dir: &Path, meta: &RunMeta) -> Result<Vec<PathBuf>, CliError> {
        let mut out = Vec::new();
        for c in &self.curves {
            let m = meta.clone().with("zeta", c.zeta).with("budget_epochs", c.budget).with("finetune_images", c.finetune_images);
            out.push(write_table(dir, &c.file_name(), &c.curve.table(), &m)?);
            let path = dir.join(format!("finetuned_{}.ckpt", c.stem()));
            write_checkpoint(&path, &c.theta_s)?;
            out.push(path);
        }
        let path = dir.join("base.ckpt");
        write_checkpoint(&path, &self.base)?;
        out.push(path);
        out.push(write_table(dir, "summary.csv", &self.summary(), meta)?);
        Ok(out)
    }
}

pub fn run(cfg: &Exp1Config, cache: &BaseCache) -> Result<Exp1Outcome, CliError> {
    let base = cache.base(&cfg.setup, cfg.seed)?;
    let rng = RngState::new(cfg.seed).fork("exp1");
    let eval = FidEval {
        truth: cfg.setup.truth()?,
        samples: cfg.fid_samples,
        fixed_reference: cfg.fixed_reference,
        rng: rng.fork("fid"),
    };
    let ws = cfg.ws.values();
    let mut curves = Vec::new();
    for &zeta in &cfg.zetas {
        let synth = sample_checkpoint(&base.checkpoint, zeta, cfg.n_synth, &rng.fork(&format!("synth/{}", tag(zeta))))?;
        for &budget in &cfg.budgets {
            let ft_rng = rng.fork(&format!("ft/{}/{budget}", tag(zeta)));
            let theta_s = ddpm_finetune(&base, &synth, cfg.ft_lr, budget, cfg.ft_batch, &ft_rng)?;
            let label = format!("zeta{}/budget{budget}", tag(zeta));
            let curve = eval.curve(&base.checkpoint, &theta_s.checkpoint, &ws, &label)?;
            curves.push(Exp1Curve {
                zeta,
                budget,
                finetune_images: budget as u64 * synth.len() as u64,
                theta_s: theta_s.checkpoint,
                curve,
            });
        }
    }
    Ok(Exp1Outcome { seed: cfg.seed, base: base.checkpoint.clone(), curves })
}
