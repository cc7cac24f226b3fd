//! Synthetic data from one model used to degrade, and then extrapolate,
//! another model trained on the same real data. The recipient is also
//! fine-tuned on its own samples, so both curves share one base model.

use std::path::{Path, PathBuf};

use neon_lab::ddpm::{ddpm_finetune, MlpWidths, TrainConfig};
use neon_lab::gaussian::Point;
use neon_lab::grid::GridAxis;
use neon_lab::rng::RngState;
use neon_lab::table::ResultTable;

use crate::config::Reader;
use crate::error::CliError;
use crate::output::{tag, write_table, RunMeta};
use crate::toy::{sample_checkpoint, BaseCache, Curve, FidEval, ToySetup};

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    pub seed: u64,
    /// Donor recipe; its `hidden` widths describe model A.
    pub setup: ToySetup,
    pub recipient_hidden: Vec<usize>,
    pub zeta: f64,
    pub budget: usize,
    pub ws: GridAxis,
    pub n_synth: usize,
    pub ft_lr: f64,
    pub ft_batch: usize,
    pub fid_samples: usize,
    pub fixed_reference: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            setup: ToySetup::default(),
            recipient_hidden: vec![64, 64],
            zeta: 1.1,
            budget: 250,
            ws: GridAxis::new(-1.25, 1.25, 0.05).expect("valid axis"),
            n_synth: 1000,
            ft_lr: 1e-4,
            ft_batch: 256,
            fid_samples: 10_000,
            fixed_reference: false,
        }
    }
}

impl TransferConfig {
    pub fn read(r: &Reader) -> Result<Self, CliError> {
        let d = Self::default();
        let cfg = Self {
            seed: r.get("seed", d.seed)?,
            setup: ToySetup::read(r)?,
            recipient_hidden: r.get("recipient_hidden", d.recipient_hidden)?,
            zeta: r.get("zeta", d.zeta)?,
            budget: r.get("budget", d.budget)?,
            ws: r.get("ws", d.ws)?,
            n_synth: r.get("n_synth", d.n_synth)?,
            ft_lr: r.get("ft_lr", d.ft_lr)?,
            ft_batch: r.get("ft_batch", d.ft_batch)?,
            fid_samples: r.get("fid_samples", d.fid_samples)?,
            fixed_reference: r.get("fixed_reference", d.fixed_reference)?,
        };
        if !(cfg.zeta > 0.0 && cfg.zeta.is_finite()) {
            return Err(CliError::Config("zeta must be finite and > 0".into()));
        }
        if cfg.n_synth < 1 || cfg.fid_samples < 3 {
            return Err(CliError::Config("n_synth must be >= 1 and fid_samples >= 3".into()));
        }
        Ok(cfg)
    }

    pub fn recipient_train(&self) -> TrainConfig {
        TrainConfig {
            widths: MlpWidths { time_embed: self.setup.train.widths.time_embed, hidden: self.recipient_hidden.clone() },
            ..self.setup.train.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    /// Recipient fine-tuned on the donor's samples.
    pub recipient: Curve,
    /// Recipient fine-tuned on its own samples.
    pub self_transfer: Curve,
}

impl TransferOutcome {
    pub fn table(&self) -> ResultTable {
        let mut t = ResultTable::new(["w", "recipient_fid", "self_fid"]);
        for (i, &w) in self.recipient.ws.iter().enumerate() {
            t.push(vec![w.into(), self.recipient.fids[i].into(), self.self_transfer.fids[i].into()]).expect("three cells");
        }
        t
    }

    pub fn summary(&self) -> ResultTable {
        let mut t = ResultTable::new(["model", "argmin_w", "min_fid", "fid_at_0"]);
        for (name, c) in [("recipient", &self.recipient), ("self", &self.self_transfer)] {
            let best = c.argmin();
            t.push(vec![name.into(), best.map(|b| b.0).into(), best.map(|b| b.1).into(), c.at(0.0).into()])
                .expect("four cells");
        }
        t
    }

    pub fn write(&self, dir: &Path, meta: &RunMeta) -> Result<Vec<PathBuf>, CliError> {
        Ok(vec![
            write_table(dir, "transfer_fid_vs_w.csv", &self.table(), meta)?,
            write_table(dir, "summary.csv", &self.summary(), meta)?,
        ])
    }
}

pub fn run(cfg: &TransferConfig, cache: &BaseCache) -> Result<TransferOutcome, CliError> {
    let donor = cache.base(&cfg.setup, cfg.seed)?;
    let recipient = cache.get(&cfg.setup, cfg.seed, &cfg.recipient_train(), "recipient")?;
    let rng = RngState::new(cfg.seed).fork("transfer");
    let synth = sample_checkpoint(&donor.checkpoint, cfg.zeta, cfg.n_synth, &rng.fork(&format!("synth/{}", tag(cfg.zeta))))?;
    let eval = FidEval {
        truth: cfg.setup.truth()?,
        samples: cfg.fid_samples,
        fixed_reference: cfg.fixed_reference,
        rng: rng.fork("fid"),
    };
    let own = sample_checkpoint(&recipient.checkpoint, cfg.zeta, cfg.n_synth, &rng.fork(&format!("synth/self/{}", tag(cfg.zeta))))?;
    let ws = cfg.ws.values();
    let curve = |name: &str, data: &[Point]| -> Result<Curve, CliError> {
        let ft = ddpm_finetune(&recipient, data, cfg.ft_lr, cfg.budget, cfg.ft_batch, &rng.fork(&format!("ft/{name}")))?;
        eval.curve(&recipient.checkpoint, &ft.checkpoint, &ws, name)
    };
    Ok(TransferOutcome { recipient: curve("recipient", &synth)?, self_transfer: curve("self", &own)? })
}
