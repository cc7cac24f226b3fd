//! Exact enumeration of sampler bias and gradient alignment on a single-step
//! categorical model, over random draws of the truth and the model error.

use std::path::{Path, PathBuf};

use neon_lab::categorical::{
    alignment_exact, draw_error, draw_logits, sampler_bias, ArSampler, CategoricalModel, Regime, DEFAULT_VOCAB,
};
use neon_lab::param::Preconditioner;
use neon_lab::rng::RngState;
use neon_lab::table::ResultTable;

use crate::config::Reader;
use crate::error::CliError;
use crate::output::{write_table, RunMeta};

#[derive(Debug, Clone, PartialEq)]
pub struct ArConfig {
    pub seed: u64,
    pub vocab: usize,
    /// Euclidean norm of the model error `ε`.
    pub eps: f64,
    pub draws: usize,
    /// Spread of the true logits; small values keep `θ*` near uniform.
    pub spread: f64,
    pub samplers: Vec<ArSampler>,
}

impl Default for ArConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab: DEFAULT_VOCAB,
            eps: 0.05,
            draws: 100,
            spread: 0.01,
            samplers: vec![
                ArSampler::Temperature(0.5),
                ArSampler::TopK(4),
                ArSampler::TopP(0.8),
                ArSampler::Temperature(1.5),
                ArSampler::TopK(DEFAULT_VOCAB),
            ],
        }
    }
}

impl ArConfig {
    pub fn read(r: &Reader) -> Result<Self, CliError> {
        let d = Self::default();
        let cfg = Self {
            seed: r.get("seed", d.seed)?,
            vocab: r.get("vocab", d.vocab)?,
            eps: r.get("eps", d.eps)?,
            draws: r.get("draws", d.draws)?,
            spread: r.get("spread", d.spread)?,
            samplers: r.get("samplers", d.samplers)?,
        };
        if cfg.vocab < 2 || cfg.draws == 0 {
            return Err(CliError::Config("vocab must be >= 2 and draws >= 1".into()));
        }
        if !(cfg.eps >= 0.0 && cfg.eps.is_finite() && cfg.spread >= 0.0 && cfg.spread.is_finite()) {
            return Err(CliError::Config("eps and spread must be finite and >= 0".into()));
        }
        if let Some(s) = cfg.samplers.iter().find(|s| matches!(s, ArSampler::TopK(k) if *k > cfg.vocab)) {
            return Err(CliError::Config(format!("{s} exceeds the vocabulary size {}", cfg.vocab)));
        }
        Ok(cfg)
    }
}

/// Whether the sign of `s` matches the sampler's regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignCheck {
    Agrees,
    Disagrees,
    Neutral,
}

impl SignCheck {
    fn of(regime: Regime, s: f64) -> Self {
        let ok = match regime {
            Regime::ModeSeeking => s < 0.0,
            Regime::DiversitySeeking => s > 0.0,
            Regime::Neutral => return Self::Neutral,
        };
        if ok {
            Self::Agrees
        } else {
            Self::Disagrees
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Agrees => "true",
            Self::Disagrees => "false",
            Self::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArRow {
    pub sampler: ArSampler,
    pub draw: usize,
    pub cos_phi: Option<f64>,
    /// `E_q[εᵀu_{θ*}]`.
    pub expected_b: f64,
    pub s: f64,
    pub sign: SignCheck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArOutcome {
    pub vocab: usize,
    pub rows: Vec<ArRow>,
}

impl ArOutcome {
    pub fn rows_for(&self, s: ArSampler) -> impl Iterator<Item = &ArRow> {
        self.rows.iter().filter(move |r| r.sampler == s)
    }

    /// Fraction of draws whose sign matches the regime; `None` when neutral.
    pub fn agreement(&self, s: ArSampler) -> Option<f64> {
        let rows: Vec<&ArRow> = self.rows_for(s).collect();
        if rows.is_empty() || s.regime(self.vocab) == Regime::Neutral {
            return None;
        }
        Some(rows.iter().filter(|r| r.sign == SignCheck::Agrees).count() as f64 / rows.len() as f64)
    }

    pub fn table(&self) -> ResultTable {
        let mut t = ResultTable::new(["sampler", "param", "draw", "cos_phi", "s", "sign_agrees"]);
        for r in &self.rows {
            t.push(vec![
                r.sampler.label().into(),
                r.sampler.param().into(),
                r.draw.into(),
                r.cos_phi.into(),
                r.s.into(),
                r.sign.as_str().into(),
            ])
            .expect("six cells");
        }
        t
    }

    pub fn summary(&self) -> ResultTable {
        let mut samplers: Vec<ArSampler> = Vec::new();
        for r in &self.rows {
            if !samplers.contains(&r.sampler) {
                samplers.push(r.sampler);
            }
        }
        let mut t = ResultTable::new(["sampler", "param", "regime", "draws", "frac_sign_agrees", "frac_cos_phi_negative", "mean_expected_b"]);
        for s in samplers {
            let rows: Vec<&ArRow> = self.rows_for(s).collect();
            let n = rows.len() as f64;
            let neg = rows.iter().filter(|r| r.cos_phi.is_some_and(|c| c < 0.0)).count() as f64 / n;
            let mean_b = rows.iter().map(|r| r.expected_b).sum::<f64>() / n;
            let regime = match s.regime(self.vocab) {
                Regime::ModeSeeking => "mode_seeking",
                Regime::Neutral => "neutral",
                Regime::DiversitySeeking => "diversity_seeking",
            };
            t.push(vec![
                s.label().into(),
                s.param().into(),
                regime.into(),
                rows.len().into(),
                self.agreement(s).into(),
                neg.into(),
                mean_b.into(),
            ])
            .expect("seven cells");
        }
        t
    }

    pub fn write(&self, dir: &Path, meta: &RunMeta) -> Result<Vec<PathBuf>, CliError> {
        Ok(vec![
            write_table(dir, "ar_alignment.csv", &self.table(), meta)?,
            write_table(dir, "summary.csv", &self.summary(), meta)?,
        ])
    }
}

/// The truth `θ*` and error `ε` of draw `i`; every sampler sees the same draws.
pub fn draw_instance(cfg: &ArConfig, i: usize) -> Result<(CategoricalModel, neon_lab::param::ParamVector), CliError> {
    let mut rng = RngState::new(cfg.seed).fork(&format!("draw{i}"));
    let star = CategoricalModel::new(draw_logits(cfg.vocab, cfg.spread, &mut rng))?;
    Ok((star, draw_error(cfg.vocab, cfg.eps, &mut rng)))
}

pub fn run(cfg: &ArConfig) -> Result<ArOutcome, CliError> {
    let id = Preconditioner::identity(cfg.vocab);
    let mut rows = Vec::new();
    for &sampler in &cfg.samplers {
        for draw in 0..cfg.draws {
            let (star, eps) = draw_instance(cfg, draw)?;
            let bias = sampler_bias(&star, &eps, sampler)?;
            let rep = alignment_exact(&star.probs(), &star.shifted(&eps)?, sampler, &id, 1.0)?;
            rows.push(ArRow {
                sampler,
                draw,
                cos_phi: bias.cos_phi,
                expected_b: bias.expected_b,
                s: rep.s,
                sign: SignCheck::of(sampler.regime(cfg.vocab), rep.s),
            });
        }
    }
    Ok(ArOutcome { vocab: cfg.vocab, rows })
}
