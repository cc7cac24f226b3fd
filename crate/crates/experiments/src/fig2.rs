//! The two-direction Gaussian grid: a base fit on real data, a degraded fit
//! on mode-seeking synthetic data, an oracle fit on more real data, and
//! `log W2` to the truth over the plane they span.

use std::path::{Path, PathBuf};

use neon_lab::checkpoint::Checkpoint;
use neon_lab::gaussian::{
    gauss_fit_sgd, gauss_sample, neon_oracle_grid, GaussFitConfig, GaussGridSpec, GaussianParams,
};
use neon_lab::grid::GridAxis;
use neon_lab::rng::RngState;
use neon_lab::table::ResultTable;

use crate::ckpt_io::write_checkpoint;
use crate::config::Reader;
use crate::error::CliError;
use crate::output::{write_table, RunMeta};

#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Config {
    pub seed: u64,
    pub mu_true: [f64; 2],
    pub sigma_true: [[f64; 2]; 2],
    pub n_base: usize,
    pub n_synth: usize,
    /// Real points for the oracle fit, the base set included.
    pub n_oracle: usize,
    /// Covariance factor applied when sampling the synthetic set.
    pub shrink: f64,
    pub fit: GaussFitConfig,
    pub grid: GaussGridSpec,
}

impl Default for Fig2Config {
    fn default() -> Self {
        let axis = GridAxis::new(-1.0, 2.0, 0.1).expect("valid axis");
        Self {
            seed: 0,
            mu_true: [0.0, 0.0],
            sigma_true: [[2.0, 1.0], [1.0, 2.0]],
            n_base: 1000,
            n_synth: 100_000,
            n_oracle: 5000,
            shrink: 0.9,
            fit: GaussFitConfig::default(),
            grid: GaussGridSpec { ws: axis, wo: axis },
        }
    }
}

impl Fig2Config {
    pub fn read(r: &Reader) -> Result<Self, CliError> {
        let d = Self::default();
        let cfg = Self {
            seed: r.get("seed", d.seed)?,
            mu_true: r.get("mu_true", d.mu_true)?,
            sigma_true: r.get("sigma_true", d.sigma_true)?,
            n_base: r.get("n_base", d.n_base)?,
            n_synth: r.get("n_synth", d.n_synth)?,
            n_oracle: r.get("n_oracle", d.n_oracle)?,
            shrink: r.get("shrink", d.shrink)?,
            fit: GaussFitConfig { lr: r.get("lr", d.fit.lr)?, epochs: r.get("epochs", d.fit.epochs)? },
            grid: GaussGridSpec { ws: r.get("ws", d.grid.ws)?, wo: r.get("wo", d.grid.wo)? },
        };
        if cfg.n_oracle < cfg.n_base {
            return Err(CliError::Config("n_oracle must include the n_base real points".into()));
        }
        if !(cfg.shrink > 0.0 && cfg.shrink.is_finite()) {
            return Err(CliError::Config(format!("shrink must be > 0, got {}", cfg.shrink)));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Outcome {
    pub theta_r: Checkpoint,
    pub theta_s: Checkpoint,
    pub theta_o: Checkpoint,
    pub grid: ResultTable,
    pub origin: f64,
    /// Best `(ws, log_w2)` with `wo = 0` and `ws > 0`.
    pub neon_axis_min: Option<(f64, f64)>,
    /// Best `(wo, log_w2)` with `ws = 0` and `wo > 0`.
    pub oracle_axis_min: Option<(f64, f64)>,
    pub grid_min: Option<(f64, f64, f64)>,
}

impl Fig2Outcome {
    pub fn neon_improves(&self) -> bool {
        self.neon_axis_min.is_some_and(|(_, v)| v < self.origin)
    }

    pub fn summary(&self) -> ResultTable {
        let mut t = ResultTable::new(["name", "ws", "wo", "log_w2"]);
        let mut row = |name: &str, ws: Option<f64>, wo: Option<f64>, v: Option<f64>| {
            t.push(vec![name.into(), ws.into(), wo.into(), v.into()]).expect("four cells");
        };
        row("origin", Some(0.0), Some(0.0), Some(self.origin));
        row("neon_axis_min", self.neon_axis_min.map(|m| m.0), Some(0.0), self.neon_axis_min.map(|m| m.1));
        row("oracle_axis_min", Some(0.0), self.oracle_axis_min.map(|m| m.0), self.oracle_axis_min.map(|m| m.1));
        row("grid_min", self.grid_min.map(|m| m.0), self.grid_min.map(|m| m.1), self.grid_min.map(|m| m.2));
        t
    }

    pub fn write(&self, dir: &Path, meta: &RunMeta) -> Result<Vec<PathBuf>, CliError> {
        let mut out = vec![
            write_table(dir, "grid.csv", &self.grid, meta)?,
            write_table(dir, "summary.csv", &self.summary(), meta)?,
        ];
        for (name, c) in [("theta_r", &self.theta_r), ("theta_s", &self.theta_s), ("theta_o", &self.theta_o)] {
            let path = dir.join(format!("{name}.ckpt"));
            write_checkpoint(&path, c)?;
            out.push(path);
        }
        Ok(out)
    }
}

fn shrunk(g: &GaussianParams, factor: f64) -> Result<GaussianParams, CliError> {
    Ok(GaussianParams::new(g.mean, g.chol * factor.sqrt())?)
}

pub fn run(cfg: &Fig2Config) -> Result<Fig2Outcome, CliError> {
    let truth = GaussianParams::from_cov(cfg.mu_true, cfg.sigma_true)
        .map_err(|e| CliError::Config(format!("sigma_true: {e}")))?;
    let rng = RngState::new(cfg.seed);
    let real = gauss_sample(&truth, cfg.n_base, &mut rng.fork("real"));
    let theta_r = gauss_fit_sgd(&real, &GaussianParams::standard(), cfg.fit, &rng.fork("fit/base"))?;
    let g_r = GaussianParams::from_checkpoint(&theta_r)?;

    let synth = gauss_sample(&shrunk(&g_r, cfg.shrink)?, cfg.n_synth, &mut rng.fork("synth"));
    let theta_s = gauss_fit_sgd(&synth, &g_r, cfg.fit, &rng.fork("fit/synthetic"))?;

    let mut oracle = real;
    oracle.extend(gauss_sample(&truth, cfg.n_oracle - cfg.n_base, &mut rng.fork("real/extra")));
    let theta_o = gauss_fit_sgd(&oracle, &g_r, cfg.fit, &rng.fork("fit/oracle"))?;

    let grid = neon_oracle_grid(&theta_r, &theta_s, &theta_o, &cfg.grid, &truth)?;
    let cols = (grid.real_column("ws")?, grid.real_column("wo")?, grid.real_column("log_w2")?);
    let points: Vec<(f64, f64, f64)> = cols
        .0
        .into_iter()
        .zip(cols.1)
        .zip(cols.2)
        .filter_map(|((a, b), c)| Some((a?, b?, c?)))
        .filter(|p| p.2.is_finite())
        .collect();
    let best = |keep: &dyn Fn(&(f64, f64, f64)) -> bool| {
        points.iter().filter(|p| keep(p)).fold(None, |acc: Option<(f64, f64, f64)>, &p| match acc {
            Some(a) if a.2 <= p.2 => acc,
            _ => Some(p),
        })
    };
    let origin = neon_lab::gaussian::w2_gaussian(&g_r, &truth).ln();
    Ok(Fig2Outcome {
        origin,
        neon_axis_min: best(&|p| p.1 == 0.0 && p.0 > 0.0).map(|p| (p.0, p.2)),
        oracle_axis_min: best(&|p| p.0 == 0.0 && p.1 > 0.0).map(|p| (p.1, p.2)),
        grid_min: best(&|_| true),
        grid,
        theta_r,
        theta_s,
        theta_o,
    })
}
