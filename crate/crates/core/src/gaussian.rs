//! Analytic 2D Gaussian generative model.
//!
//! Parameters are the mean and a lower-triangular Cholesky factor `L` with a
//! positive diagonal, flattened as `[µ₀, µ₁, L₀₀, L₁₀, L₁₁]`. Fitting is full
//! batch gradient descent on the mean negative log-likelihood; after each step
//! the diagonal of `L` is projected onto `[1e-8, ∞)`.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::grid::GridAxis;
use crate::param::{lin_comb, ParamError, ParamVector, Preconditioner};
use crate::rng::RngState;
use crate::table::{Cell, ResultTable};

pub type Point = [f64; 2];

/// Floor for the diagonal of `L` during fitting.
pub const CHOL_DIAG_FLOOR: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussError {
    #[error("covariance is not symmetric positive definite")]
    NotSpd,
    #[error("Cholesky diagonal entry {0} must be finite and > 0")]
    BadCholDiag(f64),
    #[error("a Gaussian checkpoint has 5 coordinates, got {0}")]
    BadDim(usize),
    #[error("need at least 3 non-collinear samples (got {0} samples)")]
    DegenerateData(usize),
    #[error("negative log-likelihood became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("covariance collapsed at epoch {epoch}: Cholesky diagonal hit the {CHOL_DIAG_FLOOR:e} floor")]
    CovarianceCollapse { epoch: usize },
    #[error("checkpoint kind is {0}, expected gaussian")]
    WrongKind(ModelKind),
    #[error("learning rate must be > 0, got {0}")]
    BadLr(f64),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub mean: Vector2<f64>,
    /// Lower triangular, positive diagonal.
    pub chol: Matrix2<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vector2<f64>, chol: Matrix2<f64>) -> Result<Self, GaussError> {
        for d in [chol[(0, 0)], chol[(1, 1)]] {
            if !(d.is_finite() && d > 0.0) {
                return Err(GaussError::BadCholDiag(d));
            }
        }
        if !(mean.iter().all(|v| v.is_finite()) && chol[(1, 0)].is_finite()) {
            return Err(GaussError::NotSpd);
        }
        let mut chol = chol;
        chol[(0, 1)] = 0.0;
        Ok(Self { mean, chol })
    }

    pub fn from_cov(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self, GaussError> {
        let m = Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
        Self::from_mean_cov(Vector2::new(mean[0], mean[1]), m)
    }

    pub fn from_mean_cov(mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self, GaussError> {
        let sym = (cov + cov.transpose()) * 0.5;
        let chol = sym.cholesky().ok_or(GaussError::NotSpd)?;
        Self::new(mean, chol.l())
    }

    pub fn standard() -> Self {
        Self {
            mean: Vector2::zeros(),
            chol: Matrix2::identity(),
        }
    }

    pub fn cov(&self) -> Matrix2<f64> {
        self.chol * self.chol.transpose()
    }

    pub fn to_params(&self) -> ParamVector {
        ParamVector::new(vec![
            self.mean[0],
            self.mean[1],
            self.chol[(0, 0)],
            self.chol[(1, 0)],
            self.chol[(1, 1)],
        ])
        .expect("Gaussian parameters are finite")
    }

    pub fn from_params(p: &ParamVector) -> Result<Self, GaussError> {
        if p.dim() != 5 {
            return Err(GaussError::BadDim(p.dim()));
        }
        Self::new(
            Vector2::new(p[0], p[1]),
            Matrix2::new(p[2], 0.0, p[3], p[4]),
        )
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, GaussError> {
        if c.kind != ModelKind::Gaussian {
            return Err(GaussError::WrongKind(c.kind));
        }
        Self::from_params(&c.params)
    }

    fn whiten(&self, x: Vector2<f64>) -> Vector2<f64> {
        let l = &self.chol;
        let y0 = x[0] / l[(0, 0)];
        let y1 = (x[1] - l[(1, 0)] * y0) / l[(1, 1)];
        Vector2::new(y0, y1)
    }

    fn log_det_chol(&self) -> f64 {
        self.chol[(0, 0)].ln() + self.chol[(1, 1)].ln()
    }
}

/// Maximum-likelihood fit (covariance denominator `n`).
pub fn fit_mle(data: &[Point]) -> Result<GaussianParams, GaussError> {
    let (mean, cov) = moments(data)?;
    GaussianParams::from_mean_cov(mean, cov)
}

/// Sample mean and MLE covariance; rejects fewer than 3 or collinear points.
pub fn moments(data: &[Point]) -> Result<(Vector2<f64>, Matrix2<f64>), GaussError> {
    let n = data.len();
    if n < 3 {
        return Err(GaussError::DegenerateData(n));
    }
    let nf = n as f64;
    let mut mean = Vector2::zeros();
    for p in data {
        mean += Vector2::new(p[0], p[1]);
    }
    mean /= nf;
    let mut cov = Matrix2::zeros();
    for p in data {
        let d = Vector2::new(p[0], p[1]) - mean;
        cov += d * d.transpose();
    }
    cov /= nf;
    let tr = cov.trace();
    if !(tr > 0.0 && cov.determinant() > 1e-12 * tr * tr) {
        return Err(GaussError::DegenerateData(n));
    }
    Ok((mean, cov))
}

pub fn gauss_sample(g: &GaussianParams, n: usize, rng: &mut RngState) -> Vec<Point> {
    (0..n)
        .map(|_| {
            let z = Vector2::new(rng.normal(), rng.normal());
            let x = g.mean + g.chol * z;
            [x[0], x[1]]
        })
        .collect()
}

/// Squared 2-Wasserstein distance between two Gaussians.
///
/// For 2×2 SPD `M`, `tr √M = sqrt(tr M + 2 sqrt(det M))`; with
/// `M = Σb^½ Σa Σb^½` this needs only `tr(Σa Σb)` and `det Σa · det Σb`.
pub fn w2_squared(a: &GaussianParams, b: &GaussianParams) -> f64 {
    if a == b {
        return 0.0;
    }
    let (sa, sb) = (a.cov(), b.cov());
    let dm = a.mean - b.mean;
    // Grouped so that swapping `a` and `b` is bitwise symmetric.
    let tr_ab = (sa[(0, 0)] * sb[(0, 0)] + sa[(1, 1)] * sb[(1, 1)]) + 2.0 * (sa[(1, 0)] * sb[(1, 0)]);
    let det_prod = (sa.determinant() * sb.determinant()).max(0.0);
    let cross = (tr_ab + 2.0 * det_prod.sqrt()).max(0.0).sqrt();
    (dm.norm_squared() + (sa.trace() + sb.trace()) - 2.0 * cross).max(0.0)
}

pub fn w2_gaussian(a: &GaussianParams, b: &GaussianParams) -> f64 {
    w2_squared(a, b).sqrt()
}

/// Sufficient statistics of the whitened residuals `y = L⁻¹(x − µ)`.
struct Whitened {
    mean_y: Vector2<f64>,
    second: Matrix2<f64>,
}

fn whitened_stats(g: &GaussianParams, data: &[Point]) -> Whitened {
    let nf = data.len() as f64;
    let mut mean_y = Vector2::zeros();
    let mut second = Matrix2::zeros();
    for p in data {
        let y = g.whiten(Vector2::new(p[0], p[1]) - g.mean);
        mean_y += y;
        second += y * y.transpose();
    }
    Whitened {
        mean_y: mean_y / nf,
        second: second / nf,
    }
}

fn population_stats(g: &GaussianParams, truth: &GaussianParams) -> Whitened {
    let d = truth.mean - g.mean;
    let linv = g.chol.try_inverse().expect("positive diagonal");
    let m = truth.cov() + d * d.transpose();
    Whitened {
        mean_y: g.whiten(d),
        second: linv * m * linv.transpose(),
    }
}

fn nll_from_stats(g: &GaussianParams, s: &Whitened) -> f64 {
    LN_2PI + g.log_det_chol() + 0.5 * s.second.trace()
}

fn grad_from_stats(g: &GaussianParams, s: &Whitened) -> ParamVector {
    let linv_t = g.chol.try_inverse().expect("positive diagonal").transpose();
    let gm = -(linv_t * s.mean_y);
    let gl = linv_t * (Matrix2::identity() - s.second);
    ParamVector::new(vec![gm[0], gm[1], gl[(0, 0)], gl[(1, 0)], gl[(1, 1)]])
        .expect("gradient of a valid Gaussian is finite")
}

/// Mean negative log-likelihood of `data`.
pub fn mean_nll(g: &GaussianParams, data: &[Point]) -> f64 {
    nll_from_stats(g, &whitened_stats(g, data))
}

/// Exact gradient of the mean NLL w.r.t. `[µ₀, µ₁, L₀₀, L₁₀, L₁₁]`.
pub fn gauss_nll_grad(g: &GaussianParams, data: &[Point]) -> ParamVector {
    grad_from_stats(g, &whitened_stats(g, data))
}

/// Population risk `E_{x∼truth}[−log N(x; g)]` in closed form.
pub fn population_nll(g: &GaussianParams, truth: &GaussianParams) -> f64 {
    nll_from_stats(g, &population_stats(g, truth))
}

pub fn population_nll_grad(g: &GaussianParams, truth: &GaussianParams) -> ParamVector {
    grad_from_stats(g, &population_stats(g, truth))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussFitConfig {
    pub lr: f64,
    pub epochs: usize,
}

impl Default for GaussFitConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            epochs: 2000,
        }
    }
}

/// Full-batch gradient descent on the mean NLL starting from `init`.
pub fn gauss_fit_sgd(
    data: &[Point],
    init: &GaussianParams,
    cfg: GaussFitConfig,
    rng: &RngState,
) -> Result<Checkpoint, GaussError> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(GaussError::BadLr(cfg.lr));
    }
    moments(data)?;
    let mut g = *init;
    for epoch in 0..cfg.epochs {
        let stats = whitened_stats(&g, data);
        if !nll_from_stats(&g, &stats).is_finite() {
            return Err(GaussError::Diverged { epoch });
        }
        let grad = grad_from_stats(&g, &stats);
        let next = lin_comb(1.0, &g.to_params(), -cfg.lr, &grad)?;
        let mut v = next.into_vec();
        for i in [2, 4] {
            if !v[i].is_finite() {
                return Err(GaussError::Diverged { epoch });
            }
            if v[i] <= CHOL_DIAG_FLOOR {
                return Err(GaussError::CovarianceCollapse { epoch });
            }
        }
        v[2] = v[2].max(CHOL_DIAG_FLOOR);
        v[4] = v[4].max(CHOL_DIAG_FLOOR);
        g = GaussianParams::from_params(&ParamVector::new(v)?)?;
    }
    let mut ck = Checkpoint::new(g.to_params(), ModelKind::Gaussian, rng.seed());
    ck.lr = cfg.lr;
    ck.budget_images = (cfg.epochs * data.len()) as u64;
    Ok(ck.with_meta("epochs", cfg.epochs))
}

/// `steps` preconditioned SGD updates `θ ← θ − α P ∇ℓ(batch)`, each on a
/// fresh minibatch drawn from `source`. The minibatch gradient is unbiased
/// for the population gradient under `source`.
pub fn gauss_finetune_stream(
    start: &GaussianParams,
    source: &GaussianParams,
    alpha: f64,
    steps: usize,
    batch: usize,
    precond: &Preconditioner,
    rng: &mut RngState,
) -> Result<GaussianParams, GaussError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(GaussError::BadLr(alpha));
    }
    if batch < 3 {
        return Err(GaussError::DegenerateData(batch));
    }
    let mut g = *start;
    for epoch in 0..steps {
        let xs = gauss_sample(source, batch, rng);
        let step = precond.apply(&gauss_nll_grad(&g, &xs))?;
        let next = lin_comb(1.0, &g.to_params(), -alpha, &step)?;
        if next[2] <= CHOL_DIAG_FLOOR || next[4] <= CHOL_DIAG_FLOOR {
            return Err(GaussError::CovarianceCollapse { epoch });
        }
        g = GaussianParams::from_params(&next)?;
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussGridSpec {
    pub ws: GridAxis,
    pub wo: GridAxis,
}

/// Model at `θ_r + w_s(θ_r − θ_s) + w_o(θ_o − θ_r)`, written as the affine
/// combination `(1 + w_s − w_o)θ_r − w_s θ_s + w_o θ_o` so the axis
/// landmarks (0,0), (−1,0) and (0,1) reproduce θ_r, θ_s and θ_o bit-for-bit.
pub fn oracle_plane_point(
    theta_r: &ParamVector,
    theta_s: &ParamVector,
    theta_o: &ParamVector,
    ws: f64,
    wo: f64,
) -> Result<ParamVector, ParamError> {
    let head = lin_comb(1.0 + ws - wo, theta_r, -ws, theta_s)?;
    let tail = lin_comb(0.0, theta_r, wo, theta_o)?;
    head.add(&tail)
}

/// `log W2` to `p_data` over the `(w_s, w_o)` plane; columns `ws, wo, log_w2`.
/// Points whose Cholesky diagonal is not positive are recorded as `nan`.
pub fn neon_oracle_grid(
    theta_r: &Checkpoint,
    theta_s: &Checkpoint,
    theta_o: &Checkpoint,
    spec: &GaussGridSpec,
    p_data: &GaussianParams,
) -> Result<ResultTable, GaussError> {
    for c in [theta_r, theta_s, theta_o] {
        GaussianParams::from_checkpoint(c)?;
    }
    let points: Vec<(f64, f64)> = spec
        .ws
        .values()
        .into_iter()
        .flat_map(|ws| spec.wo.values().into_iter().map(move |wo| (ws, wo)))
        .collect();
    let values: Vec<Result<f64, ParamError>> = points
        .par_iter()
        .map(|&(ws, wo)| {
            let p = oracle_plane_point(&theta_r.params, &theta_s.params, &theta_o.params, ws, wo)?;
            Ok(match GaussianParams::from_params(&p) {
                Ok(g) => w2_gaussian(&g, p_data).ln(),
                Err(_) => f64::NAN,
            })
        })
        .collect();
    let mut table = ResultTable::new(["ws", "wo", "log_w2"]);
    for (&(ws, wo), v) in points.iter().zip(values) {
        table
            .push(vec![ws.into(), wo.into(), Cell::Real(v?)])
            .expect("three cells");
    }
    Ok(table)
}
