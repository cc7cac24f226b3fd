//! Single-step categorical model over `V` symbols with exact enumeration.
//!
//! Logits live in the full space `R^V`. The Fisher matrix has the all-ones
//! vector in its kernel, so every Fisher-geometry quantity is taken on the
//! mean-zero subspace through a pseudo-inverse.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::neon::{alignment, AlignmentReport, NeonError};
use crate::param::{ParamError, ParamVector, Preconditioner};
use crate::rng::RngState;

/// Default alphabet size.
pub const DEFAULT_VOCAB: usize = 8;

/// Slack on the nucleus mass test so that `0.5 + 0.3 ≥ 0.8` is not lost to rounding.
const NUCLEUS_SLACK: f64 = 1e-12;

/// Relative cut below which an eigenvalue or a norm is treated as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CatError {
    #[error("alphabet needs at least 2 symbols, got {0}")]
    TooSmall(usize),
    #[error("not a probability vector: {0}")]
    NotProbability(String),
    #[error("symbol {x} outside 0..{v}")]
    SymbolOutOfRange { x: usize, v: usize },
    #[error("invalid sampler: {0}")]
    BadSampler(String),
    #[error("length mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Neon(#[from] NeonError),
}

/// Next-symbol distribution `softmax(logits)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalModel {
    logits: ParamVector,
}

impl CategoricalModel {
    pub fn new(logits: ParamVector) -> Result<Self, CatError> {
        if logits.dim() < 2 {
            return Err(CatError::TooSmall(logits.dim()));
        }
        Ok(Self { logits })
    }

    /// Logits `ln p`; the inverse of [`probs`](Self::probs) up to gauge.
    pub fn from_probs(p: &[f64]) -> Result<Self, CatError> {
        check_probs(p, true)?;
        Self::new(ParamVector::new(p.iter().map(|x| x.ln()).collect())?)
    }

    pub fn vocab(&self) -> usize {
        self.logits.dim()
    }

    pub fn logits(&self) -> &ParamVector {
        &self.logits
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(self.logits.as_slice())
    }

    pub fn log_probs(&self) -> Vec<f64> {
        let l = self.logits.as_slice();
        let lse = log_sum_exp(l);
        l.iter().map(|x| x - lse).collect()
    }

    /// `u_θ(x) = e_x − p_θ`, the gradient of `log p_θ(x)` in the logits.
    pub fn score_vec(&self, x: usize) -> Result<ParamVector, CatError> {
        let v = self.vocab();
        if x >= v {
            return Err(CatError::SymbolOutOfRange { x, v });
        }
        let mut u: Vec<f64> = self.probs().iter().map(|p| -p).collect();
        u[x] += 1.0;
        Ok(ParamVector::new(u)?)
    }

    /// `F = diag(p) − ppᵀ`.
    pub fn fisher(&self) -> DMatrix<f64> {
        let p = DVector::from_vec(self.probs());
        DMatrix::from_diagonal(&p) - &p * p.transpose()
    }

    /// `E_target[−log p_θ]`.
    pub fn cross_entropy(&self, target: &[f64]) -> Result<f64, CatError> {
        same_len(target.len(), self.vocab())?;
        let lp = self.log_probs();
        Ok(-target.iter().zip(&lp).map(|(t, l)| if *t == 0.0 { 0.0 } else { t * l }).sum::<f64>())
    }

    /// Gradient of [`cross_entropy`](Self::cross_entropy): `p_θ − target`.
    pub fn cross_entropy_grad(&self, target: &[f64]) -> Result<ParamVector, CatError> {
        same_len(target.len(), self.vocab())?;
        Ok(ParamVector::new(self.probs().iter().zip(target).map(|(p, t)| p - t).collect())?)
    }

    pub fn shifted(&self, eps: &ParamVector) -> Result<Self, CatError> {
        Self::new(self.logits.add(eps)?)
    }
}

fn log_sum_exp(l: &[f64]) -> f64 {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + l.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(l: &[f64]) -> Vec<f64> {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn same_len(left: usize, right: usize) -> Result<(), CatError> {
    if left != right {
        return Err(CatError::DimMismatch { left, right });
    }
    Ok(())
}

fn check_probs(p: &[f64], strict: bool) -> Result<(), CatError> {
    if p.len() < 2 {
        return Err(CatError::TooSmall(p.len()));
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0 || (strict && **x == 0.0)) {
        return Err(CatError::NotProbability(format!("entry {x}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CatError::NotProbability(format!("sums to {sum}")));
    }
    Ok(())
}

/// Whether a sampler sharpens, keeps, or flattens the model's law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    ModeSeeking,
    Neutral,
    DiversitySeeking,
}

/// Inference-time reweighting of a next-symbol distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArSampler {
    /// `q ∝ p^{1/τ}`.
    Temperature(f64),
    /// Keep the `k` most likely symbols.
    TopK(usize),
    /// Keep the smallest most-likely prefix holding mass `≥ p`.
    TopP(f64),
}

impl ArSampler {
    pub fn temperature(tau: f64) -> Result<Self, CatError> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(CatError::BadSampler(format!("temperature must be > 0, got {tau}")));
        }
        Ok(Self::Temperature(tau))
    }

    pub fn top_k(k: usize) -> Result<Self, CatError> {
        if k == 0 {
            return Err(CatError::BadSampler("top-k needs k >= 1".into()));
        }
        Ok(Self::TopK(k))
    }

    pub fn top_p(p: f64) -> Result<Self, CatError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(CatError::BadSampler(format!("top-p needs p in (0, 1], got {p}")));
        }
        Ok(Self::TopP(p))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Temperature(_) => "temperature",
            Self::TopK(_) => "top_k",
            Self::TopP(_) => "top_p",
        }
    }

    pub fn param(&self) -> f64 {
        match *self {
            Self::Temperature(t) => t,
            Self::TopK(k) => k as f64,
            Self::TopP(p) => p,
        }
    }

    pub fn regime(&self, vocab: usize) -> Regime {
        match *self {
            Self::Temperature(t) if t < 1.0 => Regime::ModeSeeking,
            Self::Temperature(t) if t > 1.0 => Regime::DiversitySeeking,
            Self::TopK(k) if k < vocab => Regime::ModeSeeking,
            Self::TopP(p) if p < 1.0 => Regime::ModeSeeking,
            _ => Regime::Neutral,
        }
    }
}

impl fmt::Display for ArSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TopK(k) => write!(f, "top_k:{k}"),
            other => write!(f, "{}:{}", other.label(), other.param()),
        }
    }
}

/// Parses `temperature:0.5`, `top_k:4` or `top_p:0.8`.
impl FromStr for ArSampler {
    type Err = CatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CatError::BadSampler(format!("cannot parse `{s}`"));
        let (kind, val) = s.trim().split_once(':').ok_or_else(bad)?;
        match kind.trim() {
            "temperature" => Self::temperature(val.trim().parse().map_err(|_| bad())?),
            "top_k" => Self::top_k(val.trim().parse().map_err(|_| bad())?),
            "top_p" => Self::top_p(val.trim().parse().map_err(|_| bad())?),
            _ => Err(bad()),
        }
    }
}

/// Symbol indices by descending probability, ties by ascending index.
fn ranked(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx
}

/// Exact reweighted law `q` induced by `s` on `probs`.
pub fn apply_sampler(probs: &[f64], s: ArSampler) -> Result<Vec<f64>, CatError> {
    check_probs(probs, false)?;
    let v = probs.len();
    let mut q = match s {
        ArSampler::Temperature(tau) => {
            let scaled: Vec<f64> = probs
                .iter()
                .map(|&p| if p > 0.0 { p.ln() / tau } else { f64::NEG_INFINITY })
                .collect();
            return Ok(softmax(&scaled));
        }
        ArSampler::TopK(k) => {
            if k > v {
                return Err(CatError::BadSampler(format!("top-k with k={k} > V={v}")));
            }
            let mut q = vec![0.0; v];
            for &i in &ranked(probs)[..k] {
                q[i] = probs[i];
            }
            q
        }
        ArSampler::TopP(mass) => {
            let order = ranked(probs);
            let mut q = vec![0.0; v];
            let mut cum = 0.0;
            let mut cutoff = None;
            for &i in &order {
                // Ties with the boundary symbol stay in.
                if let Some(c) = cutoff {
                    if probs[i] < c {
                        break;
                    }
                }
                q[i] = probs[i];
                cum += probs[i];
                if cutoff.is_none() && cum >= mass - NUCLEUS_SLACK {
                    cutoff = Some(probs[i]);
                }
            }
            q
        }
    };
    let z: f64 = q.iter().sum();
    assert!(z > 0.0, "sampler removed all probability mass");
    q.iter_mut().for_each(|x| *x /= z);
    Ok(q)
}

/// `F⁺` through a symmetric eigendecomposition, dropping the kernel.
pub fn pseudo_inverse(f: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(f.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let inv = eig.eigenvalues.map(|l| if l.abs() > RANK_TOL * top { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

fn quad(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let v = DVector::from_column_slice(x);
    (v.transpose() * m * &v)[(0, 0)]
}

/// Sampler bias around `θ*` for a model off by `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerBias {
    /// `b = −E_q[u_{θ*}] = p_{θ*} − q`.
    pub b: ParamVector,
    /// `εᵀb / (‖ε‖_F ‖F⁺b‖_F)` in the Fisher geometry at `θ*`; `None` when
    /// either side vanishes.
    pub cos_phi: Option<f64>,
    /// `E_q[εᵀu_{θ*}] = −εᵀb`.
    pub expected_b: f64,
}

/// Builds `θ_r = θ* + ε`, applies `s` exactly and measures its bias.
pub fn sampler_bias(theta_star: &CategoricalModel, eps: &ParamVector, s: ArSampler) -> Result<SamplerBias, CatError> {
    let theta_r = theta_star.shifted(eps)?;
    let q = apply_sampler(&theta_r.probs(), s)?;
    let p_star = theta_star.probs();
    let b: Vec<f64> = p_star.iter().zip(&q).map(|(p, q)| p - q).collect();
    let eb: f64 = eps.iter().zip(&b).map(|(e, b)| e * b).sum();
    let f = theta_star.fisher();
    let eps_f = quad(&f, eps.as_slice()).max(0.0).sqrt();
    let b_f = quad(&pseudo_inverse(&f), &b).max(0.0).sqrt();
    let eps_scale = eps.norm() * f.norm().sqrt();
    let cos_phi = (eps_f > RANK_TOL.sqrt() * eps_scale && eps_f > 0.0 && b_f > RANK_TOL)
        .then(|| (eb / (eps_f * b_f)).clamp(-1.0, 1.0));
    Ok(SamplerBias {
        b: ParamVector::new(b)?,
        cos_phi,
        expected_b: -eb,
    })
}

/// Exact alignment at `θ_r` for real law `p_data` and synthetic law
/// `q = s(p_{θ_r})`. Curvature `z` is exact: the cross-entropy Hessian is the
/// Fisher at `θ_r`, whatever the target.
pub fn alignment_exact(
    p_data: &[f64],
    theta_r: &CategoricalModel,
    s: ArSampler,
    precond: &Preconditioner,
    alpha: f64,
) -> Result<AlignmentReport, CatError> {
    check_probs(p_data, true)?;
    let q = apply_sampler(&theta_r.probs(), s)?;
    let r_d = theta_r.cross_entropy_grad(p_data)?;
    let r_s = theta_r.cross_entropy_grad(&q)?;
    let v = precond.apply(&r_s)?;
    let z = quad(&theta_r.fisher(), v.as_slice());
    Ok(alignment(&r_d, &r_s, precond, alpha, Some(z))?)
}

/// Mean-zero logits with i.i.d. `N(0, spread²)` entries before centring.
pub fn draw_logits(vocab: usize, spread: f64, rng: &mut RngState) -> ParamVector {
    let mut l: Vec<f64> = (0..vocab).map(|_| spread * rng.normal()).collect();
    let m = l.iter().sum::<f64>() / vocab as f64;
    l.iter_mut().for_each(|x| *x -= m);
    ParamVector::new(l).expect("finite draws")
}

/// A mean-zero error direction scaled to Euclidean norm `norm`.
pub fn draw_error(vocab: usize, norm: f64, rng: &mut RngState) -> ParamVector {
    loop {
        let d = draw_logits(vocab, 1.0, rng);
        let n = d.norm();
        if n > 1e-12 {
            return d.scale(norm / n).expect("finite");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(l: &[f64]) -> CategoricalModel {
        CategoricalModel::new(ParamVector::new(l.to_vec()).unwrap()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn sampler_examples() {
        let p = [0.5, 0.3, 0.2];
        assert!(close(&apply_sampler(&p, ArSampler::Temperature(1.0)).unwrap(), &p, 1e-15));
        assert_eq!(apply_sampler(&p, ArSampler::TopK(3)).unwrap(), p.to_vec());
        let q = apply_sampler(&p, ArSampler::TopP(0.7)).unwrap();
        assert!(close(&q, &[0.625, 0.375, 0.0], 1e-15), "{q:?}");
        let q = apply_sampler(&p, ArSampler::TopP(0.8)).unwrap();
        assert!(close(&q, &[0.625, 0.375, 0.0], 1e-15), "{q:?}");
        assert!(close(&apply_sampler(&p, ArSampler::TopK(1)).unwrap(), &[1.0, 0.0, 0.0], 0.0));
        assert!(apply_sampler(&p, ArSampler::TopK(4)).is_err());
    }

    #[test]
    fn ties_at_the_boundary() {
        // Nucleus: the tied pair at the cutoff stays together.
        let q = apply_sampler(&[0.4, 0.2, 0.2, 0.1, 0.1], ArSampler::TopP(0.5)).unwrap();
        assert!(close(&q, &[0.5, 0.25, 0.25, 0.0, 0.0], 1e-15), "{q:?}");
        // Top-k: the lowest index wins a tie.
        let q = apply_sampler(&[0.2, 0.4, 0.2, 0.2], ArSampler::TopK(2)).unwrap();
        assert!(close(&q, &[1.0 / 3.0, 2.0 / 3.0, 0.0, 0.0], 1e-15));
    }

    #[test]
    fn sampler_parsing() {
        assert_eq!("temperature:0.5".parse::<ArSampler>().unwrap(), ArSampler::Temperature(0.5));
        assert_eq!("top_k:4".parse::<ArSampler>().unwrap(), ArSampler::TopK(4));
        assert_eq!("top_p:0.8".parse::<ArSampler>().unwrap().to_string(), "top_p:0.8");
        for bad in ["top_k:0", "top_p:1.5", "temperature:-1", "greedy:1", "top_k"] {
            assert!(bad.parse::<ArSampler>().is_err(), "{bad}");
        }
        assert_eq!(ArSampler::TopK(8).regime(8), Regime::Neutral);
        assert_eq!(ArSampler::Temperature(1.5).regime(8), Regime::DiversitySeeking);
    }

    #[test]
    fn near_zero_temperature_is_argmax() {
        let p = [0.1, 0.35, 0.3, 0.25];
        let q = apply_sampler(&p, ArSampler::Temperature(1e-3)).unwrap();
        assert!(close(&q, &[0.0, 1.0, 0.0, 0.0], 1e-12), "{q:?}");
    }

    #[test]
    fn score_examples() {
        let m = model(&[0.0, 0.0]);
        assert_eq!(m.score_vec(0).unwrap().as_slice(), &[0.5, -0.5]);
        assert!(m.score_vec(2).is_err());
        let m = model(&[0.3, -1.2, 0.8, 0.0, 2.0]);
        let p = m.probs();
        let mut mean = [0.0; 5];
        for (x, px) in p.iter().enumerate() {
            for (acc, u) in mean.iter_mut().zip(m.score_vec(x).unwrap().iter()) {
                *acc += px * u;
            }
        }
        assert!(mean.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn score_matches_finite_differences() {
        let l = [0.3, -1.2, 0.8, 0.0, 2.0];
        let h = 1e-6;
        for x in 0..5 {
            let u = model(&l).score_vec(x).unwrap();
            for j in 0..5 {
                let (mut a, mut b) = (l, l);
                a[j] += h;
                b[j] -= h;
                let fd = (model(&a).log_probs()[x] - model(&b).log_probs()[x]) / (2.0 * h);
                assert!((fd - u[j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fisher_examples() {
        let f = model(&[0.0, 0.0]).fisher();
        assert!(close(f.as_slice(), &[0.25, -0.25, -0.25, 0.25], 1e-15));
        let m = model(&[0.3, -1.2, 0.8, 0.0, 2.0]);
        let f = m.fisher();
        assert!((&f * DVector::from_element(5, 1.0)).norm() < 1e-15);
        let mut enumerated = DMatrix::zeros(5, 5);
        for (x, px) in m.probs().iter().enumerate() {
            let u = DVector::from_vec(m.score_vec(x).unwrap().into_vec());
            enumerated += *px * &u * u.transpose();
        }
        assert!((enumerated - &f).norm() < 1e-15);
        assert!(SymmetricEigen::new(f).eigenvalues.iter().all(|l| *l > -1e-15));
    }

    #[test]
    fn pseudo_inverse_matches_chi_square_form() {
        // For mean-zero b, F x = b is solved by x = b/p, so bᵀF⁺b = Σ b²/p.
        let m = model(&[0.3, -1.2, 0.8, 0.0, 2.0]);
        let p = m.probs();
        let b = [0.1, -0.05, 0.02, -0.04, -0.03];
        let chi: f64 = b.iter().zip(&p).map(|(b, p)| b * b / p).sum();
        assert!((quad(&pseudo_inverse(&m.fisher()), &b) - chi).abs() < 1e-10 * chi);
    }

    #[test]
    fn zero_error_has_no_angle() {
        let star = model(&[0.3, -0.2, 0.1, 0.0]);
        let bias = sampler_bias(&star, &ParamVector::zeros(4), ArSampler::Temperature(0.5)).unwrap();
        assert_eq!(bias.expected_b, 0.0);
        assert_eq!(bias.cos_phi, None);
        // A neutral sampler on an exact model leaves no bias at all.
        let bias = sampler_bias(&star, &ParamVector::zeros(4), ArSampler::TopK(4)).unwrap();
        assert!(bias.b.norm() < 1e-15);
        assert_eq!(bias.cos_phi, None);
    }

    fn near_uniform_instance(seed: u64) -> (CategoricalModel, ParamVector) {
        let mut rng = RngState::new(seed);
        let star = CategoricalModel::new(draw_logits(DEFAULT_VOCAB, 0.01, &mut rng)).unwrap();
        (star, draw_error(DEFAULT_VOCAB, 0.05, &mut rng))
    }

    #[test]
    fn cold_temperature_angle_is_obtuse() {
        for seed in 0..100 {
            let (star, eps) = near_uniform_instance(seed);
            let bias = sampler_bias(&star, &eps, ArSampler::Temperature(0.5)).unwrap();
            assert!(bias.cos_phi.unwrap() < 0.0, "seed {seed}: {bias:?}");
        }
    }

    #[test]
    fn hot_temperature_angle_near_uniform() {
        // Near a uniform law the bias is second order in ε and
        // E_q[B] ≈ εᵀFε/τ + (1/τ − 1)εᵀFθ*, positive for every τ.
        // A flattening sampler therefore does not flip the angle here.
        for seed in 0..100 {
            let (star, eps) = near_uniform_instance(seed);
            let bias = sampler_bias(&star, &eps, ArSampler::Temperature(2.0)).unwrap();
            let f = star.fisher();
            let approx = quad(&f, eps.as_slice()) / 2.0
                - 0.5 * (DVector::from_column_slice(eps.as_slice()).transpose() * &f * DVector::from_column_slice(star.logits().as_slice()))[(0, 0)];
            assert!(bias.expected_b > 0.0 && bias.cos_phi.unwrap() < 0.0, "seed {seed}");
            assert!((bias.expected_b - approx).abs() < 0.1 * approx.abs(), "seed {seed}: {} vs {approx}", bias.expected_b);
        }
    }

    #[test]
    fn mode_seeking_statistics() {
        for s in [ArSampler::Temperature(0.5), ArSampler::TopK(4), ArSampler::TopP(0.8)] {
            let (mut neg, mut sum_b) = (0, 0.0);
            for seed in 0..100 {
                let (star, eps) = near_uniform_instance(1000 + seed);
                let bias = sampler_bias(&star, &eps, s).unwrap();
                neg += usize::from(bias.cos_phi.is_some_and(|c| c < 0.0));
                sum_b += bias.expected_b;
            }
            assert!(neg >= 95, "{s}: {neg}/100");
            assert!(sum_b > 0.0, "{s}: {sum_b}");
        }
    }

    #[test]
    fn expected_b_vanishes_linearly() {
        // Generic θ*, so the sampled law differs from p_{θ*} at order one.
        let mut rng = RngState::new(31);
        for _ in 0..20 {
            let star = CategoricalModel::new(draw_logits(DEFAULT_VOCAB, 1.0, &mut rng)).unwrap();
            let eps = draw_error(DEFAULT_VOCAB, 1.0, &mut rng);
            for s in [ArSampler::Temperature(0.5), ArSampler::Temperature(1.5)] {
                let pts: Vec<(f64, f64)> = [1e-7, 1e-6, 1e-5]
                    .iter()
                    .map(|&c| {
                        let b = sampler_bias(&star, &eps.scale(c).unwrap(), s).unwrap().expected_b;
                        (c.ln(), b.abs().ln())
                    })
                    .collect();
                let n = pts.len() as f64;
                let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
                let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
                let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
                let slope = sxy / sxx;
                assert!((slope - 1.0).abs() <= 0.1, "{s}: slope {slope}");
            }
        }
    }

    #[test]
    fn alignment_at_the_mle_is_stationary() {
        let p_data = [0.4, 0.1, 0.3, 0.2];
        let mle = CategoricalModel::from_probs(&p_data).unwrap();
        let rep = alignment_exact(&p_data, &mle, ArSampler::Temperature(1.0), &Preconditioner::identity(4), 0.1).unwrap();
        assert!(rep.r_d.norm() < 1e-15);
        assert_eq!(rep.s, 0.0);
    }

    #[test]
    fn alignment_signs_near_the_mle() {
        for seed in 0..50 {
            let (star, eps) = near_uniform_instance(500 + seed);
            let p_data = star.probs();
            let theta_r = star.shifted(&eps).unwrap();
            let id = Preconditioner::identity(DEFAULT_VOCAB);
            let cold = alignment_exact(&p_data, &theta_r, ArSampler::Temperature(0.7), &id, 0.1).unwrap();
            let hot = alignment_exact(&p_data, &theta_r, ArSampler::Temperature(1.5), &id, 0.1).unwrap();
            assert!(cold.s < 0.0, "seed {seed}");
            assert!(hot.s > 0.0, "seed {seed}");
            assert!(cold.w_star.unwrap() > 0.0 && hot.w_star.unwrap() < 0.0);
        }
    }

    #[test]
    fn exact_curvature_matches_finite_differences() {
        let mut rng = RngState::new(2);
        let star = CategoricalModel::new(draw_logits(6, 1.0, &mut rng)).unwrap();
        let theta_r = star.shifted(&draw_error(6, 0.05, &mut rng)).unwrap();
        let p_data = star.probs();
        let p = Preconditioner::new(vec![1.0, 2.0, 0.5, 1.5, 1.0, 3.0]).unwrap();
        let rep = alignment_exact(&p_data, &theta_r, ArSampler::TopP(0.8), &p, 0.1).unwrap();
        let dir = p.apply(&rep.r_s).unwrap();
        let grad = |t: &ParamVector| CategoricalModel::new(t.clone()).and_then(|m| m.cross_entropy_grad(&p_data));
        let z = crate::neon::directional_curvature(grad, theta_r.logits(), &dir, crate::neon::HVP_STEP).unwrap();
        assert!((z - rep.z.unwrap()).abs() < 1e-8 * rep.z.unwrap().abs().max(1e-12), "{z} vs {:?}", rep.z);
    }

    proptest! {
        #[test]
        fn sampler_output_is_a_distribution(
            raw in prop::collection::vec(0.0f64..1.0, 2..12),
            tau in 0.05f64..5.0,
            kfrac in 0.0f64..1.0,
            mass in 0.01f64..1.0,
        ) {
            let z: f64 = raw.iter().sum();
            prop_assume!(z > 1e-3);
            let p: Vec<f64> = raw.iter().map(|x| x / z).collect();
            let k = 1 + ((p.len() - 1) as f64 * kfrac) as usize;
            for s in [ArSampler::Temperature(tau), ArSampler::TopK(k), ArSampler::TopP(mass)] {
                let q = apply_sampler(&p, s).unwrap();
                prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(q.iter().all(|x| *x >= 0.0 && x.is_finite()));
                // Support of q never includes a symbol that p excludes.
                prop_assert!(q.iter().zip(&p).all(|(q, p)| *p > 0.0 || *q == 0.0));
            }
        }

        #[test]
        fn temperature_reweighting_is_monotone(
            logits in prop::collection::vec(-3.0f64..3.0, 2..10),
            tau in 0.1f64..4.0,
        ) {
            let p = model(&logits).probs();
            let q = apply_sampler(&p, ArSampler::Temperature(tau)).unwrap();
            for i in 0..p.len() {
                for j in 0..p.len() {
                    if p[i] > p[j] {
                        let (rq, rp) = (q[i] / q[j], p[i] / p[j]);
                        if tau < 1.0 {
                            prop_assert!(rq >= rp * (1.0 - 1e-12));
                        } else {
                            prop_assert!(rq <= rp * (1.0 + 1e-12));
                        }
                    }
                }
            }
        }

        #[test]
        fn probabilities_are_normalized(logits in prop::collection::vec(-50.0f64..50.0, 2..16)) {
            let p = model(&logits).probs();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
