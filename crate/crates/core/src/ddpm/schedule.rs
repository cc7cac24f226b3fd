use std::f64::consts::FRAC_PI_2;

use super::DdpmError;

/// Offset `s` of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Default cap on `β_t`.
pub const MAX_BETA: f64 = 0.999;
/// Cap used by the toy protocol; see [`cosine_schedule_capped`].
pub const TOY_BETA_CAP: f64 = 0.99;

/// Per-step noise levels, indexed `0..T` from least to most noisy.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    beta: Vec<f64>,
    beta_cap: f64,
}

fn cosine_f(u: f64) -> f64 {
    let c = ((u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2).cos();
    c * c
}

/// Cosine schedule: `ᾱ_t = f((t+1)/T) / f(0)`, betas from consecutive ratios
/// clamped to [`MAX_BETA`], then `ᾱ` rebuilt as the running product of `1 − β`
/// so the two arrays agree exactly.
pub fn cosine_schedule(steps: usize) -> Result<NoiseSchedule, DdpmError> {
    cosine_schedule_capped(steps, MAX_BETA)
}

/// [`cosine_schedule`] with an explicit cap on `β_t`.
///
/// Only the last step reaches the cap, and the first reverse step divides by
/// `√(1 − cap)`: 31.6 at 0.999 against 10 at 0.99. The larger factor magnifies
/// tiny errors of the noise predictor at the noisiest step.
pub fn cosine_schedule_capped(steps: usize, beta_cap: f64) -> Result<NoiseSchedule, DdpmError> {
    if steps < 2 {
        return Err(DdpmError::BadSteps(steps));
    }
    if !(beta_cap > 0.0 && beta_cap < 1.0) {
        return Err(DdpmError::BadBetaCap(beta_cap));
    }
    let f0 = cosine_f(0.0);
    let raw: Vec<f64> = (0..steps).map(|t| cosine_f((t + 1) as f64 / steps as f64) / f0).collect();
    let mut beta = Vec::with_capacity(steps);
    let mut prev = 1.0;
    for &a in &raw {
        beta.push((1.0 - a / prev).clamp(0.0, beta_cap));
        prev = a;
    }
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule { alpha_bar, beta, beta_cap })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn beta_cap(&self) -> f64 {
        self.beta_cap
    }

    /// `ᾱ_{t−1}`, with `ᾱ_{−1} = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Variance of the DDPM posterior `q(x_{t−1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta[t] * (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bar[t])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn twenty_steps() {
        let s = cosine_schedule(20).unwrap();
        assert_eq!(s.alpha_bar().len(), 20);
        assert_eq!(s.beta().len(), 20);
        // Independent evaluation of cos²((u+s)/(1+s)·π/2) at u = 1/20 over u = 0.
        let f = |u: f64| ((u + 0.008) / 1.008 * std::f64::consts::PI / 2.0).cos().powi(2);
        assert!((s.alpha_bar()[0] - f(0.05) / f(0.0)).abs() < 1e-12);
        assert!((s.alpha_bar()[0] - 0.992_007_278_684_218_6).abs() < 1e-12);
        assert_eq!(s.beta()[19], MAX_BETA);
        assert!(s.alpha_bar()[19] < 0.05);
    }

    #[test]
    fn cap_only_touches_last_step() {
        let a = cosine_schedule(20).unwrap();
        let b = cosine_schedule_capped(20, TOY_BETA_CAP).unwrap();
        assert_eq!(a.beta()[..19], b.beta()[..19]);
        assert_eq!(b.beta()[19], TOY_BETA_CAP);
        assert!(b.alpha_bar()[19] < 0.05);
        assert!(cosine_schedule_capped(20, 1.0).is_err());
    }

    #[test]
    fn rejects_single_step() {
        assert!(cosine_schedule(1).is_err());
        assert!(cosine_schedule(0).is_err());
    }

    #[test]
    fn posterior_variance_vanishes_at_first_step() {
        let s = cosine_schedule(20).unwrap();
        assert_eq!(s.posterior_variance(0), 0.0);
        for t in 1..20 {
            let v = s.posterior_variance(t);
            assert!(v > 0.0 && v < s.beta()[t]);
        }
    }

    proptest! {
        #[test]
        fn structural_invariants(t in 2usize..=100) {
            let s = cosine_schedule(t).unwrap();
            let ab = s.alpha_bar();
            for i in 1..t {
                prop_assert!(ab[i] < ab[i - 1]);
                let ratio = 1.0 - ab[i] / ab[i - 1];
                prop_assert!(ratio > 0.0 && ratio < 1.0);
            }
            prop_assert!(ab[0] < 1.0 && ab[0] > 0.0);
            prop_assert!(ab[t - 1] < 0.05);
            prop_assert!(s.beta().iter().all(|&b| b > 0.0 && b < 1.0));
        }

        // The first step only becomes near-noiseless once the grid is fine enough.
        #[test]
        fn first_step_nearly_clean(t in 18usize..=100) {
            prop_assert!(cosine_schedule(t).unwrap().alpha_bar()[0] > 0.99);
        }
    }
}
