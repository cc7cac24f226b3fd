use rayon::prelude::*;

use super::mlp::MlpParams;
use super::schedule::NoiseSchedule;
use super::DdpmError;
use crate::gaussian::Point;
use crate::rng::RngState;

/// Chains per independently seeded block.
pub const SAMPLE_CHUNK: usize = 1024;

/// Score scale `ζ`: the predicted noise is multiplied by `ζ` at every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    zeta: f64,
}

impl SamplerConfig {
    pub fn new(zeta: f64) -> Result<Self, DdpmError> {
        if !(zeta.is_finite() && zeta > 0.0) {
            return Err(DdpmError::BadZeta(zeta));
        }
        Ok(Self { zeta })
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { zeta: 1.0 }
    }
}

/// Ancestral sampling from pure noise with posterior variance
/// `β_t(1−ᾱ_{t−1})/(1−ᾱ_t)` and no noise on the final step.
///
/// Chains run in blocks of [`SAMPLE_CHUNK`]; block `c` draws from
/// `rng.fork("chunk{c}")`, first the initial noise for every chain, then the
/// per-step noise, so the output does not depend on scheduling.
pub fn ddpm_sample(
    p: &MlpParams,
    sched: &NoiseSchedule,
    sc: SamplerConfig,
    n: usize,
    rng: &RngState,
) -> Result<Vec<Point>, DdpmError> {
    if n == 0 {
        return Err(DdpmError::NoSamples);
    }
    let chunks: Vec<usize> = (0..n.div_ceil(SAMPLE_CHUNK)).collect();
    let parts: Vec<Vec<Point>> = chunks
        .par_iter()
        .map(|&c| {
            let m = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
            sample_chunk(p, sched, sc.zeta, m, &mut rng.fork(&format!("chunk{c}")))
        })
        .collect::<Result<_, _>>()?;
    Ok(parts.concat())
}

fn sample_chunk(
    p: &MlpParams,
    sched: &NoiseSchedule,
    zeta: f64,
    m: usize,
    rng: &mut RngState,
) -> Result<Vec<Point>, DdpmError> {
    let mut xs: Vec<Point> = (0..m).map(|_| [rng.normal(), rng.normal()]).collect();
    let (ab, beta) = (sched.alpha_bar(), sched.beta());
    for t in (0..sched.steps()).rev() {
        let eps = p.predict(&xs, &vec![t; m])?;
        let coef = beta[t] / (1.0 - ab[t]).sqrt();
        let inv_sqrt_alpha = 1.0 / (1.0 - beta[t]).sqrt();
        let sigma = sched.posterior_variance(t).sqrt();
        for (x, e) in xs.iter_mut().zip(&eps) {
            for k in 0..2 {
                x[k] = (x[k] - coef * (zeta * e[k])) * inv_sqrt_alpha;
            }
            if t > 0 {
                x[0] += sigma * rng.normal();
                x[1] += sigma * rng.normal();
            }
        }
    }
    Ok(xs)
}
