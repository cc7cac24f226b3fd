use ndarray::Array2;
use rayon::prelude::*;

use super::mlp::MlpParams;
use super::schedule::NoiseSchedule;
use super::DdpmError;
use crate::gaussian::Point;
use crate::param::ParamVector;
use crate::rng::RngState;

/// Rows per block when averaging gradients over large sets.
const GRAD_CHUNK: usize = 4096;

/// Diffusion step and noise for each example of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub t: Vec<usize>,
    pub eps: Vec<Point>,
}

impl NoiseDraw {
    /// Per example: `t` uniform on `0..steps`, then two standard normals.
    pub fn draw(n: usize, steps: usize, rng: &mut RngState) -> Self {
        let mut t = Vec::with_capacity(n);
        let mut eps = Vec::with_capacity(n);
        for _ in 0..n {
            t.push(rng.below(steps));
            eps.push([rng.normal(), rng.normal()]);
        }
        Self { t, eps }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Loss `mean_b ‖ε_θ(x_t, t) − ε‖²` and its exact gradient for given noise.
pub fn ddpm_loss_grad_with_noise(
    p: &MlpParams,
    batch: &[Point],
    noise: &NoiseDraw,
    sched: &NoiseSchedule,
) -> Result<(f64, Vec<f64>), DdpmError> {
    if batch.is_empty() {
        return Err(DdpmError::EmptyBatch);
    }
    if noise.len() != batch.len() {
        return Err(DdpmError::ParamCount { expected: batch.len(), got: noise.len() });
    }
    let ab = sched.alpha_bar();
    let xt: Vec<Point> = batch
        .iter()
        .zip(noise.t.iter().zip(&noise.eps))
        .map(|(x, (&t, e))| {
            if t >= ab.len() {
                return Err(DdpmError::StepOutOfRange { t, steps: ab.len() });
            }
            let (a, s) = (ab[t].sqrt(), (1.0 - ab[t]).sqrt());
            Ok([a * x[0] + s * e[0], a * x[1] + s * e[1]])
        })
        .collect::<Result<_, _>>()?;
    let acts = p.forward(p.assemble_input(&xt, &noise.t))?;
    let n = batch.len() as f64;
    let out = acts.output();
    let mut d_out = Array2::zeros((batch.len(), 2));
    let mut loss = 0.0;
    for (i, e) in noise.eps.iter().enumerate() {
        for k in 0..2 {
            let r = out[(i, k)] - e[k];
            loss += r * r;
            d_out[(i, k)] = 2.0 * r / n;
        }
    }
    let grad = p.backward(&acts, d_out.view());
    Ok((loss / n, grad))
}

/// [`ddpm_loss_grad_with_noise`] with noise drawn from `rng`.
pub fn ddpm_loss_grad(
    p: &MlpParams,
    batch: &[Point],
    sched: &NoiseSchedule,
    rng: &mut RngState,
) -> Result<(f64, ParamVector), DdpmError> {
    let noise = NoiseDraw::draw(batch.len(), sched.steps(), rng);
    let (loss, grad) = ddpm_loss_grad_with_noise(p, batch, &noise, sched)?;
    Ok((loss, ParamVector::new(grad)?))
}

/// Monte Carlo risk gradient over a large set, averaging `repeats` noise draws
/// per point. Blocks draw noise from `rng.fork("block{i}")` and are reduced in
/// block order, so the result does not depend on the thread count.
pub fn ddpm_mean_grad(
    p: &MlpParams,
    data: &[Point],
    sched: &NoiseSchedule,
    rng: &RngState,
    repeats: usize,
) -> Result<(f64, ParamVector), DdpmError> {
    if data.is_empty() || repeats == 0 {
        return Err(DdpmError::EmptyBatch);
    }
    let blocks: Vec<(usize, &[Point])> = (0..repeats)
        .flat_map(|_| data.chunks(GRAD_CHUNK))
        .enumerate()
        .collect();
    let parts: Vec<(f64, f64, Vec<f64>)> = blocks
        .par_iter()
        .map(|&(i, chunk)| {
            let mut r = rng.fork(&format!("block{i}"));
            let noise = NoiseDraw::draw(chunk.len(), sched.steps(), &mut r);
            let (loss, grad) = ddpm_loss_grad_with_noise(p, chunk, &noise, sched)?;
            Ok((chunk.len() as f64, loss, grad))
        })
        .collect::<Result<_, DdpmError>>()?;
    let total: f64 = parts.iter().map(|(w, _, _)| w).sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for (w, l, g) in &parts {
        let f = w / total;
        loss += f * l;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += f * gi;
        }
    }
    Ok((loss, ParamVector::new(grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddpm::mlp::MlpWidths;
    use crate::ddpm::schedule::cosine_schedule;

    fn micro() -> MlpWidths {
        MlpWidths { time_embed: 2, hidden: vec![1, 1] }
    }

    #[test]
    fn micro_net_size() {
        assert_eq!(micro().param_count(), 11);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let sched = cosine_schedule(20).unwrap();
        for (seed, widths) in [(1, micro()), (2, MlpWidths { time_embed: 4, hidden: vec![5, 3] })] {
            let mut rng = RngState::new(seed);
            let p = MlpParams::init(widths.clone(), &mut rng).unwrap();
            let batch: Vec<Point> = (0..7).map(|_| [rng.normal(), rng.normal()]).collect();
            let noise = NoiseDraw::draw(batch.len(), 20, &mut rng);
            let (_, grad) = ddpm_loss_grad_with_noise(&p, &batch, &noise, &sched).unwrap();
            let h = 1e-5;
            for i in 0..p.len() {
                let at = |d: f64| {
                    let mut flat = p.as_slice().to_vec();
                    flat[i] += d;
                    let q = MlpParams::from_flat(widths.clone(), flat).unwrap();
                    ddpm_loss_grad_with_noise(&q, &batch, &noise, &sched).unwrap().0
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                let tol = 1e-4 * fd.abs().max(grad[i].abs()).max(1e-3);
                assert!((fd - grad[i]).abs() <= tol, "param {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn deterministic_given_rng() {
        let sched = cosine_schedule(20).unwrap();
        let p = MlpParams::init(MlpWidths::standard(16), &mut RngState::new(0)).unwrap();
        let batch = vec![[0.1, 0.2], [1.0, -1.0]];
        let a = ddpm_loss_grad(&p, &batch, &sched, &mut RngState::new(5)).unwrap();
        let b = ddpm_loss_grad(&p, &batch, &sched, &mut RngState::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicated_batch_is_invariant() {
        let sched = cosine_schedule(20).unwrap();
        let mut rng = RngState::new(3);
        let p = MlpParams::init(MlpWidths::standard(16), &mut rng).unwrap();
        let batch: Vec<Point> = (0..5).map(|_| [rng.normal(), rng.normal()]).collect();
        let noise = NoiseDraw::draw(5, 20, &mut rng);
        let doubled_batch: Vec<Point> = batch.iter().chain(&batch).copied().collect();
        let doubled_noise = NoiseDraw {
            t: noise.t.iter().chain(&noise.t).copied().collect(),
            eps: noise.eps.iter().chain(&noise.eps).copied().collect(),
        };
        let (l1, g1) = ddpm_loss_grad_with_noise(&p, &batch, &noise, &sched).unwrap();
        let (l2, g2) = ddpm_loss_grad_with_noise(&p, &doubled_batch, &doubled_noise, &sched).unwrap();
        assert!((l1 - l2).abs() <= 1e-12 * l1.abs());
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let sched = cosine_schedule(20).unwrap();
        let p = MlpParams::zeros(micro()).unwrap();
        assert!(matches!(ddpm_loss_grad(&p, &[], &sched, &mut RngState::new(0)), Err(DdpmError::EmptyBatch)));
    }

    #[test]
    fn mean_grad_is_thread_independent() {
        let sched = cosine_schedule(20).unwrap();
        let mut rng = RngState::new(4);
        let p = MlpParams::init(MlpWidths::standard(8), &mut rng).unwrap();
        let data: Vec<Point> = (0..10_000).map(|_| [rng.normal(), rng.normal()]).collect();
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = serial.install(|| ddpm_mean_grad(&p, &data, &sched, &rng.fork("g"), 2)).unwrap();
        let b = wide.install(|| ddpm_mean_grad(&p, &data, &sched, &rng.fork("g"), 2)).unwrap();
        assert_eq!(a, b);
    }
}
