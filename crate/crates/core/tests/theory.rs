//! Alignment theory checked on models whose risks are exact.

use neon_lab::categorical::{
    alignment_exact, draw_error, draw_logits, ArSampler, CategoricalModel, DEFAULT_VOCAB,
};
use neon_lab::checkpoint::{Checkpoint, ModelKind};
use neon_lab::gaussian::{
    gauss_finetune_stream, population_nll, population_nll_grad, GaussianParams,
};
use neon_lab::neon::{
    alignment, directional_curvature, neon_merge, proxy_table, risk_along_merge, AlignmentReport,
    HVP_STEP,
};
use neon_lab::param::{lin_comb, ParamVector, Preconditioner};
use neon_lab::rng::RngState;

fn truth() -> GaussianParams {
    GaussianParams::from_cov([0.5, -0.3], [[1.0, 0.3], [0.3, 0.6]]).unwrap()
}

fn gauss_ck(g: &GaussianParams) -> Checkpoint {
    Checkpoint::new(g.to_params(), ModelKind::Gaussian, 0)
}

/// `N(µ, λ²Σ)` around `g`: λ < 1 sharpens, λ > 1 flattens.
fn rescaled(g: &GaussianParams, lambda: f64) -> GaussianParams {
    GaussianParams::new(g.mean, g.chol * lambda).unwrap()
}

struct GaussCase {
    theta_r: GaussianParams,
    theta_s: GaussianParams,
    report: AlignmentReport,
}

fn gauss_case(seed: u64, lambda: f64, alpha: f64) -> GaussCase {
    let star = truth();
    let mut rng = RngState::new(seed);
    let eps: Vec<f64> = (0..5).map(|_| 0.05 * rng.normal()).collect();
    let theta_r = GaussianParams::from_params(&star.to_params().add(&ParamVector::new(eps).unwrap()).unwrap()).unwrap();
    let synth = rescaled(&theta_r, lambda);
    let r_d = population_nll_grad(&theta_r, &star);
    let r_s = population_nll_grad(&theta_r, &synth);
    let id = Preconditioner::identity(5);
    let grad = |p: &ParamVector| GaussianParams::from_params(p).map(|g| population_nll_grad(&g, &star));
    let z = directional_curvature(grad, &theta_r.to_params(), &r_s, HVP_STEP).unwrap();
    let report = alignment(&r_d, &r_s, &id, alpha, Some(z)).unwrap();
    let theta_s = GaussianParams::from_params(&lin_comb(1.0, &theta_r.to_params(), -alpha, &r_s).unwrap()).unwrap();
    GaussCase { theta_r, theta_s, report }
}

fn gauss_risk(c: &Checkpoint) -> Result<f64, neon_lab::gaussian::GaussError> {
    Ok(population_nll(&GaussianParams::from_checkpoint(c)?, &truth()))
}

#[test]
fn gradient_expansion_is_first_order() {
    // ‖r_d(θ*+cε) − c H ε‖ / ‖cε‖ shrinks linearly in c.
    let star = truth();
    let p0 = star.to_params();
    let dir = ParamVector::new(vec![0.3, -0.2, 0.1, 0.25, -0.15]).unwrap();
    let grad = |p: &ParamVector| GaussianParams::from_params(p).map(|g| population_nll_grad(&g, &star));
    let h = 1e-5;
    let hd = grad(&lin_comb(1.0, &p0, h, &dir).unwrap())
        .unwrap()
        .sub(&grad(&lin_comb(1.0, &p0, -h, &dir).unwrap()).unwrap())
        .unwrap()
        .scale(0.5 / h)
        .unwrap();
    assert!(grad(&p0).unwrap().norm() < 1e-12);
    let ratio = |c: f64| {
        let r_d = grad(&lin_comb(1.0, &p0, c, &dir).unwrap()).unwrap();
        r_d.sub(&hd.scale(c).unwrap()).unwrap().norm() / (c * dir.norm())
    };
    let (a, b, c) = (ratio(0.04), ratio(0.02), ratio(0.01));
    assert!(b < a && c < b, "{a} {b} {c}");
    assert!((a / b - 2.0).abs() < 0.2 && (b / c - 2.0).abs() < 0.2, "{a} {b} {c}");
}

#[test]
fn merge_risk_matches_gradient_and_taylor_order() {
    let case = gauss_case(3, 0.8, 1.0);
    let (r, s) = (gauss_ck(&case.theta_r), gauss_ck(&case.theta_s));
    let ws = [-0.04, -0.02, 0.0, 0.02, 0.04];
    let table = risk_along_merge(&r, &s, &ws, gauss_risk).unwrap();
    let risk: Vec<f64> = table.real_column("risk").unwrap().into_iter().map(Option::unwrap).collect();
    let base = gauss_risk(&r).unwrap();
    assert_eq!(risk[2], base);
    // Quadratic through the three rows nearest w = 0: slope is αs.
    let slope = (risk[3] - risk[1]) / (2.0 * 0.02) / case.report.alpha;
    assert!((slope - case.report.s).abs() <= 0.1 * case.report.s.abs(), "{slope} vs {}", case.report.s);
    let proxy = proxy_table(&case.report, &table, base).unwrap();
    let p: Vec<f64> = proxy.real_column("proxy").unwrap().into_iter().map(Option::unwrap).collect();
    let rem = |i: usize, w: f64| (risk[i] - p[i]).abs() / w.powi(3);
    let ratio = rem(4, 0.04) / rem(3, 0.02);
    assert!((0.25..=4.0).contains(&ratio), "{ratio}");
}

#[test]
fn sign_law_on_gaussians() {
    for seed in 0..20 {
        for lambda in [0.7, 0.9, 1.1, 1.3] {
            let case = gauss_case(seed, lambda, 0.1);
            let rep = &case.report;
            let w_star = rep.w_star.expect("population curvature is positive here");
            assert_eq!(w_star.signum(), -rep.s.signum());
            let ws: Vec<f64> = (1..=200).map(|i| 2.0 * w_star * i as f64 / 200.0).collect();
            let (r, s) = (gauss_ck(&case.theta_r), gauss_ck(&case.theta_s));
            let base = gauss_risk(&r).unwrap();
            let t = risk_along_merge(&r, &s, &ws, gauss_risk).unwrap();
            let best = t.real_column("risk").unwrap().into_iter().flatten().fold(f64::INFINITY, f64::min);
            assert!(best < base, "seed {seed} λ {lambda}: s {} w* {w_star}", rep.s);
        }
    }
}

#[test]
fn sign_law_on_categoricals() {
    let samplers = [ArSampler::Temperature(0.5), ArSampler::TopK(4), ArSampler::TopP(0.8), ArSampler::Temperature(1.5)];
    for seed in 0..25 {
        let mut rng = RngState::new(seed);
        let star = CategoricalModel::new(draw_logits(DEFAULT_VOCAB, 1.0, &mut rng)).unwrap();
        let p_data = star.probs();
        let theta_r = star.shifted(&draw_error(DEFAULT_VOCAB, 0.05, &mut rng)).unwrap();
        for s in samplers {
            let rep = alignment_exact(&p_data, &theta_r, s, &Preconditioner::identity(DEFAULT_VOCAB), 0.1).unwrap();
            let Some(w_star) = rep.w_star else { continue };
            let theta_s = lin_comb(1.0, theta_r.logits(), -rep.alpha, &rep.r_s).unwrap();
            let ck = |p: ParamVector| Checkpoint::new(p, ModelKind::Categorical, 0);
            let (r, sy) = (ck(theta_r.logits().clone()), ck(theta_s));
            let risk = |c: &Checkpoint| CategoricalModel::new(c.params.clone()).and_then(|m| m.cross_entropy(&p_data));
            let base = risk(&r).unwrap();
            let ws: Vec<f64> = (1..=100).map(|i| 2.0 * w_star * i as f64 / 100.0).collect();
            let best = risk_along_merge(&r, &sy, &ws, risk)
                .unwrap()
                .real_column("risk")
                .unwrap()
                .into_iter()
                .flatten()
                .fold(f64::INFINITY, f64::min);
            assert!(best < base, "seed {seed} {s}");
            let _ = neon_merge(&r, &sy, w_star).unwrap();
        }
    }
}

fn concentration(seed: u64, alpha: f64, ts: &[usize]) -> Vec<f64> {
    let case = gauss_case(seed, 0.8, 1.0);
    let synth = rescaled(&case.theta_r, 0.8);
    let id = Preconditioner::identity(5);
    let target = case.report.r_s.scale(-1.0).unwrap();
    ts.iter()
        .map(|&t| {
            let mut rng = RngState::new(seed).fork(&format!("ft{t}"));
            let end = gauss_finetune_stream(&case.theta_r, &synth, alpha, t, 16, &id, &mut rng).unwrap();
            let d = end.to_params().sub(&case.theta_r.to_params()).unwrap();
            d.cosine(&target).unwrap().unwrap()
        })
        .collect()
}

#[test]
fn short_finetune_concentrates() {
    let ts = [16, 64, 256, 1024, 4096];
    let norm = truth().to_params().norm();
    let alpha = 0.01 * norm / 4096.0;
    let mut mean = vec![0.0; ts.len()];
    for seed in 0..5 {
        for (m, c) in mean.iter_mut().zip(concentration(seed, alpha, &ts)) {
            *m += c / 5.0;
        }
    }
    let ups = mean.windows(2).filter(|w| w[1] >= w[0]).count();
    assert!(ups >= 3, "{mean:?}");
    assert!(mean[ts.len() - 1] > 0.9, "{mean:?}");
    let coarse: f64 = (0..5).map(|s| concentration(s, 10.0 * alpha, &ts[4..])[0]).sum::<f64>() / 5.0;
    assert!(coarse <= mean[4] + 1e-3, "{coarse} vs {}", mean[4]);
}

#[test]
fn quadratic_proxy_on_categoricals() {
    let samplers = [ArSampler::Temperature(0.5), ArSampler::TopK(4), ArSampler::TopP(0.8), ArSampler::Temperature(1.5)];
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = RngState::new(seed);
        let star = CategoricalModel::new(draw_logits(DEFAULT_VOCAB, 1.0, &mut rng)).unwrap();
        let p_data = star.probs();
        let theta_r = star.shifted(&draw_error(DEFAULT_VOCAB, 0.05, &mut rng)).unwrap();
        let precond = Preconditioner::new((0..DEFAULT_VOCAB).map(|_| 0.5 + 1.5 * rng.uniform()).collect()).unwrap();
        let sampler = samplers[seed as usize % samplers.len()];
        let alpha = 0.1;
        let exact = alignment_exact(&p_data, &theta_r, sampler, &precond, alpha).unwrap();
        let dir = precond.apply(&exact.r_s).unwrap();
        let grad = |p: &ParamVector| CategoricalModel::new(p.clone()).and_then(|m| m.cross_entropy_grad(&p_data));
        let z = directional_curvature(grad, theta_r.logits(), &dir, HVP_STEP).unwrap();
        let rep = alignment(&exact.r_d, &exact.r_s, &precond, alpha, Some(z)).unwrap();
        assert_eq!(rep.w_star.unwrap().signum(), -rep.s.signum(), "seed {seed}");

        let theta_s = lin_comb(1.0, theta_r.logits(), -alpha, &dir).unwrap();
        let ck = |p: ParamVector| Checkpoint::new(p, ModelKind::Categorical, 0);
        let (r, sy) = (ck(theta_r.logits().clone()), ck(theta_s));
        let w_max = 0.1 * theta_r.logits().norm() / alpha;
        let ws: Vec<f64> = (-20..=20).filter(|&i| i != 0).map(|i| w_max * i as f64 / 20.0).collect();
        let risk = |c: &Checkpoint| CategoricalModel::new(c.params.clone()).and_then(|m| m.cross_entropy(&p_data));
        let table = risk_along_merge(&r, &sy, &ws, risk).unwrap();
        let proxy = proxy_table(&rep, &table, risk(&r).unwrap()).unwrap();
        for rel in proxy.real_column("rel_remainder").unwrap() {
            worst = worst.max(rel.unwrap());
        }
    }
    assert!(worst <= 0.05, "{worst}");
}
