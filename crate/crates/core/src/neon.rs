//! The merge itself, displacement, the alignment scalar and its quadratic proxy.

use std::error::Error as StdError;

use rayon::prelude::*;
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::param::{dot_p, ParamError, ParamVector, Preconditioner};
use crate::table::{Cell, ResultTable};

/// Step of the central differences used for curvature along a direction.
pub const HVP_STEP: f64 = 1e-4;

pub type BoxError = Box<dyn StdError + Send + Sync>;

#[derive(Debug, Error)]
pub enum NeonError {
    #[error("cannot merge a {left} checkpoint with a {right} checkpoint")]
    KindMismatch { left: String, right: String },
    #[error("alpha must be finite and > 0, got {0}")]
    BadAlpha(f64),
    #[error("step count must be >= 1")]
    ZeroSteps,
    #[error("evaluation failed: {0}")]
    Evaluation(BoxError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// `θ_r − w(θ_s − θ_r)` coordinate-wise, written in the difference form.
pub fn merge_params(theta_r: &ParamVector, theta_s: &ParamVector, w: f64) -> Result<ParamVector, ParamError> {
    if !w.is_finite() {
        return Err(ParamError::NonFiniteScalar(w));
    }
    let delta = theta_s.sub(theta_r)?;
    if w == -1.0 {
        // The interpolation endpoint is θ_s itself; rounding in r + (s − r) would lose that.
        return Ok(theta_s.clone());
    }
    ParamVector::new(theta_r.iter().zip(delta.iter()).map(|(r, d)| r - w * d).collect())
}

/// Reverse-direction merge. Metadata of `θ_r` is kept and the parents' digests
/// and `w` are recorded.
pub fn neon_merge(theta_r: &Checkpoint, theta_s: &Checkpoint, w: f64) -> Result<Checkpoint, NeonError> {
    if theta_r.kind != theta_s.kind {
        return Err(NeonError::KindMismatch {
            left: theta_r.kind.to_string(),
            right: theta_s.kind.to_string(),
        });
    }
    let params = merge_params(&theta_r.params, &theta_s.params, w)?;
    let mut out = theta_r.clone();
    out.params = params;
    Ok(out
        .with_meta("merge_base", theta_r.digest())
        .with_meta("merge_synthetic", theta_s.digest())
        .with_meta("merge_w", crate::table::format_real(w)))
}

/// Short fine-tune displacement `(θ_s − θ_r) / (αT)`.
pub fn displacement(theta_r: &Checkpoint, theta_s: &Checkpoint, alpha: f64, steps: usize) -> Result<ParamVector, NeonError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(NeonError::BadAlpha(alpha));
    }
    if steps == 0 {
        return Err(NeonError::ZeroSteps);
    }
    let d = theta_s.params.sub(&theta_r.params)?;
    Ok(d.scale(1.0 / (alpha * steps as f64))?)
}

/// Alignment of the real and synthetic risk gradients at `θ_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub r_d: ParamVector,
    pub r_s: ParamVector,
    /// `⟨r_d, P r_s⟩`.
    pub s: f64,
    /// `(P r_s)ᵀ ∇²R (P r_s)` when estimated.
    pub z: Option<f64>,
    /// `s / (‖r_d‖_P ‖r_s‖_P)`; `None` if either gradient vanishes.
    pub cos_sim: Option<f64>,
    /// `−s / (α z)`; `None` unless `z > 0`.
    pub w_star: Option<f64>,
    pub alpha: f64,
    pub norm_r_d: f64,
    pub norm_r_s: f64,
}

impl AlignmentReport {
    pub const CSV_COLUMNS: [&'static str; 7] = ["s", "z", "cos_sim", "w_star", "alpha", "norm_r_d", "norm_r_s"];

    pub fn csv_row(&self) -> Vec<Cell> {
        vec![
            self.s.into(),
            self.z.into(),
            self.cos_sim.into(),
            self.w_star.into(),
            self.alpha.into(),
            self.norm_r_d.into(),
            self.norm_r_s.into(),
        ]
    }

    pub fn to_table(&self) -> ResultTable {
        let mut t = ResultTable::new(Self::CSV_COLUMNS);
        t.push(self.csv_row()).expect("row matches the header");
        t
    }

    /// Interval of `w` on which the quadratic proxy lies below its base value.
    pub fn safe_window(&self) -> Option<(f64, f64)> {
        let w = self.w_star?;
        let edge = 2.0 * w;
        Some(if edge >= 0.0 { (0.0, edge) } else { (edge, 0.0) })
    }

    /// `R(θ_r) + wαs + (wα)² z / 2` relative to `R(θ_r)`.
    pub fn proxy_increment(&self, w: f64) -> Option<f64> {
        let z = self.z?;
        let wa = w * self.alpha;
        Some(wa * self.s + 0.5 * wa * wa * z)
    }
}

/// Fills an [`AlignmentReport`]; `z` is passed through when known.
pub fn alignment(
    r_d: &ParamVector,
    r_s: &ParamVector,
    precond: &Preconditioner,
    alpha: f64,
    z: Option<f64>,
) -> Result<AlignmentReport, NeonError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(NeonError::BadAlpha(alpha));
    }
    let s = dot_p(r_d, r_s, precond)?;
    let norm_r_d = precond.norm(r_d)?;
    let norm_r_s = precond.norm(r_s)?;
    let cos_sim = (norm_r_d > 0.0 && norm_r_s > 0.0).then(|| (s / (norm_r_d * norm_r_s)).clamp(-1.0, 1.0));
    let w_star = z.filter(|&z| z > 0.0).map(|z| -s / (alpha * z));
    Ok(AlignmentReport {
        r_d: r_d.clone(),
        r_s: r_s.clone(),
        s,
        z,
        cos_sim,
        w_star,
        alpha,
        norm_r_d,
        norm_r_s,
    })
}

/// `vᵀ ∇²R(θ) v` from central differences of the gradient along `v`.
pub fn directional_curvature<E>(
    grad: impl Fn(&ParamVector) -> Result<ParamVector, E>,
    theta: &ParamVector,
    v: &ParamVector,
    h: f64,
) -> Result<f64, NeonError>
where
    E: Into<BoxError>,
{
    let plus = crate::param::lin_comb(1.0, theta, h, v)?;
    let minus = crate::param::lin_comb(1.0, theta, -h, v)?;
    let gp = grad(&plus).map_err(|e| NeonError::Evaluation(e.into()))?;
    let gm = grad(&minus).map_err(|e| NeonError::Evaluation(e.into()))?;
    Ok(v.dot(&gp.sub(&gm)?)? / (2.0 * h))
}

/// Risk at `neon_merge(θ_r, θ_s, w)` for each `w`; columns `w, risk`.
/// Evaluations run in parallel and failures become `nan` rows.
pub fn risk_along_merge<E>(
    theta_r: &Checkpoint,
    theta_s: &Checkpoint,
    w_list: &[f64],
    risk: impl Fn(&Checkpoint) -> Result<f64, E> + Sync,
) -> Result<ResultTable, NeonError>
where
    E: Send,
{
    let merged: Vec<Checkpoint> = w_list
        .iter()
        .map(|&w| neon_merge(theta_r, theta_s, w))
        .collect::<Result<_, _>>()?;
    let values: Vec<f64> = merged
        .par_iter()
        .map(|c| risk(c).ok().filter(|v| v.is_finite()).unwrap_or(f64::NAN))
        .collect();
    let mut t = ResultTable::new(["w", "risk"]);
    for (&w, v) in w_list.iter().zip(values) {
        t.push(vec![w.into(), v.into()]).expect("two cells");
    }
    Ok(t)
}

/// Compares exact risks along the merge with the quadratic proxy.
/// `risks` is the output of [`risk_along_merge`] and `base` is `R(θ_r)`.
/// Columns `w, risk, proxy, rel_remainder`, where the remainder is measured
/// against the size of the proxy's own terms, `|wαs| + (wα)²|z|/2`.
pub fn proxy_table(report: &AlignmentReport, risks: &ResultTable, base: f64) -> Result<ResultTable, crate::table::TableError> {
    let ws = risks.real_column("w")?;
    let rs = risks.real_column("risk")?;
    let mut t = ResultTable::new(["w", "risk", "proxy", "rel_remainder"]);
    for (w, r) in ws.into_iter().zip(rs) {
        let (w, r) = (w.unwrap_or(f64::NAN), r.unwrap_or(f64::NAN));
        let proxy = report.proxy_increment(w).map(|d| base + d);
        let scale = report.z.map(|z| {
            let wa = w * report.alpha;
            (wa * report.s).abs() + 0.5 * wa * wa * z.abs()
        });
        let rel = match (proxy, scale) {
            (Some(p), Some(sc)) if sc > 0.0 && r.is_finite() => Some((r - p).abs() / sc),
            _ => None,
        };
        t.push(vec![w.into(), r.into(), proxy.into(), rel.into()])?;
    }
    Ok(t)
}

/// Cosine between the displacement after `T` fine-tune steps and `−P r_s`.
/// `finetune(T)` must return `θ_s` after `T` steps of size `alpha`.
/// Columns `T, cosine`.
pub fn concentration_probe<E>(
    theta_r: &Checkpoint,
    finetune: impl Fn(usize) -> Result<Checkpoint, E> + Sync,
    alpha: f64,
    t_list: &[usize],
    r_s_ref: &ParamVector,
    precond: &Preconditioner,
) -> Result<ResultTable, NeonError>
where
    E: Into<BoxError> + Send,
{
    let target = precond.apply(r_s_ref)?.scale(-1.0)?;
    let cosines: Vec<Result<Option<f64>, NeonError>> = t_list
        .par_iter()
        .map(|&t| {
            let theta_s = finetune(t).map_err(|e| NeonError::Evaluation(e.into()))?;
            let d = displacement(theta_r, &theta_s, alpha, t)?;
            Ok(d.cosine(&target)?)
        })
        .collect();
    let mut table = ResultTable::new(["T", "cosine"]);
    for (&t, c) in t_list.iter().zip(cosines) {
        table.push(vec![t.into(), c?.into()]).expect("two cells");
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::ModelKind;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn ck(v: &[f64]) -> Checkpoint {
        Checkpoint::new(pv(v), ModelKind::Gaussian, 0)
    }

    #[test]
    fn merge_examples() {
        let r = ck(&[1.0, 2.0]);
        let s = ck(&[0.0, 0.0]);
        assert_eq!(neon_merge(&r, &s, 1.0).unwrap().params, pv(&[2.0, 4.0]));
        assert_eq!(neon_merge(&r, &s, 0.0).unwrap().params, r.params);
        let s2 = ck(&[0.3, -7.1]);
        let back = neon_merge(&r, &s2, -1.0).unwrap().params;
        for (a, b) in back.iter().zip(s2.params.iter()) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(1.0));
        }
    }

    #[test]
    fn merge_records_lineage() {
        let r = ck(&[1.0]);
        let s = ck(&[2.0]);
        let m = neon_merge(&r, &s, 0.5).unwrap();
        assert_eq!(m.meta["merge_base"], r.digest());
        assert_eq!(m.meta["merge_synthetic"], s.digest());
        assert_eq!(m.meta["merge_w"], "5.0000000000000000e-1");
    }

    #[test]
    fn merge_rejects_mismatch() {
        let r = ck(&[1.0]);
        let mut s = ck(&[1.0]);
        s.kind = ModelKind::Ddpm;
        assert!(matches!(neon_merge(&r, &s, 1.0), Err(NeonError::KindMismatch { .. })));
        assert!(neon_merge(&r, &ck(&[1.0, 2.0]), 1.0).is_err());
    }

    #[test]
    fn displacement_examples() {
        let r = ck(&[1.0, 1.0]);
        assert_eq!(displacement(&r, &r, 0.1, 5).unwrap(), pv(&[0.0, 0.0]));
        let (alpha, t) = (0.01, 20usize);
        let s = ck(&[1.0 + alpha * t as f64, 1.0]);
        let d = displacement(&r, &s, alpha, t).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12 && d[1] == 0.0);
        let d2 = displacement(&r, &s, 2.0 * alpha, t / 2).unwrap();
        assert!((d2[0] - d[0]).abs() < 1e-12);
        assert!(displacement(&r, &s, 0.0, 1).is_err());
        assert!(displacement(&r, &s, 1.0, 0).is_err());
    }

    #[test]
    fn alignment_examples() {
        let id = Preconditioner::identity(2);
        let r_d = pv(&[1.0, 2.0]);
        let rep = alignment(&r_d, &r_d.scale(-1.0).unwrap(), &id, 0.1, None).unwrap();
        assert!((rep.cos_sim.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(rep.s, -5.0);
        assert_eq!(rep.w_star, None);

        let p = Preconditioner::new(vec![2.0, 1.0]).unwrap();
        let rep = alignment(&pv(&[1.0, 0.0]), &pv(&[0.0, 3.0]), &p, 0.1, Some(1.0)).unwrap();
        assert_eq!(rep.s, 0.0);

        // s = −2 with α = 0.1, z = 4 gives w* = 5.
        let rep = alignment(&pv(&[1.0, 0.0]), &pv(&[-2.0, 0.0]), &id, 0.1, Some(4.0)).unwrap();
        assert!((rep.w_star.unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(rep.safe_window(), Some((0.0, rep.w_star.unwrap() * 2.0)));

        let rep = alignment(&pv(&[0.0, 0.0]), &pv(&[1.0, 0.0]), &id, 0.1, Some(-1.0)).unwrap();
        assert_eq!(rep.cos_sim, None);
        assert_eq!(rep.w_star, None);
        assert_eq!(rep.to_table().to_csv_string().lines().nth(1).unwrap().split(',').nth(2), Some("nan"));
    }

    #[test]
    fn curvature_of_quadratic() {
        // R(θ) = ½ θᵀ A θ with A = diag(1, 3); gradient Aθ.
        let grad = |t: &ParamVector| -> Result<ParamVector, ParamError> { ParamVector::new(vec![t[0], 3.0 * t[1]]) };
        let z = directional_curvature(grad, &pv(&[0.4, -1.0]), &pv(&[1.0, 1.0]), HVP_STEP).unwrap();
        assert!((z - 4.0).abs() < 1e-9);
    }

    #[test]
    fn risk_rows_and_failures() {
        let r = ck(&[1.0]);
        let s = ck(&[0.0]);
        let t = risk_along_merge(&r, &s, &[0.0, 1.0, 2.0], |c| {
            if c.params[0] > 2.5 {
                Err("out of domain")
            } else {
                Ok(c.params[0] * c.params[0])
            }
        })
        .unwrap();
        let risk = t.real_column("risk").unwrap();
        assert_eq!(risk[0], Some(1.0));
        assert_eq!(risk[1], Some(4.0));
        assert!(risk[2].unwrap().is_nan());
    }

    proptest! {
        #[test]
        fn merge_is_affine_in_w(
            r in prop::collection::vec(-10.0f64..10.0, 1..16),
            w0 in -2.0f64..2.0,
            dw in 0.01f64..1.0,
            seed in 0u64..1000,
        ) {
            let mut rng = crate::rng::RngState::new(seed);
            let s: Vec<f64> = r.iter().map(|x| x + rng.normal()).collect();
            let (r, s) = (pv(&r), pv(&s));
            let a = merge_params(&r, &s, w0).unwrap();
            let b = merge_params(&r, &s, w0 + dw).unwrap();
            let c = merge_params(&r, &s, w0 + 2.0 * dw).unwrap();
            for i in 0..r.dim() {
                let second = a[i] - 2.0 * b[i] + c[i];
                prop_assert!(second.abs() <= 1e-12 * (1.0 + a[i].abs() + c[i].abs()));
            }
        }

        #[test]
        fn w_star_opposes_s(s_val in -5.0f64..5.0, z in 0.01f64..10.0, alpha in 0.001f64..1.0) {
            prop_assume!(s_val != 0.0);
            let rep = alignment(&pv(&[1.0]), &pv(&[s_val]), &Preconditioner::identity(1), alpha, Some(z)).unwrap();
            prop_assert_eq!(rep.w_star.unwrap().signum(), -s_val.signum());
        }
    }
}
