//! Toy-scale sample metrics: Gaussian Fréchet distance and k-NN precision/recall.
//!
//! The "FID" here is the squared Fréchet distance between MLE Gaussian fits
//! of raw 2D coordinates. No feature network is involved.

use rayon::prelude::*;
use thiserror::Error;

use crate::gaussian::{fit_mle, w2_squared, GaussError, Point};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("k must be >= 1")]
    ZeroK,
    #[error("k = {k} needs more than {k} points, got {n}")]
    TooFew { k: usize, n: usize },
    #[error(transparent)]
    Gauss(#[from] GaussError),
}

/// Squared Fréchet distance between the MLE Gaussian fits of two sets.
pub fn frechet_2d(a: &[Point], b: &[Point]) -> Result<f64, MetricsError> {
    Ok(w2_squared(&fit_mle(a)?, &fit_mle(b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrConfig {
    pub k: usize,
}

impl Default for PrConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

impl PrConfig {
    pub fn new(k: usize) -> Result<Self, MetricsError> {
        if k == 0 {
            return Err(MetricsError::ZeroK);
        }
        Ok(Self { k })
    }

    fn check(&self, n: usize) -> Result<(), MetricsError> {
        if self.k == 0 {
            return Err(MetricsError::ZeroK);
        }
        if n <= self.k {
            return Err(MetricsError::TooFew { k: self.k, n });
        }
        Ok(())
    }
}

#[inline]
fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Squared distance from each point to its `k`-th nearest other point.
fn knn_radii2(set: &[Point], k: usize) -> Vec<f64> {
    set.par_iter()
        .enumerate()
        .map_init(Vec::new, |buf, (i, p)| {
            buf.clear();
            buf.extend(set.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| dist2(p, q)));
            *buf.select_nth_unstable_by(k - 1, f64::total_cmp).1
        })
        .collect()
}

/// Fraction of `queries` inside the union of `k`-NN balls around `support`.
/// Balls are closed, so a point at exactly the radius counts.
fn coverage(support: &[Point], queries: &[Point], k: usize) -> f64 {
    let radii = knn_radii2(support, k);
    // Largest balls first makes the early exit fire sooner.
    let mut order: Vec<usize> = (0..support.len()).collect();
    order.sort_by(|&a, &b| radii[b].total_cmp(&radii[a]));
    let balls: Vec<(Point, f64)> = order.iter().map(|&i| (support[i], radii[i])).collect();
    let inside = queries
        .par_iter()
        .filter(|q| balls.iter().any(|(c, r2)| dist2(q, c) <= *r2))
        .count();
    inside as f64 / queries.len() as f64
}

/// Fraction of fake points inside the real manifold estimate.
pub fn precision(real: &[Point], fake: &[Point], cfg: PrConfig) -> Result<f64, MetricsError> {
    cfg.check(real.len())?;
    if fake.is_empty() {
        return Err(MetricsError::TooFew { k: 0, n: 0 });
    }
    Ok(coverage(real, fake, cfg.k))
}

/// Fraction of real points inside the fake manifold estimate.
pub fn recall(real: &[Point], fake: &[Point], cfg: PrConfig) -> Result<f64, MetricsError> {
    precision(fake, real, cfg)
}

/// `(precision, recall)`; both sets must hold more than `k` points.
pub fn precision_recall(real: &[Point], fake: &[Point], cfg: PrConfig) -> Result<(f64, f64), MetricsError> {
    cfg.check(real.len())?;
    cfg.check(fake.len())?;
    Ok((coverage(real, fake, cfg.k), coverage(fake, real, cfg.k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use proptest::prelude::*;

    /// Full sort per point, no parallelism, no ball ordering.
    fn brute(support: &[Point], queries: &[Point], k: usize) -> f64 {
        let mut radii = Vec::new();
        for (i, p) in support.iter().enumerate() {
            let mut d: Vec<f64> = Vec::new();
            for (j, q) in support.iter().enumerate() {
                if i != j {
                    d.push((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]));
                }
            }
            d.sort_by(f64::total_cmp);
            radii.push(d[k - 1]);
        }
        let mut hits = 0;
        for q in queries {
            let mut hit = false;
            for (c, r) in support.iter().zip(&radii) {
                if (q[0] - c[0]) * (q[0] - c[0]) + (q[1] - c[1]) * (q[1] - c[1]) <= *r {
                    hit = true;
                }
            }
            hits += usize::from(hit);
        }
        hits as f64 / queries.len() as f64
    }

    fn cloud(n: usize, shift: f64, rng: &mut RngState) -> Vec<Point> {
        (0..n).map(|_| [rng.normal() + shift, 0.5 * rng.normal()]).collect()
    }

    #[test]
    fn frechet_examples() {
        let mut rng = RngState::new(1);
        let a = cloud(200, 0.0, &mut rng);
        assert_eq!(frechet_2d(&a, &a).unwrap(), 0.0);
        let b: Vec<Point> = a.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
        assert!((frechet_2d(&a, &b).unwrap() - 25.0).abs() < 1e-9);
        let c = cloud(300, 0.4, &mut rng);
        let w = crate::gaussian::w2_gaussian(&fit_mle(&a).unwrap(), &fit_mle(&c).unwrap());
        assert!((frechet_2d(&a, &c).unwrap() - w * w).abs() < 1e-9);
        assert_eq!(frechet_2d(&a, &c).unwrap(), frechet_2d(&c, &a).unwrap());
        let line: Vec<Point> = (0..10).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(frechet_2d(&a, &line).is_err());
    }

    #[test]
    fn pr_examples() {
        let mut rng = RngState::new(2);
        let real = cloud(300, 0.0, &mut rng);
        assert_eq!(precision_recall(&real, &real, PrConfig::default()).unwrap(), (1.0, 1.0));
        let far = cloud(300, 1e6, &mut rng);
        assert_eq!(precision_recall(&real, &far, PrConfig::default()).unwrap(), (0.0, 0.0));
        assert!(matches!(
            precision_recall(&real, &real[..5], PrConfig::default()),
            Err(MetricsError::TooFew { k: 5, n: 5 })
        ));
        assert!(PrConfig::new(0).is_err());
    }

    #[test]
    fn hexagon_centroid() {
        // Each vertex sees neighbours at 1, 1, √3, √3, 2, so the 5-NN radius
        // is 2 and the centroid (distance 1) is covered by every ball.
        let hex: Vec<Point> = (0..6)
            .map(|i| {
                let a = std::f64::consts::PI / 3.0 * i as f64;
                [a.cos(), a.sin()]
            })
            .collect();
        let centre = [[0.0, 0.0]];
        for r2 in knn_radii2(&hex, 5) {
            assert!((r2 - 4.0).abs() < 1e-12);
        }
        assert_eq!(precision(&hex, &centre, PrConfig::default()).unwrap(), 1.0);
        assert_eq!(brute(&hex, &centre, 5), 1.0);
        // With k = 2 the radius is 1 and the centroid sits exactly on every sphere.
        assert_eq!(precision(&hex, &centre, PrConfig::new(2).unwrap()).unwrap(), brute(&hex, &centre, 2));
    }

    #[test]
    fn ties_at_the_radius_are_inside() {
        let real: Vec<Point> = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        // Point 0 has radius 1 at k = 1; a query at distance exactly 1 is covered.
        assert_eq!(precision(&real, &[[0.0, 1.0]], PrConfig::new(1).unwrap()).unwrap(), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_brute_force(n in 7usize..200, m in 7usize..200, shift in 0.0f64..3.0, k in 1usize..6, seed in 0u64..10_000) {
            let mut rng = RngState::new(seed);
            let real = cloud(n, 0.0, &mut rng);
            let fake = cloud(m, shift, &mut rng);
            let cfg = PrConfig::new(k).unwrap();
            let (p, r) = precision_recall(&real, &fake, cfg).unwrap();
            prop_assert_eq!(p, brute(&real, &fake, k));
            prop_assert_eq!(r, brute(&fake, &real, k));
        }

        #[test]
        fn rigid_motion_invariance(angle in 0.0f64..6.3, tx in -5.0f64..5.0, ty in -5.0f64..5.0, seed in 0u64..10_000) {
            let mut rng = RngState::new(seed);
            let real = cloud(120, 0.0, &mut rng);
            let fake = cloud(120, 0.7, &mut rng);
            let (c, s) = (angle.cos(), angle.sin());
            let mv = |v: &[Point]| -> Vec<Point> { v.iter().map(|p| [c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] + ty]).collect() };
            let before = precision_recall(&real, &fake, PrConfig::default()).unwrap();
            let after = precision_recall(&mv(&real), &mv(&fake), PrConfig::default()).unwrap();
            prop_assert!((before.0 - after.0).abs() <= 1e-12 && (before.1 - after.1).abs() <= 1e-12);
        }

        #[test]
        fn frechet_symmetric_nonnegative(seed in 0u64..10_000, shift in 0.0f64..2.0) {
            let mut rng = RngState::new(seed);
            let a = cloud(50, 0.0, &mut rng);
            let b = cloud(60, shift, &mut rng);
            let d = frechet_2d(&a, &b).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, frechet_2d(&b, &a).unwrap());
        }
    }
}
