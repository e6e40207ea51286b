//! Monte-Carlo estimation of the Rademacher complexity of linear
//! predictors constrained to a Fisher-Rao ball.
//!
//! For a linear predictor class over inputs with known population
//! covariance `Σ = E[XXᵀ]`, the supremum of `⟨s, v⟩` over the ball
//! `{v : vᵀΣv ≤ γ²}` has the closed form `γ·‖s‖_{Σ⁻¹}`. The empirical
//! Rademacher complexity therefore reduces to the Mahalanobis norm of the
//! Rademacher-signed input sum, and its expectation is bounded by
//! `γ·√(p/N)`. This module estimates that expectation by seeded
//! Monte-Carlo trials and reports the estimate next to the bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::standard_normal;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, dot, Matrix};

/// Fewest trials for which the reported standard error is meaningful.
const MIN_TRIALS: usize = 100;

/// A Monte-Carlo estimate of the expected Fisher-Rao-ball Rademacher
/// complexity, alongside the closed-form bound it is checked against.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub mean: f64,
    /// Sample standard deviation divided by √trials.
    pub std_error: f64,
    pub trials: usize,
    /// `γ·√(p/N)`.
    pub bound: f64,
    pub p: usize,
    pub n: usize,
    pub gamma: f64,
    /// Stable identifier of the covariance used for the draws.
    pub covariance_id: String,
    pub seed: u64,
}

impl RademacherEstimate {
    /// Whether the estimate respects the bound with `k` standard errors
    /// of Monte-Carlo slack.
    pub fn within_bound(&self, k: f64) -> bool {
        self.mean <= self.bound + k * self.std_error
    }
}

fn covariance_id(cov: &Matrix) -> String {
    let p = cov.rows();
    let is_identity = (0..p).all(|i| {
        (0..p).all(|j| cov.get(i, j) == if i == j { 1.0 } else { 0.0 })
    });
    if is_identity {
        return format!("identity({p})");
    }
    // FNV-1a over the raw entry bytes: a short, deterministic tag.
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in cov.as_slice() {
        for b in v.to_bits().to_be_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("spd-{p}x{p}-{:08x}", (hash >> 32) as u32 ^ hash as u32)
}

/// Exact supremum of `⟨s, v⟩` over the ellipsoid `{v : vᵀ·gram·v ≤ γ²}`:
/// `γ·‖s‖_{gram⁻¹}`.
pub fn fr_ball_supremum_linear(gram: &Matrix, s: &[f64], gamma: f64) -> Result<f64> {
    if gram.rows() != s.len() || gram.cols() != s.len() {
        return Err(Error::ShapeMismatch(format!(
            "gram is {}×{} but s has length {}",
            gram.rows(),
            gram.cols(),
            s.len()
        )));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "radius must be nonnegative and finite, got {gamma}"
        )));
    }
    let l = cholesky(gram)?;
    let solved = cholesky_solve(&l, s);
    Ok(gamma * dot(s, &solved).max(0.0).sqrt())
}

/// Estimate `E[sup_{v ∈ FR-ball} (1/N)Σᵢ εᵢ⟨v, Xᵢ⟩]` for `Xᵢ ∼ N(0, cov)`
/// and Rademacher signs `εᵢ`, over `trials` independent seeded trials.
/// Each trial evaluates the closed-form supremum `(γ/N)·‖Σεᵢ Xᵢ‖_{cov⁻¹}`.
pub fn linear_fr_rademacher(
    p: usize,
    n: usize,
    gamma: f64,
    cov: &Matrix,
    trials: usize,
    seed: u64,
) -> Result<RademacherEstimate> {
    if p == 0 || n == 0 {
        return Err(Error::InvalidParameter(
            "dimension and sample count must be ≥ 1".into(),
        ));
    }
    if trials < MIN_TRIALS {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_TRIALS} trials for a meaningful standard error, got {trials}"
        )));
    }
    if cov.rows() != p || cov.cols() != p {
        return Err(Error::ShapeMismatch(format!(
            "covariance is {}×{}, expected {p}×{p}",
            cov.rows(),
            cov.cols()
        )));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "radius must be nonnegative and finite, got {gamma}"
        )));
    }
    let l = cholesky(cov)?;

    let mut values = Vec::with_capacity(trials);
    for trial in 0..trials {
        // Counter-derived stream per trial: trials are independent and
        // insensitive to evaluation order.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        let mut s = vec![0.0; p];
        for _ in 0..n {
            let z: Vec<f64> = (0..p).map(|_| standard_normal(&mut rng)).collect();
            let x = l.matvec(&z);
            let eps = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            for (si, xi) in s.iter_mut().zip(&x) {
                *si += eps * xi;
            }
        }
        let mahalanobis = dot(&s, &cholesky_solve(&l, &s)).max(0.0).sqrt();
        values.push(gamma / n as f64 * mahalanobis);
    }

    let mean = values.iter().sum::<f64>() / trials as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (trials - 1) as f64;
    Ok(RademacherEstimate {
        mean,
        std_error: (var / trials as f64).sqrt(),
        trials,
        bound: gamma * (p as f64 / n as f64).sqrt(),
        p,
        n,
        gamma,
        covariance_id: covariance_id(cov),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn supremum_identity_gram_is_euclidean() {
        let s = vec![3.0, -4.0];
        let sup = fr_ball_supremum_linear(&Matrix::identity(2), &s, 2.0).unwrap();
        assert_relative_eq!(sup, 2.0 * 5.0, max_relative = 1e-12);
    }

    #[test]
    fn supremum_diagonal_gram_hand_value() {
        // Maximize v₁ subject to 4v₁² + v₂² ≤ 1: the optimum is v = (1/2, 0).
        let gram = Matrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let sup = fr_ball_supremum_linear(&gram, &[1.0, 0.0], 1.0).unwrap();
        assert_relative_eq!(sup, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn supremum_of_zero_vector_is_zero() {
        let gram = Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        assert_eq!(fr_ball_supremum_linear(&gram, &[0.0, 0.0], 3.0).unwrap(), 0.0);
    }

    #[test]
    fn supremum_is_homogeneous_in_the_radius() {
        let gram = Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let s = [0.7, -1.2];
        let one = fr_ball_supremum_linear(&gram, &s, 1.0).unwrap();
        let scaled = fr_ball_supremum_linear(&gram, &s, 3.5).unwrap();
        assert_relative_eq!(scaled, 3.5 * one, max_relative = 1e-12);
    }

    /// Dense boundary sampling of the ellipsoid must approach the closed
    /// form from below.
    #[test]
    fn supremum_matches_brute_force_on_the_ellipsoid_boundary() {
        let gamma = 1.3;

        // p = 2: sweep the boundary by angle.
        let gram = Matrix::from_rows(&[vec![3.0, 0.4], vec![0.4, 1.0]]).unwrap();
        let s = [0.8, -0.5];
        let exact = fr_ball_supremum_linear(&gram, &s, gamma).unwrap();
        let mut best = f64::NEG_INFINITY;
        let m = 20_000;
        for k in 0..m {
            let t = 2.0 * PI * k as f64 / m as f64;
            let u = [t.cos(), t.sin()];
            let q = dot(&u, &gram.matvec(&u));
            let scale = gamma / q.sqrt();
            best = best.max(scale * dot(&u, &s));
        }
        assert!(best <= exact + 1e-12);
        assert!(best >= exact * (1.0 - 1e-3), "brute {best} vs exact {exact}");

        // p = 3: Fibonacci sphere of directions.
        let gram = Matrix::from_rows(&[
            vec![4.0, 0.5, 0.0],
            vec![0.5, 1.0, 0.2],
            vec![0.0, 0.2, 1.5],
        ])
        .unwrap();
        let s = [0.3, -0.9, 0.6];
        let exact = fr_ball_supremum_linear(&gram, &s, gamma).unwrap();
        let mut best = f64::NEG_INFINITY;
        let m = 100_000;
        let golden = PI * (3.0 - 5.0_f64.sqrt());
        for k in 0..m {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / m as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * k as f64;
            let u = [r * t.cos(), r * t.sin(), z];
            let q = dot(&u, &gram.matvec(&u));
            let scale = gamma / q.sqrt();
            best = best.max(scale * dot(&u, &s));
        }
        assert!(best <= exact + 1e-12);
        assert!(best >= exact * (1.0 - 1e-3), "brute {best} vs exact {exact}");
    }

    #[test]
    fn supremum_rejects_bad_inputs() {
        let gram = Matrix::identity(2);
        assert!(matches!(
            fr_ball_supremum_linear(&gram, &[1.0, 0.0, 0.0], 1.0),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            fr_ball_supremum_linear(&gram, &[1.0, 0.0], -1.0),
            Err(Error::InvalidParameter(_))
        ));
        // Indefinite "gram": eigenvalues 3 and −1.
        let indefinite = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            fr_ball_supremum_linear(&indefinite, &[1.0, 0.0], 1.0),
            Err(Error::Decomposition(_))
        ));
    }

    /// In one dimension the trial value is (γ/√N)·|Z| for standard normal
    /// Z, with known mean √(2/π) and standard deviation √(1−2/π).
    #[test]
    fn scalar_case_matches_the_folded_gaussian_moment() {
        let (gamma, n) = (1.5, 40);
        let est = linear_fr_rademacher(1, n, gamma, &Matrix::identity(1), 20_000, 9).unwrap();
        let expected = gamma / (n as f64).sqrt() * (2.0 / PI).sqrt();
        assert!(
            (est.mean - expected).abs() <= 4.0 * est.std_error,
            "mean {} vs analytic {expected} (SE {})",
            est.mean,
            est.std_error
        );
        assert!(est.within_bound(3.0));
        assert!(est.bound > expected);
    }

    /// Whatever the covariance, the trial value is distributed as
    /// (γ/√N)·‖z‖ for standard normal z ∈ ℝᵖ — the Mahalanobis norm
    /// whitens the draws. Check against the exact chi moment for p = 2
    /// and check the distribution is covariance-free.
    #[test]
    fn mahalanobis_norm_whitens_the_covariance() {
        let (gamma, n, trials) = (2.0, 50, 20_000);
        // E‖z₂‖ = √(π/2).
        let expected = gamma / (n as f64).sqrt() * (PI / 2.0).sqrt();
        let ident = linear_fr_rademacher(2, n, gamma, &Matrix::identity(2), trials, 11).unwrap();
        let skewed_cov = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let skewed = linear_fr_rademacher(2, n, gamma, &skewed_cov, trials, 12).unwrap();
        assert!(
            (ident.mean - expected).abs() <= 4.0 * ident.std_error,
            "identity-cov mean {} vs analytic {expected}",
            ident.mean
        );
        assert!(
            (skewed.mean - expected).abs() <= 4.0 * skewed.std_error,
            "skewed-cov mean {} vs analytic {expected}",
            skewed.mean
        );
        assert!(skewed.covariance_id.starts_with("spd-2x2-"));
        assert_eq!(ident.covariance_id, "identity(2)");
    }

    #[test]
    fn zero_radius_estimates_exactly_zero() {
        let est = linear_fr_rademacher(3, 20, 0.0, &Matrix::identity(3), 200, 5).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.bound, 0.0);
        assert!(est.within_bound(3.0));
    }

    /// The headline configuration: p=5, N=200, γ=1, identity covariance.
    #[test]
    fn headline_estimate_respects_the_dimension_bound() {
        let est =
            linear_fr_rademacher(5, 200, 1.0, &Matrix::identity(5), 10_000, 0xFEED).unwrap();
        assert!(
            est.within_bound(3.0),
            "mean {} exceeds bound {} + 3·{}",
            est.mean,
            est.bound,
            est.std_error
        );
        assert_relative_eq!(est.bound, (5.0_f64 / 200.0).sqrt(), max_relative = 1e-15);
        // The exact expectation is (γ/√N)·E‖z₅‖ with E‖z₅‖ = √2·Γ(3)/Γ(5/2).
        let expected = 1.0 / (200.0_f64).sqrt() * (2.0_f64.sqrt() * 2.0 / (0.75 * PI.sqrt()));
        assert!(
            (est.mean - expected).abs() <= 4.0 * est.std_error,
            "mean {} vs analytic {expected}",
            est.mean
        );
        assert!(est.mean > 0.5 * est.bound, "estimate suspiciously small");
    }

    #[test]
    fn estimate_scales_linearly_in_gamma() {
        let cov = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let unit = linear_fr_rademacher(2, 30, 1.0, &cov, 500, 17).unwrap();
        let scaled = linear_fr_rademacher(2, 30, 2.5, &cov, 500, 17).unwrap();
        assert_relative_eq!(scaled.mean, 2.5 * unit.mean, max_relative = 1e-12);
        assert_relative_eq!(scaled.std_error, 2.5 * unit.std_error, max_relative = 1e-12);
        assert_relative_eq!(scaled.bound, 2.5 * unit.bound, max_relative = 1e-12);
    }

    /// Mean against N follows 1/√N: quadrupling N halves the estimate,
    /// up to Monte-Carlo error.
    #[test]
    fn estimate_scales_as_inverse_root_n() {
        let run = |n: usize| {
            linear_fr_rademacher(3, n, 1.0, &Matrix::identity(3), 4_000, 23).unwrap()
        };
        let (a, b, c) = (run(50), run(200), run(800));
        for (lo, hi) in [(&b, &a), (&c, &b)] {
            let ratio = hi.mean / lo.mean;
            let se_ratio = ratio
                * ((hi.std_error / hi.mean).powi(2) + (lo.std_error / lo.mean).powi(2)).sqrt();
            assert!(
                (ratio - 2.0).abs() <= 3.0 * se_ratio,
                "ratio {ratio} (SE {se_ratio}) not consistent with √(N₂/N₁) = 2"
            );
        }
    }

    #[test]
    fn estimates_are_deterministic_in_the_seed() {
        let cov = Matrix::identity(2);
        let a = linear_fr_rademacher(2, 25, 1.0, &cov, 300, 77).unwrap();
        let b = linear_fr_rademacher(2, 25, 1.0, &cov, 300, 77).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        let c = linear_fr_rademacher(2, 25, 1.0, &cov, 300, 78).unwrap();
        assert_ne!(a.mean.to_bits(), c.mean.to_bits());
    }

    #[test]
    fn estimator_rejects_bad_inputs() {
        let cov = Matrix::identity(2);
        assert!(matches!(
            linear_fr_rademacher(0, 10, 1.0, &Matrix::identity(1), 200, 0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            linear_fr_rademacher(2, 10, 1.0, &cov, 50, 0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            linear_fr_rademacher(3, 10, 1.0, &cov, 200, 0),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            linear_fr_rademacher(2, 10, f64::NAN, &cov, 200, 0),
            Err(Error::InvalidParameter(_))
        ));
        let indefinite = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            linear_fr_rademacher(2, 10, 1.0, &indefinite, 200, 0),
            Err(Error::Decomposition(_))
        ));
    }

    #[test]
    fn estimate_serializes_round_trip() {
        let est = linear_fr_rademacher(2, 10, 1.0, &Matrix::identity(2), 150, 4).unwrap();
        let json = serde_json::to_string(&est).unwrap();
        let back: RademacherEstimate = serde_json::from_str(&json).unwrap();
        assert_eq!(est.mean.to_bits(), back.mean.to_bits());
        assert_eq!(est.covariance_id, back.covariance_id);
        assert_eq!(est.trials, back.trials);
    }
}
