//! Parametrization-invariance checks for natural-gradient dynamics.
//!
//! Natural-gradient flow is invariant under coordinate changes: running the
//! flow on `θ` and on `ξ = ξ(θ)` traces the same curve. Discrete steps keep
//! that promise exactly for *linear* invertible reparametrizations, and up
//! to an O(lr²)-per-step drift for nonlinear ones. Under linear
//! *over*-parametrization (`ξ = Bθ` with `B ∈ ℝ^{q×p}`, `q > p`) one step
//! in the small space maps onto one step in the big space through the
//! oblique projector `M = Ĩ^{−1/2}(I − U⊥U⊥ᵀ)Ĩ^{1/2}`, whose eigenvalues
//! are all 0 or 1.
//!
//! Everything here runs on tiny linear regression models with explicit
//! empirical Fisher matrices, so the solves are exact (Cholesky, not CG)
//! and the geometry is isolated from solver noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, dot, norm2, sym_eigen, Matrix};

/// Trajectory divergence between a base and a reparametrized run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReparamGap {
    /// Largest `‖ξ_t − ξ(θ_t)‖₂` seen along the trajectory.
    pub max_gap: f64,
    /// Gap at the final step.
    pub final_gap: f64,
    pub steps: usize,
    pub lr: f64,
}

/// Spectrum and one-step verdicts for the over-parametrization projector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectionCheck {
    /// Eigenvalues of `M` (computed through its symmetric similarity),
    /// ascending. Exactly `q − p` of them should be 0 and `p` should be 1.
    pub eigenvalues: Vec<f64>,
    /// `trace(M)`, which must equal `p`.
    pub trace: f64,
    /// `‖M·M − M‖_F / max(1, ‖M‖_F)` — an idempotent matrix has defect 0.
    pub idempotency_defect: f64,
    /// `‖B·dθ − M·dξ‖₂` for one natural-gradient step from a common point.
    pub mismatch: f64,
    /// `max(‖B·dθ‖, ‖M·dξ‖)`, the comparison scale for `mismatch`.
    pub mismatch_scale: f64,
    /// Relative mismatch of the same construction under plain gradient
    /// steps, which the projector identity does *not* cover.
    pub gd_relative_mismatch: f64,
}

impl ProjectionCheck {
    /// Largest distance from an eigenvalue to the nearest of {0, 1}.
    pub fn max_eigen_defect(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|e| e.abs().min((e - 1.0).abs()))
            .fold(0.0, f64::max)
    }

    /// `mismatch / mismatch_scale`, or 0 when both vanish.
    pub fn relative_mismatch(&self) -> f64 {
        if self.mismatch_scale == 0.0 {
            if self.mismatch == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.mismatch / self.mismatch_scale
        }
    }
}

/// Linear regression with squared loss: the base model all checks run on.
struct LinearModel {
    features: Matrix,
    values: Vec<f64>,
}

impl LinearModel {
    fn new(features: Matrix, values: &[f64]) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Data("invariance checks need a nonempty sample".into()));
        }
        if features.rows() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} values",
                features.rows(),
                values.len()
            )));
        }
        Ok(LinearModel {
            features,
            values: values.to_vec(),
        })
    }

    fn dim(&self) -> usize {
        self.features.cols()
    }

    /// `(1/N)Σ (⟨θ,xᵢ⟩ − yᵢ)·xᵢ`.
    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.features.rows();
        let mut g = vec![0.0; self.dim()];
        for i in 0..n {
            let x = self.features.row(i);
            let r = dot(theta, x) - self.values[i];
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += r * xj / n as f64;
            }
        }
        g
    }

    /// Empirical Fisher `(1/N)Σ (⟨θ,xᵢ⟩ − yᵢ)²·xᵢxᵢᵀ`.
    fn fisher(&self, theta: &[f64]) -> Matrix {
        let n = self.features.rows();
        let p = self.dim();
        let mut f = Matrix::zeros(p, p);
        for i in 0..n {
            let x = self.features.row(i);
            let r = dot(theta, x) - self.values[i];
            let w = r * r / n as f64;
            for a in 0..p {
                for b in 0..p {
                    f.set(a, b, f.get(a, b) + w * x[a] * x[b]);
                }
            }
        }
        f
    }

    /// One damped natural-gradient step with an exact dense solve.
    fn ng_step(&self, theta: &[f64], lr: f64, damping: f64) -> Result<Vec<f64>> {
        let grad = self.grad(theta);
        let mut a = self.fisher(theta);
        for i in 0..self.dim() {
            a.set(i, i, a.get(i, i) + damping);
        }
        let delta = cholesky_solve(&cholesky(&a)?, &grad);
        Ok(theta.iter().zip(&delta).map(|(t, d)| t - lr * d).collect())
    }
}

fn validate_step_params(lr: f64, damping: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "learning rate must be positive and finite, got {lr}"
        )));
    }
    if !(damping >= 0.0) || !damping.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "damping must be nonnegative and finite, got {damping}"
        )));
    }
    Ok(())
}

/// Inverse of a small square matrix by Gauss-Jordan elimination with
/// partial pivoting.
fn invert_small(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::ShapeMismatch("matrix inverse needs a square matrix".into()));
    }
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a.get(i, col)
                    .abs()
                    .partial_cmp(&a.get(j, col).abs())
                    .unwrap()
            })
            .unwrap();
        let scale = a.max_abs().max(1.0);
        if a.get(pivot, col).abs() <= 1e-14 * scale {
            return Err(Error::Decomposition(format!(
                "matrix is singular at column {col}"
            )));
        }
        if pivot != col {
            for j in 0..n {
                let (u, v) = (a.get(col, j), a.get(pivot, j));
                a.set(col, j, v);
                a.set(pivot, j, u);
                let (u, v) = (inv.get(col, j), inv.get(pivot, j));
                inv.set(col, j, v);
                inv.set(pivot, j, u);
            }
        }
        let d = a.get(col, col);
        for j in 0..n {
            a.set(col, j, a.get(col, j) / d);
            inv.set(col, j, inv.get(col, j) / d);
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a.get(i, col);
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a.set(i, j, a.get(i, j) - f * a.get(col, j));
                inv.set(i, j, inv.get(i, j) - f * inv.get(col, j));
            }
        }
    }
    Ok(inv)
}

/// `(M^{1/2}, M^{−1/2})` of a symmetric positive-definite matrix via its
/// eigendecomposition.
fn sym_sqrt_pair(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let (vals, vecs) = sym_eigen(m)?;
    let max = vals.iter().cloned().fold(0.0_f64, f64::max);
    if vals.iter().any(|&v| v <= 1e-12 * max.max(1e-300)) {
        return Err(Error::Decomposition(
            "Fisher matrix is numerically singular; the invariance construction needs it invertible"
                .into(),
        ));
    }
    let n = vals.len();
    let build = |f: &dyn Fn(f64) -> f64| {
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| vecs.get(i, k) * f(vals[k]) * vecs.get(j, k))
                .sum()
        })
    };
    Ok((build(&|v| v.sqrt()), build(&|v| 1.0 / v.sqrt())))
}

/// Run damped natural gradient on `θ` and on the linearly reparametrized
/// coordinates `ξ = Aθ` from matched starting points, and report how far
/// the two trajectories drift apart. For invertible `A` the discrete
/// update is exactly equivariant, so the gap stays at the arithmetic
/// floor (inflated only by the damping, which is not equivariant).
pub fn linear_reparam_gap(
    features: &Matrix,
    values: &[f64],
    theta0: &[f64],
    a: &Matrix,
    lr: f64,
    steps: usize,
    damping: f64,
) -> Result<ReparamGap> {
    validate_step_params(lr, damping)?;
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be ≥ 1".into()));
    }
    let base = LinearModel::new(features.clone(), values)?;
    if theta0.len() != base.dim() {
        return Err(Error::ShapeMismatch(format!(
            "theta0 has length {}, features have {} columns",
            theta0.len(),
            base.dim()
        )));
    }
    if a.rows() != base.dim() || a.cols() != base.dim() {
        return Err(Error::ShapeMismatch(
            "reparametrization matrix must be square in the model dimension".into(),
        ));
    }
    let a_inv = invert_small(a)?;
    // f(x) = ⟨θ, x⟩ = ⟨Aθ, A⁻ᵀx⟩: the ξ-model is the same regression on
    // features transformed by A⁻ᵀ (rows map via x ↦ x·A⁻¹ in row form).
    let reparam = LinearModel::new(features.matmul(&a_inv)?, values)?;

    let mut theta = theta0.to_vec();
    let mut xi = a.matvec(theta0);
    let mut max_gap = 0.0_f64;
    let mut final_gap = 0.0;
    for _ in 0..steps {
        theta = base.ng_step(&theta, lr, damping)?;
        xi = reparam.ng_step(&xi, lr, damping)?;
        let mapped = a.matvec(&theta);
        let gap = xi
            .iter()
            .zip(&mapped)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        max_gap = max_gap.max(gap);
        final_gap = gap;
    }
    Ok(ReparamGap {
        max_gap,
        final_gap,
        steps,
        lr,
    })
}

fn cubic_map(t: f64) -> f64 {
    t + t * t * t / 3.0
}

/// Invert `t + t³/3 = x` by Newton iteration (the map is strictly
/// increasing with derivative ≥ 1, so this converges fast from `t = x`).
fn cubic_inverse(x: f64) -> f64 {
    let mut t = x;
    for _ in 0..60 {
        let f = cubic_map(t) - x;
        if f.abs() <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
        t -= f / (1.0 + t * t);
    }
    t
}

/// Same trajectory comparison under the *nonlinear* coordinate change
/// `ξᵢ = θᵢ + θᵢ³/3`, run for a fixed total time `total_time` (so the
/// step count is `total_time/lr`). Here only the continuous-time flows
/// coincide: each discrete step contributes an O(lr²) mismatch, and the
/// accumulated gap over the fixed horizon shrinks linearly as the
/// learning rate drops.
pub fn cubic_reparam_gap(
    features: &Matrix,
    values: &[f64],
    theta0: &[f64],
    lr: f64,
    total_time: f64,
    damping: f64,
) -> Result<ReparamGap> {
    validate_step_params(lr, damping)?;
    if !(total_time > 0.0) {
        return Err(Error::InvalidParameter("total_time must be positive".into()));
    }
    let base = LinearModel::new(features.clone(), values)?;
    let p = base.dim();
    if theta0.len() != p {
        return Err(Error::ShapeMismatch(format!(
            "theta0 has length {}, features have {} columns",
            theta0.len(),
            p
        )));
    }
    let steps = ((total_time / lr).round() as usize).max(1);

    let mut theta = theta0.to_vec();
    let mut xi: Vec<f64> = theta0.iter().map(|&t| cubic_map(t)).collect();
    let mut max_gap = 0.0_f64;
    let mut final_gap = 0.0;
    for _ in 0..steps {
        theta = base.ng_step(&theta, lr, damping)?;

        // ξ-side step: pull back to θ̂ = φ⁻¹(ξ), transform gradient and
        // Fisher through the diagonal Jacobian J = diag(1 + θ̂ᵢ²), solve.
        let theta_hat: Vec<f64> = xi.iter().map(|&x| cubic_inverse(x)).collect();
        let jac: Vec<f64> = theta_hat.iter().map(|t| 1.0 + t * t).collect();
        let g = base.grad(&theta_hat);
        let grad_xi: Vec<f64> = g.iter().zip(&jac).map(|(gi, j)| gi / j).collect();
        let fisher = base.fisher(&theta_hat);
        let mut fisher_xi = Matrix::from_fn(p, p, |i, j| fisher.get(i, j) / (jac[i] * jac[j]));
        for i in 0..p {
            fisher_xi.set(i, i, fisher_xi.get(i, i) + damping);
        }
        let delta = cholesky_solve(&cholesky(&fisher_xi)?, &grad_xi);
        for (x, d) in xi.iter_mut().zip(&delta) {
            *x -= lr * d;
        }

        let gap = xi
            .iter()
            .zip(&theta)
            .map(|(x, t)| (x - cubic_map(*t)) * (x - cubic_map(*t)))
            .sum::<f64>()
            .sqrt();
        max_gap = max_gap.max(gap);
        final_gap = gap;
    }
    Ok(ReparamGap {
        max_gap,
        final_gap,
        steps,
        lr,
    })
}

/// Over-parametrization check: the big model is a linear regression on
/// `q`-dimensional features, the small model reaches it through `ξ = Bθ`
/// with `B ∈ ℝ^{q×p}` of full column rank, `q > p`. At a common point the
/// projector `M = Ĩ^{−1/2}(I − U⊥U⊥ᵀ)Ĩ^{1/2}` (with `U⊥` the null space
/// of `Ĩ^{1/2}B`) satisfies `B·dθ = M·dξ` for one natural-gradient step
/// on each side, and `M` has eigenvalues exactly 0 (q−p of them) and 1
/// (p of them).
pub fn overparam_projection_check(
    features: &Matrix,
    values: &[f64],
    b: &Matrix,
    theta0: &[f64],
    lr: f64,
    damping: f64,
) -> Result<ProjectionCheck> {
    validate_step_params(lr, damping)?;
    let big = LinearModel::new(features.clone(), values)?;
    let q = big.dim();
    let p = b.cols();
    if b.rows() != q {
        return Err(Error::ShapeMismatch(format!(
            "B has {} rows, features have {} columns",
            b.rows(),
            q
        )));
    }
    if p >= q {
        return Err(Error::InvalidParameter(format!(
            "over-parametrization needs q > p, got q = {q}, p = {p}"
        )));
    }
    if theta0.len() != p {
        return Err(Error::ShapeMismatch(format!(
            "theta0 has length {}, B has {} columns",
            theta0.len(),
            p
        )));
    }
    // The small model's features are X·B (so predictions agree with the
    // big model at ξ = Bθ).
    let small = LinearModel::new(features.matmul(b)?, values)?;
    let xi0 = b.matvec(theta0);

    let fisher_big = big.fisher(&xi0);
    let (half, inv_half) = sym_sqrt_pair(&fisher_big)?;

    // U⊥ spans the zero eigenspace of (Ĩ^{1/2}B)(Ĩ^{1/2}B)ᵀ.
    let c = half.matmul(b)?;
    let s = c.matmul(&c.transpose())?;
    let (svals, svecs) = sym_eigen(&s)?;
    let smax = svals.iter().cloned().fold(0.0_f64, f64::max).max(1e-300);
    let null_cols: Vec<usize> = (0..q).filter(|&k| svals[k] <= 1e-10 * smax).collect();
    if null_cols.len() != q - p {
        return Err(Error::Decomposition(format!(
            "expected a null space of dimension {}, found {} (is B full column rank?)",
            q - p,
            null_cols.len()
        )));
    }
    let mut projector = Matrix::identity(q);
    for &k in &null_cols {
        for i in 0..q {
            for j in 0..q {
                projector.set(i, j, projector.get(i, j) - svecs.get(i, k) * svecs.get(j, k));
            }
        }
    }
    let m = inv_half.matmul(&projector)?.matmul(&half)?;

    let eigenvalues = sym_eigen(&projector)?.0;
    let trace = (0..q).map(|i| m.get(i, i)).sum();
    let mm = m.matmul(&m)?;
    let defect = Matrix::from_fn(q, q, |i, j| mm.get(i, j) - m.get(i, j));
    let idempotency_defect = defect.frobenius_norm() / m.frobenius_norm().max(1.0);

    // One natural-gradient step on each side from the common point.
    let theta1 = small.ng_step(theta0, lr, damping)?;
    let xi1 = big.ng_step(&xi0, lr, damping)?;
    let dtheta: Vec<f64> = theta1.iter().zip(theta0).map(|(a, b)| a - b).collect();
    let dxi: Vec<f64> = xi1.iter().zip(&xi0).map(|(a, b)| a - b).collect();
    let lhs = b.matvec(&dtheta);
    let rhs = m.matvec(&dxi);
    let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let mismatch = norm2(&diff);
    let mismatch_scale = norm2(&lhs).max(norm2(&rhs));

    // The same comparison for plain gradient steps, which the projector
    // identity does not govern: the relative mismatch stays large.
    let gd_lhs = b.matvec(
        &small
            .grad(theta0)
            .iter()
            .map(|g| -lr * g)
            .collect::<Vec<f64>>(),
    );
    let gd_rhs = m.matvec(&big.grad(&xi0).iter().map(|g| -lr * g).collect::<Vec<f64>>());
    let gd_diff: Vec<f64> = gd_lhs.iter().zip(&gd_rhs).map(|(a, b)| a - b).collect();
    let gd_scale = norm2(&gd_lhs).max(norm2(&gd_rhs)).max(1e-300);
    let gd_relative_mismatch = norm2(&gd_diff) / gd_scale;

    Ok(ProjectionCheck {
        eigenvalues,
        trace,
        idempotency_defect,
        mismatch,
        mismatch_scale,
        gd_relative_mismatch,
    })
}
