//! Dense vector/matrix kernels and the matrix norm catalogue.
//!
//! Everything here follows the row-vector convention: a vector acts on a
//! matrix from the left, so the induced norm is
//! `‖M‖_{p→q} = max_{v≠0} ‖vᵀM‖_q / ‖v‖_p`. All entries are `f64` and must
//! be finite on construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense row-major matrix of finite `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting NaN/Inf entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "expected {rows}x{cols} = {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry at flat index {pos} is {}",
                data[pos]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from a function of (row, col). The caller is expected
    /// to produce finite values.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `M·x` (column action), `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| dot(self.row(i), x))
            .collect()
    }

    /// `Mᵀ·x`, equivalently the row-vector product `xᵀM`, `x` of length `rows`.
    pub fn vecmat(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "vecmat dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += xi * m;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        vec_pnorm(&self.data, 2.0).expect("p=2 is valid")
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    vec_pnorm(v, 2.0).expect("p=2 is valid")
}

fn validate_exponent(p: f64, name: &str) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "{name} must be >= 1 or infinite, got {p}"
        )));
    }
    Ok(())
}

/// Vector ℓp norm `(Σ|v_i|^p)^{1/p}`; `p = ∞` gives the max of absolutes.
///
/// Accumulation is scaled by the largest absolute entry so large exponents do
/// not overflow.
pub fn vec_pnorm(v: &[f64], p: f64) -> Result<f64> {
    validate_exponent(p, "p")?;
    if v.is_empty() {
        return Err(Error::InvalidParameter("vec_pnorm of empty vector".into()));
    }
    let m = v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    if m == 0.0 || p.is_infinite() {
        return Ok(m);
    }
    if p == 1.0 {
        return Ok(v.iter().map(|x| x.abs()).sum());
    }
    if p == 2.0 {
        let s: f64 = v.iter().map(|x| (x / m) * (x / m)).sum();
        return Ok(m * s.sqrt());
    }
    let s: f64 = v.iter().map(|x| (x.abs() / m).powf(p)).sum();
    Ok(m * s.powf(1.0 / p))
}

/// Hölder conjugate: `1/p + 1/p* = 1`.
pub fn conjugate_exponent(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-13;
pub const DEFAULT_SPECTRAL_MAX_ITER: usize = 200_000;

/// Result of the power-iteration spectral norm.
#[derive(Debug, Clone, Copy)]
pub struct SpectralEstimate {
    pub value: f64,
    /// False when the Rayleigh quotient did not settle within `max_iter`;
    /// the value is still the best estimate found.
    pub converged: bool,
    pub iterations: usize,
}

/// Largest singular value by power iteration on the smaller Gram matrix.
///
/// The start vector is the normalized all-ones vector; a second pass from a
/// fixed seeded probe guards against starts orthogonal to the dominant
/// singular direction (which includes the Rayleigh-quotient-stagnates-at-zero
/// case).
pub fn spectral_norm(m: &Matrix, tol: f64, max_iter: usize) -> SpectralEstimate {
    if m.max_abs() == 0.0 {
        return SpectralEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        };
    }
    // Gram-vector product on the smaller side: rows <= cols uses M Mᵀ.
    let n = m.rows().min(m.cols());
    let gram_apply = |v: &[f64]| -> Vec<f64> {
        if m.rows() <= m.cols() {
            m.matvec(&m.vecmat(v))
        } else {
            m.vecmat(&m.matvec(v))
        }
    };

    let run = |mut v: Vec<f64>| -> (f64, bool, usize) {
        let nv = norm2(&v);
        if nv == 0.0 {
            return (0.0, true, 0);
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let mut lambda = 0.0_f64;
        let mut streak = 0usize;
        for it in 1..=max_iter {
            let w = gram_apply(&v);
            let rayleigh = dot(&v, &w);
            let wn = norm2(&w);
            let delta = (rayleigh - lambda).abs();
            lambda = rayleigh;
            if wn == 0.0 {
                // v is in the nullspace of the Gram matrix.
                return (0.0, true, it);
            }
            v = w.iter().map(|x| x / wn).collect();
            if delta <= tol * lambda.abs().max(f64::MIN_POSITIVE) {
                streak += 1;
                if streak >= 3 {
                    return (lambda, true, it);
                }
            } else {
                streak = 0;
            }
        }
        (lambda, false, max_iter)
    };

    let (l1, c1, i1) = run(vec![1.0; n]);
    // Deterministic restart probe; catches unlucky all-ones starts.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_5eed);
    let probe: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    let (l2, c2, i2) = run(probe);
    let (value, converged) = if l2 > l1 { (l2, c2) } else { (l1, c1) };
    SpectralEstimate {
        value: value.max(0.0).sqrt(),
        converged,
        iterations: i1 + i2,
    }
}

/// Spectral norm with default tolerance and iteration budget.
pub fn spectral_norm_default(m: &Matrix) -> SpectralEstimate {
    spectral_norm(m, DEFAULT_SPECTRAL_TOL, DEFAULT_SPECTRAL_MAX_ITER)
}

/// Matrix group norm `‖M‖_{p,q} = [Σ_j (Σ_i |M_ij|^p)^{q/p}]^{1/q}`:
/// ℓp down each column, ℓq across columns.
pub fn group_norm(m: &Matrix, p: f64, q: f64) -> Result<f64> {
    validate_exponent(p, "p")?;
    validate_exponent(q, "q")?;
    let per_col: Vec<f64> = (0..m.cols())
        .map(|j| vec_pnorm(&m.col(j), p))
        .collect::<Result<_>>()?;
    vec_pnorm(&per_col, q)
}

/// Result of an induced-norm computation; `exact` is false when the value is
/// only a projected-gradient-ascent lower bound.
#[derive(Debug, Clone, Copy)]
pub struct InducedEstimate {
    pub value: f64,
    pub exact: bool,
}

/// Induced operator norm `‖M‖_{p→q} = max ‖vᵀM‖_q / ‖v‖_p`.
///
/// Exact closed forms: `p = 1` (maximum over rows of the row ℓq norm, the
/// extreme points of the ℓ1 ball), `q = ∞` (maximum over columns of the
/// column ℓp* norm, by duality), and `p = q = 2` (spectral norm). Every other
/// pair runs projected gradient ascent from `restarts + 1` starts and returns
/// a lower bound flagged `exact = false`.
pub fn induced_norm(m: &Matrix, p: f64, q: f64, restarts: usize, seed: u64) -> Result<InducedEstimate> {
    validate_exponent(p, "p")?;
    validate_exponent(q, "q")?;
    if p == 1.0 {
        let mut best = 0.0_f64;
        for i in 0..m.rows() {
            best = best.max(vec_pnorm(m.row(i), q)?);
        }
        return Ok(InducedEstimate { value: best, exact: true });
    }
    if q.is_infinite() {
        let ps = conjugate_exponent(p);
        let mut best = 0.0_f64;
        for j in 0..m.cols() {
            best = best.max(vec_pnorm(&m.col(j), ps)?);
        }
        return Ok(InducedEstimate { value: best, exact: true });
    }
    if p == 2.0 && q == 2.0 {
        let est = spectral_norm_default(m);
        return Ok(InducedEstimate {
            value: est.value,
            exact: est.converged,
        });
    }
    Ok(InducedEstimate {
        value: induced_norm_ascent(m, p, q, restarts, seed)?,
        exact: false,
    })
}

/// The ratio `‖vᵀM‖_q / ‖v‖_p` for one probe vector; always a valid lower
/// bound on the induced norm.
pub fn induced_ratio(m: &Matrix, v: &[f64], p: f64, q: f64) -> Result<f64> {
    let denom = vec_pnorm(v, p)?;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(vec_pnorm(&m.vecmat(v), q)? / denom)
}

fn induced_norm_ascent(m: &Matrix, p: f64, q: f64, restarts: usize, seed: u64) -> Result<f64> {
    let n = m.rows();
    // Deterministic starts (all-ones plus every ± basis vector), then the
    // requested number of seeded random restarts.
    let mut starts: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        starts.push(e.clone());
        e[i] = -1.0;
        starts.push(e);
    }
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64 + 1);
        starts.push((0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect());
    }
    let mut best = 0.0_f64;
    for mut v in starts {
        let np = vec_pnorm(&v, p)?;
        if np == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= np);
        let mut ratio = induced_ratio(m, &v, p, q)?;
        let mut step = 0.3_f64;
        for _ in 0..500 {
            let u = m.vecmat(&v);
            let un = vec_pnorm(&u, q)?;
            if un == 0.0 {
                break;
            }
            // Subgradient of ‖u‖_q mapped back through M.
            let dual: Vec<f64> = if q == 1.0 {
                u.iter().map(|x| x.signum_or_zero()).collect()
            } else if q.is_infinite() {
                let (jmax, _) = u
                    .iter()
                    .enumerate()
                    .fold((0, 0.0_f64), |(bi, bv), (j, x)| {
                        if x.abs() > bv { (j, x.abs()) } else { (bi, bv) }
                    });
                let mut d = vec![0.0; u.len()];
                d[jmax] = u[jmax].signum_or_zero();
                d
            } else {
                u.iter()
                    .map(|x| x.signum_or_zero() * (x.abs() / un).powf(q - 1.0))
                    .collect()
            };
            let g = m.matvec(&dual);
            let gn = norm2(&g);
            if gn == 0.0 {
                break;
            }
            // Monotone hill climb: accept the trial point only if the ratio
            // improves, otherwise shrink the step.
            let mut trial: Vec<f64> = v
                .iter()
                .zip(&g)
                .map(|(vi, gi)| vi + step * gi / gn)
                .collect();
            let tn = vec_pnorm(&trial, p)?;
            if tn == 0.0 {
                step *= 0.5;
                continue;
            }
            trial.iter_mut().for_each(|x| *x /= tn);
            let trial_ratio = induced_ratio(m, &trial, p, q)?;
            if trial_ratio > ratio {
                ratio = trial_ratio;
                v = trial;
                step *= 1.2;
            } else {
                step *= 0.5;
                if step < 1e-13 {
                    break;
                }
            }
        }
        best = best.max(ratio);
    }
    Ok(best)
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Exact induced norm `‖D‖_{q→p}` of a nonnegative diagonal matrix:
/// `max_i d_i` when `p ≥ q`, otherwise `‖d‖_r` with `1/r = 1/p − 1/q`.
///
/// For a 0/1 mask with `s` active entries this is `s^{[1/p − 1/q]₊}` (0 when
/// `s = 0`).
pub fn diagonal_induced_norm(d: &[f64], q: f64, p: f64) -> Result<f64> {
    validate_exponent(q, "q")?;
    validate_exponent(p, "p")?;
    if d.is_empty() {
        return Err(Error::InvalidParameter("empty diagonal".into()));
    }
    if let Some(neg) = d.iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "diagonal mask entries must be finite and >= 0, got {neg}"
        )));
    }
    if p >= q || p.is_infinite() {
        return Ok(d.iter().fold(0.0_f64, |m, v| m.max(*v)));
    }
    let r = if q.is_infinite() {
        p
    } else {
        p * q / (q - p)
    };
    vec_pnorm(d, r)
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = M` for SPD `M`.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::ShapeMismatch("cholesky needs a square matrix".into()));
    }
    let scale = m.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m.get(i, j) - m.get(j, i)).abs() > 1e-9 * scale {
                return Err(Error::Decomposition(format!(
                    "matrix not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.5 * (m.get(i, j) + m.get(j, i));
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Decomposition(format!(
                        "matrix not positive definite at pivot {i} (value {s:e})"
                    )));
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Solves `M x = b` given the Cholesky factor `L` of `M`.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    assert_eq!(b.len(), n, "cholesky_solve dimension mismatch");
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    x
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns.
pub fn sym_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::ShapeMismatch("sym_eigen needs a square matrix".into()));
    }
    let scale = m.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m.get(i, j) - m.get(j, i)).abs() > 1e-9 * scale {
                return Err(Error::Decomposition(format!(
                    "matrix not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
    let mut v = Matrix::identity(n);
    let frob = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() <= 1e-14 * frob {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum_or_zero_one() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).partial_cmp(&a.get(j, j)).expect("finite"));
    let eigvals: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let eigvecs = Matrix::from_fn(n, n, |i, j| v.get(i, order[j]));
    Ok((eigvals, eigvecs))
}

trait SignumOrZeroOne {
    fn signum_or_zero_one(self) -> f64;
}

impl SignumOrZeroOne for f64 {
    /// signum that maps 0 to 1 (rotation direction choice in Jacobi).
    fn signum_or_zero_one(self) -> f64 {
        if self < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}
