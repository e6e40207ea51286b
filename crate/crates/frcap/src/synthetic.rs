//! Seeded synthetic dataset generators, label corruption, and a perceptron
//! oracle used to certify that generated blobs really are linearly separable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use frcap_core::data::{standard_normal, Dataset, Labels};
use frcap_core::linalg::{cholesky, dot, Matrix};

use crate::config::SyntheticSpec;
use crate::{CliError, Result};

/// A generated dataset plus whatever side information the generator fixed.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Population covariance of the inputs, when the generator defines one.
    /// Stored exactly as requested so later consumers see the same matrix.
    pub covariance: Option<Matrix>,
    /// Human-readable record of what was generated and from which seed.
    pub provenance: String,
}

/// Runs the generator described by `spec` with the given seed.
///
/// The same `(spec, seed)` pair always produces the identical dataset.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec {
        SyntheticSpec::GaussianLinear { n, dim, covariance, beta, noise_std } => {
            gaussian_linear(*n, *dim, covariance.as_deref(), beta.as_deref(), *noise_std, seed, &mut rng)
        }
        SyntheticSpec::TwoBlobs { n, dim, separation, std } => {
            two_blobs(*n, *dim, *separation, *std, seed, &mut rng)
        }
        SyntheticSpec::PiecewiseLinearCurve { n, segments, noise_std } => {
            piecewise_linear_curve(*n, *segments, *noise_std, seed, &mut rng)
        }
    }
}

/// `x ∼ N(0, Σ)`, `y = ⟨x, β⟩ + noise_std·ε`. Σ defaults to the identity and
/// must be symmetric positive definite; β defaults to a seeded unit vector.
fn gaussian_linear(
    n: usize,
    dim: usize,
    covariance: Option<&[Vec<f64>]>,
    beta: Option<&[f64]>,
    noise_std: f64,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticData> {
    let cov = match covariance {
        Some(rows) => Matrix::from_rows(rows).map_err(|e| CliError::Validation(e.to_string()))?,
        None => Matrix::identity(dim),
    };
    let chol = cholesky(&cov).map_err(|e| {
        CliError::Validation(format!("gaussian_linear covariance is not positive definite: {e}"))
    })?;

    let beta = match beta {
        Some(b) => {
            if b.len() != dim {
                return Err(CliError::Validation(format!(
                    "beta has {} entries but dim is {dim}",
                    b.len()
                )));
            }
            b.to_vec()
        }
        None => {
            let raw: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
            let norm = dot(&raw, &raw).sqrt().max(f64::MIN_POSITIVE);
            raw.iter().map(|v| v / norm).collect()
        }
    };

    let mut inputs = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        let x = chol.matvec(&z);
        let y = dot(&x, &beta) + noise_std * standard_normal(rng);
        inputs.push(x);
        values.push(y);
    }

    let inputs = Matrix::from_rows(&inputs).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(SyntheticData {
        dataset: Dataset::from_values(inputs, values)
            .map_err(|e| CliError::Validation(e.to_string()))?,
        covariance: Some(cov),
        provenance: format!("gaussian_linear(n={n}; dim={dim}; noise_std={noise_std}; seed={seed})"),
    })
}

/// Two spherical Gaussian blobs with centers `separation · std` apart along
/// the all-ones diagonal, labeled ±1 and interleaved so classes stay balanced.
fn two_blobs(
    n: usize,
    dim: usize,
    separation: f64,
    std: f64,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticData> {
    let offset = separation * std / 2.0 / (dim as f64).sqrt();
    let mut inputs = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let x: Vec<f64> = (0..dim).map(|_| sign * offset + std * standard_normal(rng)).collect();
        inputs.push(x);
        values.push(sign);
    }
    let inputs = Matrix::from_rows(&inputs).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(SyntheticData {
        dataset: Dataset::from_values(inputs, values)
            .map_err(|e| CliError::Validation(e.to_string()))?,
        covariance: None,
        provenance: format!(
            "two_blobs(n={n}; dim={dim}; separation={separation}; std={std}; seed={seed})"
        ),
    })
}

/// A random continuous piecewise-linear target sampled on the uniform grid
/// `x_i = i/(n−1)` over `[0, 1]`, with seeded knot values in `(−1, 1)`.
fn piecewise_linear_curve(
    n: usize,
    segments: usize,
    noise_std: f64,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticData> {
    if n < 2 {
        return Err(CliError::Validation("piecewise_linear_curve needs at least 2 points".into()));
    }
    let knots: Vec<f64> = (0..=segments).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut inputs = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let x = i as f64 / (n - 1) as f64;
        let scaled = x * segments as f64;
        let piece = (scaled.floor() as usize).min(segments - 1);
        let u = scaled - piece as f64;
        let y = knots[piece] * (1.0 - u) + knots[piece + 1] * u + noise_std * standard_normal(rng);
        inputs.push(vec![x]);
        values.push(y);
    }
    let inputs = Matrix::from_rows(&inputs).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(SyntheticData {
        dataset: Dataset::from_values(inputs, values)
            .map_err(|e| CliError::Validation(e.to_string()))?,
        covariance: None,
        provenance: format!(
            "piecewise_linear_curve(n={n}; segments={segments}; noise_std={noise_std}; seed={seed})"
        ),
    })
}

/// Replaces each label independently with probability `alpha`.
///
/// Class labels are redrawn uniformly over all classes; real-valued labels are
/// replaced by the *original* label of a uniformly chosen example. Either way
/// the redraw may coincide with the old label, so at `alpha = 1` every label
/// has been redrawn but a fraction survives by collision. Each index gets its
/// own RNG stream derived from `seed`, so the outcome at index `i` does not
/// depend on how many other labels were touched.
pub fn corrupt_labels(dataset: &Dataset, alpha: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CliError::Validation(format!("label_noise must lie in [0, 1], got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(dataset.clone());
    }
    let n = dataset.len();
    let labels = match dataset.labels() {
        Labels::Values(original) => {
            let mut values = original.clone();
            for (i, slot) in values.iter_mut().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                if rng.gen::<f64>() < alpha {
                    *slot = original[rng.gen_range(0..n)];
                }
            }
            Labels::Values(values)
        }
        Labels::Classes { values: original, num_classes } => {
            let mut values = original.clone();
            for (i, slot) in values.iter_mut().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                if rng.gen::<f64>() < alpha {
                    *slot = rng.gen_range(0..*num_classes);
                }
            }
            Labels::Classes { values, num_classes: *num_classes }
        }
    };
    Dataset::new(dataset.inputs().clone(), labels).map_err(|e| CliError::Run(e.to_string()))
}

/// Perceptron oracle: returns whether a separating hyperplane (with bias) was
/// found within `max_epochs` passes. Labels must be ±1 values. A `true` is a
/// certificate of linear separability; `false` only means none was found.
pub fn perceptron_separable(dataset: &Dataset, max_epochs: usize) -> Result<bool> {
    let Labels::Values(labels) = dataset.labels() else {
        return Err(CliError::Validation("perceptron oracle needs ±1 value labels".into()));
    };
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(CliError::Validation("perceptron oracle needs ±1 value labels".into()));
    }
    let d = dataset.input_dim();
    let mut w = vec![0.0; d + 1];
    for _ in 0..max_epochs {
        let mut mistakes = 0;
        for i in 0..dataset.len() {
            let x = dataset.input(i);
            let y = labels[i];
            let score = dot(&w[..d], x) + w[d];
            if y * score <= 0.0 {
                for (wj, xj) in w[..d].iter_mut().zip(x) {
                    *wj += y * xj;
                }
                w[d] += y;
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            return Ok(true);
        }
    }
    Ok(false)
}
