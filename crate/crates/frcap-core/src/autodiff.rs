//! Exact reverse-mode gradients for the fixed feedforward architecture.
//!
//! One reverse sweep per scalar seed: the loss seed `δ^{L+1} = ∂ℓ/∂f ⊙
//! D^{L+1}` yields `∂ℓ/∂W^t = O^t ⊗ δ^{t+1}` with the recursion
//! `δ^t = D^t ⊙ (W^t δ^{t+1})`. The same sweep seeded with a basis vector
//! gives per-output-unit Jacobian blocks, which feed the weight contraction
//! `Σ_{ij} (∂O^{s+1}_l/∂W^t_{ij})·W^t_{ij} = O^{s+1}_l(x)`, exact for every
//! pair `t ≤ s` because every activation satisfies `σ(z) = σ′(z)·z`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::{loss_output_grad, loss_value, Label, LossKind};
use crate::network::{ActivationKind, ForwardTrace, Network};

/// Per-layer gradient matrices, shaped like the network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    layers: Vec<Matrix>,
}

impl GradientSet {
    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layer(&self, t: usize) -> &Matrix {
        &self.layers[t]
    }

    /// Flattens in the same order as [`Network::flatten`]: layers in order,
    /// column-major within each layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layers.iter().map(|m| m.rows() * m.cols()).sum());
        for g in &self.layers {
            for j in 0..g.cols() {
                for i in 0..g.rows() {
                    out.push(g.get(i, j));
                }
            }
        }
        out
    }
}

/// Reverse sweep from a seed on `N^{upto}`; returns gradients for
/// `W^0 … W^{upto-1}`.
fn backward_from_seed(
    net: &Network,
    trace: &ForwardTrace,
    upto: usize,
    seed: Vec<f64>,
) -> Vec<Matrix> {
    let mut grads: Vec<Matrix> = Vec::with_capacity(upto);
    let mut delta = seed;
    for t in (0..upto).rev() {
        let o = trace.layer_output(t);
        grads.push(Matrix::from_fn(o.len(), delta.len(), |i, j| o[i] * delta[j]));
        if t > 0 {
            let back = net.weight(t).matvec(&delta);
            delta = back
                .iter()
                .zip(trace.mask(t))
                .map(|(b, d)| b * d)
                .collect();
        }
    }
    grads.reverse();
    grads
}

/// Exact gradients of `ℓ(f(x), ·)` with respect to every weight, given the
/// loss derivative `∂ℓ/∂f`.
pub fn backprop(net: &Network, x: &[f64], loss_grad: &[f64]) -> Result<GradientSet> {
    if loss_grad.len() != net.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "loss gradient length {} but network has {} outputs",
            loss_grad.len(),
            net.output_dim()
        )));
    }
    let trace = net.forward(x)?;
    let layers = net.weights().len();
    let seed: Vec<f64> = loss_grad
        .iter()
        .zip(trace.mask(layers))
        .map(|(g, d)| g * d)
        .collect();
    Ok(GradientSet {
        layers: backward_from_seed(net, &trace, layers, seed),
    })
}

/// One row of the contraction table: the layer pair `(t, s)` and the value
/// `Σ_{ij} (∂O^{s+1}_l/∂W^t_{ij})·W^t_{ij}` for each unit `l` of layer `s+1`.
#[derive(Debug, Clone)]
pub struct ContractionEntry {
    pub t: usize,
    pub s: usize,
    pub values: Vec<f64>,
}

/// Weight contraction of every intermediate Jacobian.
///
/// Returns one entry per pair `0 ≤ t ≤ s ≤ L` (each claiming to equal
/// `O^{s+1}(x)`), plus the total `Σ_t` over the output layer, which equals
/// `(L+1)·f(x)`.
pub fn output_jacobian_contraction(
    net: &Network,
    x: &[f64],
) -> Result<(Vec<ContractionEntry>, Vec<f64>)> {
    let trace = net.forward(x)?;
    let depth = net.depth();
    let mut entries = Vec::new();
    let mut total = vec![0.0; net.output_dim()];
    for s in 0..=depth {
        let width = trace.activations[s].len();
        let mut per_t: Vec<Vec<f64>> = vec![vec![0.0; width]; s + 1];
        for l in 0..width {
            let mut seed = vec![0.0; width];
            seed[l] = trace.mask(s + 1)[l];
            let grads = backward_from_seed(net, &trace, s + 1, seed);
            for (t, g) in grads.iter().enumerate() {
                let w = net.weight(t);
                let mut acc = 0.0;
                for (gv, wv) in g.as_slice().iter().zip(w.as_slice()) {
                    acc += gv * wv;
                }
                per_t[t][l] = acc;
            }
        }
        for (t, values) in per_t.into_iter().enumerate() {
            if s == depth {
                for (tot, v) in total.iter_mut().zip(&values) {
                    *tot += v;
                }
            }
            entries.push(ContractionEntry { t, s, values });
        }
    }
    Ok((entries, total))
}

/// Central second difference of `t ↦ f_{(1+t)θ}(x)` at `t = 0`, one value
/// per output unit. For a depth-`L` net this approaches `L(L+1)·f(x)` at
/// rate `O(h²)` (exactly, for `L ≤ 2`).
pub fn directional_second_derivative(net: &Network, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "step h must be positive and finite, got {h}"
        )));
    }
    let scale = |c: f64| -> Result<Vec<f64>> {
        let weights = net.weights().iter().map(|w| w.scaled(c)).collect();
        let scaled = net.with_weights(weights)?;
        Ok(scaled.forward(x)?.output().to_vec())
    };
    let plus = scale(1.0 + h)?;
    let base = net.forward(x)?.output().to_vec();
    let minus = scale(1.0 - h)?;
    Ok(plus
        .iter()
        .zip(base.iter().zip(&minus))
        .map(|(p, (b, m))| (p - 2.0 * b + m) / (h * h))
        .collect())
}

/// One flattened loss gradient per example; rows of `inputs` are examples.
pub fn per_sample_grads(
    net: &Network,
    inputs: &Matrix,
    labels: &[Label],
    loss: LossKind,
) -> Result<Vec<Vec<f64>>> {
    if inputs.rows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if inputs.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs but {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(inputs.rows());
    for (i, &y) in labels.iter().enumerate() {
        let x = inputs.row(i);
        let f = net.forward(x)?.output().to_vec();
        let lg = loss_output_grad(loss, &f, y)?;
        out.push(backprop(net, x, &lg)?.flatten());
    }
    Ok(out)
}

/// Mean loss and mean flattened gradient over a batch.
pub fn batch_loss_and_grad(
    net: &Network,
    inputs: &Matrix,
    labels: &[Label],
    loss: LossKind,
) -> Result<(f64, Vec<f64>)> {
    if inputs.rows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if inputs.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs but {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    let n = inputs.rows() as f64;
    let mut total_loss = 0.0;
    let mut grad = vec![0.0; net.num_params()];
    for (i, &y) in labels.iter().enumerate() {
        let x = inputs.row(i);
        let f = net.forward(x)?.output().to_vec();
        total_loss += loss_value(loss, &f, y)?;
        let lg = loss_output_grad(loss, &f, y)?;
        for (g, v) in grad.iter_mut().zip(backprop(net, x, &lg)?.flatten()) {
            *g += v;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total_loss / n, grad))
}

/// Smallest pre-activation magnitude across layers with a kinked activation
/// (ReLU or LeakyReLU); infinite when no such layer exists. Finite-difference
/// checks resample inputs while this is below their safety margin.
pub fn min_kink_distance(net: &Network, trace: &ForwardTrace) -> f64 {
    let mut min = f64::INFINITY;
    for (t, n) in trace.pre_activations.iter().enumerate() {
        match net.activation(t) {
            ActivationKind::Relu | ActivationKind::LeakyRelu(_) => {
                for v in n {
                    min = min.min(v.abs());
                }
            }
            ActivationKind::Linear => {}
        }
    }
    min
}
