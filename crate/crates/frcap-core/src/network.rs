//! Feedforward rectified networks with zero biases.
//!
//! A network of depth `L` is a chain of `L + 1` weight matrices
//! `W^0: p×k₁, …, W^L: k_L×K` evaluated in the row-vector convention:
//! `O^0 = x`, `N^{t+1} = O^t W^t`, `O^{t+1} = σ_{t+1}(N^{t+1})`, output
//! `f(x) = O^{L+1}`. Every supported activation satisfies `σ(z) = σ′(z)·z`
//! pointwise, which is what makes the gradient contraction identities in
//! [`crate::autodiff`] exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Elementwise activation; all kinds satisfy `σ(z) = σ′(z)·z`.
///
/// The derivative at `z = 0` is fixed by convention: 0 for ReLU, `α` for
/// LeakyReLU, 1 for Linear. This keeps the identity exact at the kink and
/// makes ReLU masks 0/1-valued.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Linear,
}

impl ActivationKind {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu(alpha) => {
                if z > 0.0 {
                    z
                } else {
                    alpha * z
                }
            }
            ActivationKind::Linear => z,
        }
    }

    /// `σ′(z)` with the conventions above; for ReLU/LeakyReLU these are the
    /// diagonal mask entries `D`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu(alpha) => {
                if z > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            ActivationKind::Linear => 1.0,
        }
    }

    fn validate(self) -> Result<()> {
        if let ActivationKind::LeakyRelu(alpha) = self {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "leaky_relu slope must lie in (0,1), got {alpha}"
                )));
            }
        }
        Ok(())
    }
}

/// Full record of one forward pass.
///
/// Layer indices follow the 1-based convention: `pre_activations[t-1]` is
/// `N^t`, `activations[t-1]` is `O^t`, `masks[t-1]` holds the diagonal of
/// `D^t = diag(σ′(N^t))`, for `t = 1..L+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
    pub masks: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// Network output `f(x) = O^{L+1}`.
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has at least one layer")
    }

    /// `O^t`, with `O^0` the raw input.
    pub fn layer_output(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.input
        } else {
            &self.activations[t - 1]
        }
    }

    /// Diagonal of `D^t`, `t = 1..L+1`.
    pub fn mask(&self, t: usize) -> &[f64] {
        &self.masks[t - 1]
    }
}

/// Zero-bias feedforward network.
///
/// Stores one activation per weight matrix (applied after it); the plain
/// constructors cover the common "one hidden kind + linear output" case,
/// while [`Network::convex_combine`] needs the per-layer generality to keep a
/// former output layer linear after it becomes interior.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    weights: Vec<Matrix>,
    activations: Vec<ActivationKind>,
    /// 1.0 where the entry is a free parameter, 0.0 where it is hard-coded
    /// zero (cross blocks introduced by `convex_combine`). `None` means all
    /// entries are free.
    trainable: Option<Vec<Matrix>>,
}

impl Network {
    /// Network applying `hidden` after every matrix except the last, which
    /// gets `output`.
    pub fn new(weights: Vec<Matrix>, hidden: ActivationKind, output: ActivationKind) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::ShapeMismatch("network needs at least one weight matrix".into()));
        }
        let mut activations = vec![hidden; n - 1];
        activations.push(output);
        Self::with_layer_activations(weights, activations)
    }

    /// ReLU hidden layers, linear output.
    pub fn relu(weights: Vec<Matrix>) -> Result<Self> {
        Self::new(weights, ActivationKind::Relu, ActivationKind::Linear)
    }

    /// Linear activations throughout (a deep linear network).
    pub fn linear(weights: Vec<Matrix>) -> Result<Self> {
        Self::new(weights, ActivationKind::Linear, ActivationKind::Linear)
    }

    /// General constructor with one activation per weight matrix.
    pub fn with_layer_activations(weights: Vec<Matrix>, activations: Vec<ActivationKind>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::ShapeMismatch("network needs at least one weight matrix".into()));
        }
        if activations.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weight matrices but {} activations",
                weights.len(),
                activations.len()
            )));
        }
        for a in &activations {
            a.validate()?;
        }
        for t in 0..weights.len() - 1 {
            if weights[t].cols() != weights[t + 1].rows() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {t} has {} outputs but layer {} expects {} inputs",
                    weights[t].cols(),
                    t + 1,
                    weights[t + 1].rows()
                )));
            }
        }
        if weights.iter().any(|w| w.rows() == 0 || w.cols() == 0) {
            return Err(Error::ShapeMismatch("zero-width layer".into()));
        }
        Ok(Self {
            weights,
            activations,
            trainable: None,
        })
    }

    /// Random network with entries uniform in `±scale/√fan_in`.
    pub fn random_uniform(
        dims: &[usize],
        hidden: ActivationKind,
        output: ActivationKind,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::ShapeMismatch("dims must list input and output sizes".into()));
        }
        let weights = dims
            .windows(2)
            .map(|d| {
                let bound = scale / (d[0] as f64).sqrt();
                Matrix::from_fn(d[0], d[1], |_, _| rng.gen::<f64>() * 2.0 * bound - bound)
            })
            .collect();
        Self::new(weights, hidden, output)
    }

    /// Depth `L`: the number of hidden layers, one less than the number of
    /// weight matrices.
    pub fn depth(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weight(&self, t: usize) -> &Matrix {
        &self.weights[t]
    }

    pub fn activations(&self) -> &[ActivationKind] {
        &self.activations
    }

    /// Activation applied after `W^t`.
    pub fn activation(&self, t: usize) -> ActivationKind {
        self.activations[t]
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("nonempty").cols()
    }

    /// Layer widths `[p, k₁, …, k_L, K]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.weights.iter().map(Matrix::rows).collect();
        d.push(self.output_dim());
        d
    }

    /// Total parameter count `d = p·k₁ + Σ k_i·k_{i+1} + k_L·K`.
    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum()
    }

    /// Per-layer 0/1 masks marking free parameters, if any entries are
    /// hard-coded zero.
    pub fn trainable_mask(&self) -> Option<&[Matrix]> {
        self.trainable.as_deref()
    }

    /// Replaces the weights, keeping activations and the trainable mask.
    /// Entries the mask pins to zero are forced back to zero.
    pub fn with_weights(&self, weights: Vec<Matrix>) -> Result<Self> {
        let mut net = Self::with_layer_activations(weights, self.activations.clone())?;
        if self.dims() != net.dims() {
            return Err(Error::ShapeMismatch("replacement weights change layer sizes".into()));
        }
        if let Some(masks) = &self.trainable {
            for (w, m) in net.weights.iter_mut().zip(masks) {
                for (wv, mv) in w.as_mut_slice().iter_mut().zip(m.as_slice()) {
                    if *mv == 0.0 {
                        *wv = 0.0;
                    }
                }
            }
            net.trainable = self.trainable.clone();
        }
        Ok(net)
    }

    /// Forward pass recording every pre-activation, activation, and mask.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} but network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("input entry {bad}")));
        }
        let layers = self.weights.len();
        let mut pre = Vec::with_capacity(layers);
        let mut act = Vec::with_capacity(layers);
        let mut masks = Vec::with_capacity(layers);
        let mut o: Vec<f64> = x.to_vec();
        for (w, a) in self.weights.iter().zip(&self.activations) {
            let n = w.vecmat(&o);
            let d: Vec<f64> = n.iter().map(|&z| a.derivative(z)).collect();
            o = n.iter().map(|&z| a.apply(z)).collect();
            pre.push(n);
            masks.push(d);
            act.push(o.clone());
        }
        Ok(ForwardTrace {
            input: x.to_vec(),
            pre_activations: pre,
            activations: act,
            masks,
        })
    }

    /// Convenience single-output evaluation.
    pub fn forward_scalar(&self, x: &[f64]) -> Result<f64> {
        let t = self.forward(x)?;
        let out = t.output();
        if out.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "forward_scalar on a network with {} outputs",
                out.len()
            )));
        }
        Ok(out[0])
    }

    /// Multiplies the incoming column of one hidden node by `c` and divides
    /// its outgoing row by `c`. For positively homogeneous activations
    /// (ReLU/LeakyReLU, and Linear trivially) the realized function is
    /// unchanged.
    ///
    /// `layer` is 1-based over hidden layers: `1 ≤ layer ≤ L`.
    pub fn nodewise_rescale(&self, layer: usize, node: usize, c: f64) -> Result<Network> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "rescale factor must be positive and finite, got {c}"
            )));
        }
        let depth = self.depth();
        if layer < 1 || layer > depth {
            return Err(Error::InvalidParameter(format!(
                "layer {layer} outside hidden range 1..={depth}"
            )));
        }
        let width = self.weights[layer - 1].cols();
        if node >= width {
            return Err(Error::InvalidParameter(format!(
                "node {node} outside layer width {width}"
            )));
        }
        let mut net = self.clone();
        let incoming = &mut net.weights[layer - 1];
        for i in 0..incoming.rows() {
            let v = incoming.get(i, node);
            incoming.set(i, node, v * c);
        }
        let outgoing = &mut net.weights[layer];
        for j in 0..outgoing.cols() {
            let v = outgoing.get(node, j);
            outgoing.set(node, j, v / c);
        }
        Ok(net)
    }

    /// Realizes `λ·f₁ + (1−λ)·f₂` as one network of depth `L + 1`.
    ///
    /// The two nets sit side by side: first layers concatenated, interior
    /// layers block-diagonal with cross blocks hard-coded zero, former output
    /// layers kept linear at the now-interior position, and a fresh linear
    /// output layer with weights `(λ, 1−λ)`. The hard zeros are recorded in
    /// the trainable mask so optimizers leave them untouched.
    pub fn convex_combine(net1: &Network, net2: &Network, lambda: f64) -> Result<Network> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in [0,1], got {lambda}"
            )));
        }
        if net1.input_dim() != net2.input_dim() {
            return Err(Error::ShapeMismatch("input dimensions differ".into()));
        }
        if net1.output_dim() != 1 || net2.output_dim() != 1 {
            return Err(Error::ShapeMismatch("convex_combine needs single-output networks".into()));
        }
        if net1.depth() != net2.depth() {
            return Err(Error::ShapeMismatch("depths differ".into()));
        }
        if net1.activations != net2.activations {
            return Err(Error::ShapeMismatch("per-layer activations differ".into()));
        }
        let layers = net1.weights.len();
        let mask1 = net1.trainable_or_ones();
        let mask2 = net2.trainable_or_ones();

        let mut weights = Vec::with_capacity(layers + 1);
        let mut masks = Vec::with_capacity(layers + 1);
        // First layer: horizontal concatenation, all entries free.
        let (a, b) = (&net1.weights[0], &net2.weights[0]);
        weights.push(Matrix::from_fn(a.rows(), a.cols() + b.cols(), |i, j| {
            if j < a.cols() {
                a.get(i, j)
            } else {
                b.get(i, j - a.cols())
            }
        }));
        masks.push(Matrix::from_fn(a.rows(), a.cols() + b.cols(), |i, j| {
            if j < a.cols() {
                mask1[0].get(i, j)
            } else {
                mask2[0].get(i, j - a.cols())
            }
        }));
        // Interior layers (including former output layers): block diagonal.
        for t in 1..layers {
            let (a, b) = (&net1.weights[t], &net2.weights[t]);
            weights.push(Matrix::from_fn(
                a.rows() + b.rows(),
                a.cols() + b.cols(),
                |i, j| {
                    if i < a.rows() && j < a.cols() {
                        a.get(i, j)
                    } else if i >= a.rows() && j >= a.cols() {
                        b.get(i - a.rows(), j - a.cols())
                    } else {
                        0.0
                    }
                },
            ));
            masks.push(Matrix::from_fn(
                a.rows() + b.rows(),
                a.cols() + b.cols(),
                |i, j| {
                    if i < a.rows() && j < a.cols() {
                        mask1[t].get(i, j)
                    } else if i >= a.rows() && j >= a.cols() {
                        mask2[t].get(i - a.rows(), j - a.cols())
                    } else {
                        0.0
                    }
                },
            ));
        }
        // New output layer combining the two scalar outputs.
        weights.push(Matrix::new(2, 1, vec![lambda, 1.0 - lambda])?);
        masks.push(Matrix::new(2, 1, vec![1.0, 1.0])?);

        let mut activations = net1.activations.clone();
        activations.push(ActivationKind::Linear);
        let mut net = Network::with_layer_activations(weights, activations)?;
        net.trainable = Some(masks);
        Ok(net)
    }

    fn trainable_or_ones(&self) -> Vec<Matrix> {
        match &self.trainable {
            Some(m) => m.clone(),
            None => self
                .weights
                .iter()
                .map(|w| Matrix::from_fn(w.rows(), w.cols(), |_, _| 1.0))
                .collect(),
        }
    }

    /// Flattens all weights into one vector: layers in order, column-major
    /// within each layer (`W^t[:,0]` top to bottom, then `W^t[:,1]`, …).
    pub fn flatten(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.num_params());
        for w in &self.weights {
            for j in 0..w.cols() {
                for i in 0..w.rows() {
                    theta.push(w.get(i, j));
                }
            }
        }
        theta
    }

    /// Rebuilds a network with this one's shape and activations from a flat
    /// parameter vector in [`Network::flatten`] order.
    pub fn unflatten(&self, theta: &[f64]) -> Result<Network> {
        if theta.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector length {} but network has {} parameters",
                theta.len(),
                self.num_params()
            )));
        }
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut offset = 0;
        for w in &self.weights {
            let (r, c) = (w.rows(), w.cols());
            let block = &theta[offset..offset + r * c];
            weights.push(Matrix::from_fn(r, c, |i, j| block[j * r + i]));
            offset += r * c;
        }
        let mut net = Network::with_layer_activations(weights, self.activations.clone())?;
        net.trainable = self.trainable.clone();
        Ok(net)
    }

    /// Serializes to the versioned JSON document
    /// `{"schema": 1, "dims": […], "activation": …, "weights": [[…], …]}`.
    ///
    /// Each layer's weights are one flat row-major array; `activation` is a
    /// single kind (hidden layers share it, output linear) when that is
    /// faithful, otherwise a per-layer array.
    pub fn to_json(&self) -> serde_json::Value {
        let layers = self.weights.len();
        let uniform_hidden = layers >= 1
            && *self.activations.last().expect("nonempty") == ActivationKind::Linear
            && self.activations[..layers - 1]
                .iter()
                .all(|a| *a == self.activations[0]);
        let activation = if layers == 1 || uniform_hidden {
            let hidden = if layers == 1 {
                ActivationKind::Linear
            } else {
                self.activations[0]
            };
            ActivationField::Single(hidden)
        } else {
            ActivationField::PerLayer(self.activations.clone())
        };
        let doc = NetworkDoc {
            schema: 1,
            dims: self.dims(),
            activation,
            weights: self
                .weights
                .iter()
                .map(|w| w.as_slice().to_vec())
                .collect(),
        };
        serde_json::to_value(doc).expect("network document serializes")
    }

    /// Parses the schema-1 JSON document produced by [`Network::to_json`].
    pub fn from_json(value: &serde_json::Value) -> Result<Network> {
        let doc: NetworkDoc = serde_json::from_value(value.clone())?;
        if doc.schema != 1 {
            return Err(Error::Unsupported(format!(
                "network document schema {} (this build reads schema 1)",
                doc.schema
            )));
        }
        if doc.dims.len() < 2 {
            return Err(Error::ShapeMismatch("dims must list input and output sizes".into()));
        }
        let layers = doc.dims.len() - 1;
        if doc.weights.len() != layers {
            return Err(Error::ShapeMismatch(format!(
                "{} layers from dims but {} weight arrays",
                layers,
                doc.weights.len()
            )));
        }
        let mut weights = Vec::with_capacity(layers);
        for (t, flat) in doc.weights.into_iter().enumerate() {
            weights.push(Matrix::new(doc.dims[t], doc.dims[t + 1], flat)?);
        }
        let activations = match doc.activation {
            ActivationField::Single(hidden) => {
                let mut a = vec![hidden; layers.saturating_sub(1)];
                a.push(ActivationKind::Linear);
                a
            }
            ActivationField::PerLayer(a) => a,
        };
        Network::with_layer_activations(weights, activations)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ActivationField {
    Single(ActivationKind),
    PerLayer(Vec<ActivationKind>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    schema: u32,
    dims: Vec<usize>,
    activation: ActivationField,
    weights: Vec<Vec<f64>>,
}
