//! Trainers and stationarity checks.
//!
//! Four optimizers over the flattened parameter vector: plain SGD, heavy-ball
//! momentum, Adam, and a damped natural-gradient step that solves
//! `(Î(θ) + λI)δ = ∇L̂` matrix-free by conjugate gradient on Fisher-vector
//! products built from per-sample gradients — the d×d Fisher matrix is never
//! formed.
//!
//! Alongside the trainers sit two executable stationarity results: at a
//! hinge-loss stationary point of a separating network every margin is at
//! least one ([`check_large_margin`]), and at a squared-loss stationary point
//! of a deep linear network the collapsed weight vector `w = ∏Wᵗ` is
//! orthogonal to the normal-equations residual ([`check_linear_stationarity`]).

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backprop, batch_loss_and_grad, per_sample_grads};
use crate::capacity::{
    flat_norm, fr_norm_identity, path_norm, DataDistribution, FlatNormKind,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::losses::{loss_output_grad, Label, LossKind};
use crate::network::{ActivationKind, Network};

/// How many times a failed conjugate-gradient solve may escalate the
/// damping by ×10 before the step gives up.
const MAX_DAMPING_ESCALATIONS: usize = 6;

/// Which distribution the Fisher matrix in a natural-gradient step uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FisherMode {
    /// Gradients at the observed labels (the default).
    Empirical,
    /// Gradients at labels drawn from the model's predictive distribution.
    ModelSampled { samples_per_input: usize, seed: u64 },
}

impl Default for FisherMode {
    fn default() -> Self {
        FisherMode::Empirical
    }
}

fn default_cg_tol() -> f64 {
    1e-10
}
fn default_cg_max_iter() -> usize {
    200
}

/// Optimizer selection with per-kind hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum {
        beta: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    NaturalGradient {
        /// `None` selects the adaptive default `1e−3·trace(Î)/d`.
        #[serde(default)]
        damping: Option<f64>,
        #[serde(default = "default_cg_tol")]
        cg_tol: f64,
        #[serde(default = "default_cg_max_iter")]
        cg_max_iter: usize,
        #[serde(default)]
        fisher: FisherMode,
    },
}

impl OptimizerKind {
    /// Adam with the customary defaults β₁=0.9, β₂=0.999, ε=1e−8.
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Natural gradient with adaptive damping and default CG settings.
    pub fn natural_gradient_default() -> Self {
        OptimizerKind::NaturalGradient {
            damping: None,
            cg_tol: default_cg_tol(),
            cg_max_iter: default_cg_max_iter(),
            fisher: FisherMode::Empirical,
        }
    }
}

fn default_epsilon_grad() -> f64 {
    1e-6
}
fn default_record_every() -> usize {
    1
}

/// Everything a training run needs. The seed fixes all randomness:
/// shuffling order and any model-sampled Fisher draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    pub loss: LossKind,
    /// Training stops early once the full-dataset gradient norm falls to
    /// this threshold.
    #[serde(default = "default_epsilon_grad")]
    pub epsilon_grad: f64,
    /// Epoch cadence for history records (the final epoch always records).
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// When set, each record also carries the Fisher-Rao norm in natural
    /// units, the spectral flat norm, and the q=1 path norm.
    #[serde(default)]
    pub record_norms: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be ≥ 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be ≥ 1".into()));
        }
        if !(self.epsilon_grad > 0.0) {
            return Err(Error::InvalidParameter(
                "epsilon_grad must be positive".into(),
            ));
        }
        match self.optimizer {
            OptimizerKind::Sgd => {}
            OptimizerKind::Momentum { beta } => {
                if !(0.0..1.0).contains(&beta) {
                    return Err(Error::InvalidParameter(format!(
                        "momentum beta must lie in [0, 1), got {beta}"
                    )));
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::InvalidParameter(format!(
                        "Adam betas must lie in [0, 1), got ({beta1}, {beta2})"
                    )));
                }
                if !(epsilon > 0.0) {
                    return Err(Error::InvalidParameter(
                        "Adam epsilon must be positive".into(),
                    ));
                }
            }
            OptimizerKind::NaturalGradient {
                damping,
                cg_tol,
                cg_max_iter,
                fisher,
            } => {
                if let Some(lambda) = damping {
                    if !(lambda > 0.0) || !lambda.is_finite() {
                        return Err(Error::InvalidParameter(format!(
                            "natural-gradient damping must be positive, got {lambda}"
                        )));
                    }
                }
                if !(cg_tol > 0.0) {
                    return Err(Error::InvalidParameter("cg_tol must be positive".into()));
                }
                if cg_max_iter == 0 {
                    return Err(Error::InvalidParameter("cg_max_iter must be ≥ 1".into()));
                }
                if let FisherMode::ModelSampled {
                    samples_per_input, ..
                } = fisher
                {
                    if samples_per_input == 0 {
                        return Err(Error::InvalidParameter(
                            "samples_per_input must be ≥ 1".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One history entry, recorded after the epoch's updates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fr_natural: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_q1: Option<f64>,
    pub wall_clock_secs: f64,
}

/// Per-epoch training records in epoch order.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    fn push(&mut self, record: EpochRecord) {
        if let Some(prev) = self.records.last() {
            debug_assert!(record.epoch > prev.epoch);
        }
        self.records.push(record);
    }

    /// CSV rendering with a header row; optional columns are left empty.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("epoch,train_loss,grad_norm,fr_natural,spectral,path_q1,wall_clock_secs\n");
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                r.grad_norm,
                opt(&r.fr_natural),
                opt(&r.spectral),
                opt(&r.path_q1),
                r.wall_clock_secs
            ));
        }
        out
    }
}

/// Final state of a training run. A diverging run (non-finite loss or
/// parameters) stops early: `net` is the last finite iterate and
/// `divergence` carries the diagnostic.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: Network,
    pub history: TrainHistory,
    pub divergence: Option<String>,
    /// Non-fatal diagnostics, e.g. natural-gradient damping escalations.
    pub warnings: Vec<String>,
}

fn batch_grad(net: &Network, batch: &Dataset, loss: LossKind) -> Result<(f64, Vec<f64>)> {
    batch_loss_and_grad(net, batch.inputs(), &batch.label_vec(), loss)
}

fn apply_update(net: &Network, theta: &[f64]) -> Result<Network> {
    let raw = net.unflatten(theta)?;
    net.with_weights(raw.weights().to_vec())
}

/// One plain gradient step `θ ← θ − lr·∇L̂` on the batch.
pub fn sgd_step(net: &Network, batch: &Dataset, config: &TrainConfig) -> Result<Network> {
    let (_, grad) = batch_grad(net, batch, config.loss)?;
    let mut theta = net.flatten();
    for (t, g) in theta.iter_mut().zip(&grad) {
        *t -= config.lr * g;
    }
    apply_update(net, &theta)
}

/// One heavy-ball step: `v ← β·v + ∇L̂; θ ← θ − lr·v`. With β = 0 this is
/// exactly [`sgd_step`]. The caller owns the velocity buffer.
pub fn momentum_step(
    net: &Network,
    batch: &Dataset,
    config: &TrainConfig,
    velocity: &mut Vec<f64>,
) -> Result<Network> {
    let beta = match config.optimizer {
        OptimizerKind::Momentum { beta } => beta,
        _ => {
            return Err(Error::InvalidParameter(
                "momentum_step needs a momentum optimizer config".into(),
            ))
        }
    };
    let (_, grad) = batch_grad(net, batch, config.loss)?;
    if velocity.len() != grad.len() {
        return Err(Error::ShapeMismatch(format!(
            "velocity has length {}, gradient {}",
            velocity.len(),
            grad.len()
        )));
    }
    let mut theta = net.flatten();
    for ((v, g), t) in velocity.iter_mut().zip(&grad).zip(theta.iter_mut()) {
        *v = beta * *v + g;
        *t -= config.lr * *v;
    }
    apply_update(net, &theta)
}

/// First and second moment buffers for Adam.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step. The caller owns the moment buffers.
pub fn adam_step(
    net: &Network,
    batch: &Dataset,
    config: &TrainConfig,
    state: &mut AdamState,
) -> Result<Network> {
    let (beta1, beta2, eps) = match config.optimizer {
        OptimizerKind::Adam {
            beta1,
            beta2,
            epsilon,
        } => (beta1, beta2, epsilon),
        _ => {
            return Err(Error::InvalidParameter(
                "adam_step needs an Adam optimizer config".into(),
            ))
        }
    };
    let (_, grad) = batch_grad(net, batch, config.loss)?;
    if state.m.len() != grad.len() {
        return Err(Error::ShapeMismatch(format!(
            "Adam state has length {}, gradient {}",
            state.m.len(),
            grad.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    let mut theta = net.flatten();
    for (i, g) in grad.iter().enumerate() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= config.lr * m_hat / (v_hat.sqrt() + eps);
    }
    apply_update(net, &theta)
}

/// Result of one natural-gradient step.
#[derive(Clone, Debug)]
pub struct NgOutcome {
    pub net: Network,
    /// Damping actually used (after any escalation).
    pub damping: f64,
    pub cg_iterations: usize,
    pub damping_escalated: bool,
    pub warning: Option<String>,
}

/// One damped natural-gradient step: solves `(Î + λI)δ = ∇L̂` by conjugate
/// gradient on Fisher-vector products `v ↦ Σᵢ wᵢ gᵢ⟨gᵢ, v⟩ + λv`, then
/// `θ ← θ − lr·δ`. When CG stalls the damping escalates ×10 (with a
/// warning) up to a bounded number of times.
pub fn natural_gradient_step(
    net: &Network,
    batch: &Dataset,
    config: &TrainConfig,
) -> Result<NgOutcome> {
    let (damping, cg_tol, cg_max_iter, fisher) = match config.optimizer {
        OptimizerKind::NaturalGradient {
            damping,
            cg_tol,
            cg_max_iter,
            fisher,
        } => (damping, cg_tol, cg_max_iter, fisher),
        _ => {
            return Err(Error::InvalidParameter(
                "natural_gradient_step needs a natural-gradient optimizer config".into(),
            ))
        }
    };
    if let Some(lambda) = damping {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(
                "natural-gradient damping must be positive".into(),
            ));
        }
    }
    let (_, grad) = batch_grad(net, batch, config.loss)?;
    let d = grad.len();

    // Weighted per-sample gradients defining the Fisher quadratic form.
    let weighted: Vec<(f64, Vec<f64>)> = match fisher {
        FisherMode::Empirical => {
            let gs = per_sample_grads(net, batch.inputs(), &batch.label_vec(), config.loss)?;
            let w = 1.0 / gs.len() as f64;
            gs.into_iter().map(|g| (w, g)).collect()
        }
        FisherMode::ModelSampled {
            samples_per_input,
            seed,
        } => {
            let dist = DataDistribution::ModelSampled {
                dataset: batch,
                samples_per_input,
                seed,
            };
            let samples = dist.resolve(net, config.loss)?;
            let mut out = Vec::with_capacity(samples.len());
            for s in &samples {
                let x = batch.input(s.input_index);
                let f = net.forward(x)?;
                let g = loss_output_grad(config.loss, f.output(), s.label)?;
                out.push((s.weight, backprop(net, x, &g)?.flatten()));
            }
            out
        }
    };

    let trace: f64 = weighted.iter().map(|(w, g)| w * dot(g, g)).sum();
    let mut lambda = damping.unwrap_or(1e-3 * trace / d as f64);

    if norm2(&grad) == 0.0 {
        return Ok(NgOutcome {
            net: net.clone(),
            damping: lambda,
            cg_iterations: 0,
            damping_escalated: false,
            warning: None,
        });
    }
    if !(lambda > 0.0) {
        // Zero Fisher trace with a nonzero gradient cannot happen (the
        // gradient is the weighted mean of the gᵢ), but guard anyway.
        lambda = 1e-12;
    }

    let mut escalations = 0;
    let (delta, iterations) = loop {
        let lam = lambda;
        let fvp = |v: &[f64]| {
            let mut out: Vec<f64> = v.iter().map(|x| lam * x).collect();
            for (w, g) in &weighted {
                let coeff = w * dot(g, v);
                for (o, gi) in out.iter_mut().zip(g) {
                    *o += coeff * gi;
                }
            }
            out
        };
        let (x, iters, converged) = conjugate_gradient(fvp, &grad, cg_tol, cg_max_iter);
        if converged {
            break (x, iters);
        }
        escalations += 1;
        if escalations > MAX_DAMPING_ESCALATIONS {
            return Err(Error::NoConvergence(format!(
                "natural-gradient CG failed after {MAX_DAMPING_ESCALATIONS} damping \
                 escalations (final λ = {lambda:e})"
            )));
        }
        lambda *= 10.0;
    };

    let mut theta = net.flatten();
    for (t, dlt) in theta.iter_mut().zip(&delta) {
        *t -= config.lr * dlt;
    }
    let warning = (escalations > 0).then(|| {
        format!(
            "natural-gradient CG stalled; damping escalated {escalations}× to λ = {lambda:e}"
        )
    });
    Ok(NgOutcome {
        net: apply_update(net, &theta)?,
        damping: lambda,
        cg_iterations: iterations,
        damping_escalated: escalations > 0,
        warning,
    })
}

/// Standard conjugate gradient for a symmetric positive-definite operator.
/// Returns (solution, iterations, converged).
fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, usize, bool) {
    let bnorm = norm2(b);
    let mut x = vec![0.0; b.len()];
    if bnorm == 0.0 {
        return (x, 0, true);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for iter in 0..max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return (x, iter, false);
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() <= tol * bnorm {
            return (x, iter + 1, true);
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    (x, max_iter, false)
}

fn finite_weights(net: &Network) -> bool {
    net.weights()
        .iter()
        .all(|w| w.as_slice().iter().all(|v| v.is_finite()))
}

/// Run `config.epochs` epochs of minibatch training with seeded shuffling.
/// Stops early at stationarity (full-dataset gradient norm ≤
/// `epsilon_grad`) or on divergence, which is reported in the outcome
/// rather than as an error.
pub fn train(net: &Network, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current = net.clone();
    let mut velocity = vec![0.0; net.num_params()];
    let mut adam = AdamState::new(net.num_params());
    let mut history = TrainHistory::default();
    let mut warnings = Vec::new();
    let mut divergence = None;
    let mut indices: Vec<usize> = (0..dataset.len()).collect();

    'epochs: for epoch in 0..config.epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(config.batch_size) {
            let batch = dataset.subset(chunk)?;
            let next = match config.optimizer {
                OptimizerKind::Sgd => sgd_step(&current, &batch, config)?,
                OptimizerKind::Momentum { .. } => {
                    momentum_step(&current, &batch, config, &mut velocity)?
                }
                OptimizerKind::Adam { .. } => adam_step(&current, &batch, config, &mut adam)?,
                OptimizerKind::NaturalGradient { .. } => {
                    let out = natural_gradient_step(&current, &batch, config)?;
                    if let Some(w) = out.warning {
                        warnings.push(format!("epoch {epoch}: {w}"));
                    }
                    out.net
                }
            };
            if !finite_weights(&next) {
                divergence = Some(format!(
                    "non-finite parameters at epoch {epoch}; keeping the last finite iterate"
                ));
                break 'epochs;
            }
            current = next;
        }

        let (loss, grad) = batch_grad(&current, dataset, config.loss)?;
        if !loss.is_finite() {
            divergence = Some(format!("non-finite training loss at epoch {epoch}"));
            break;
        }
        let grad_norm = norm2(&grad);
        let stationary = grad_norm <= config.epsilon_grad;
        if epoch % config.record_every == 0 || epoch + 1 == config.epochs || stationary {
            history.push(record(&current, dataset, config, epoch, loss, grad_norm, &started)?);
        }
        if stationary {
            break;
        }
    }

    Ok(TrainOutcome {
        net: current,
        history,
        divergence,
        warnings,
    })
}

fn record(
    net: &Network,
    dataset: &Dataset,
    config: &TrainConfig,
    epoch: usize,
    train_loss: f64,
    grad_norm: f64,
    started: &Instant,
) -> Result<EpochRecord> {
    let (fr_natural, spectral, path_q1) = if config.record_norms {
        let dist = DataDistribution::Empirical(dataset);
        let fr = fr_norm_identity(net, config.loss, &dist)?;
        (
            Some(fr / (net.depth() + 1) as f64),
            Some(flat_norm(net, &FlatNormKind::Spectral)?.value),
            Some(path_norm(net, 1.0)?),
        )
    } else {
        (None, None, None)
    };
    Ok(EpochRecord {
        epoch,
        train_loss,
        grad_norm,
        fr_natural,
        spectral,
        path_q1,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Margin scan for the hinge-stationarity result: at a stationary point of
/// the hinge loss whose network separates the data, every margin must reach
/// 1 (up to the tolerance a finite gradient threshold admits).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginReport {
    /// Whether the preconditions held: gradient norm ≤ ε and all margins
    /// strictly positive.
    pub applicable: bool,
    pub grad_norm: f64,
    /// `Yᵢ·f(Xᵢ)` in dataset order.
    pub margins: Vec<f64>,
    pub min_margin: f64,
    /// `Some(min_margin ≥ 1 − δ)` when applicable, `None` otherwise.
    pub verdict: Option<bool>,
}

/// Check the large-margin property of hinge-loss stationary points.
pub fn check_large_margin(
    net: &Network,
    dataset: &Dataset,
    epsilon_grad: f64,
    delta_margin: f64,
) -> Result<MarginReport> {
    if net.output_dim() != 1 {
        return Err(Error::Unsupported(
            "margin check needs a single-output network".into(),
        ));
    }
    let (_, grad) = batch_grad(net, dataset, LossKind::Hinge)?;
    let grad_norm = norm2(&grad);
    let mut margins = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let y = match dataset.label(i) {
            Label::Value(v) => v,
            Label::Class(_) => {
                return Err(Error::Data("margin check needs ±1 real labels".into()))
            }
        };
        let f = net.forward(dataset.input(i))?.output()[0];
        margins.push(y * f);
    }
    let min_margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    let applicable = grad_norm <= epsilon_grad && margins.iter().all(|m| *m > 0.0);
    let verdict = applicable.then(|| min_margin >= 1.0 - delta_margin);
    Ok(MarginReport {
        applicable,
        grad_norm,
        margins,
        min_margin,
        verdict,
    })
}

/// The linear-network stationarity certificate: the collapsed weight vector
/// and its inner product with the normal-equations residual.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearStationarity {
    /// `⟨w, XᵀXw − XᵀY⟩`.
    pub residual: f64,
    /// `‖XᵀXw − XᵀY‖·‖w‖`, the natural comparison scale.
    pub scale: f64,
    /// `w(θ) = ∏Wᵗ` as a vector.
    pub w: Vec<f64>,
}

impl LinearStationarity {
    /// The contract `|residual| ≤ tol·scale`. By Cauchy-Schwarz the ratio
    /// never exceeds 1; at stationary points it should vanish.
    pub fn within(&self, tol: f64) -> bool {
        self.residual.abs() <= tol * self.scale
    }

    /// `|residual|/scale`, or 0 when both vanish.
    pub fn ratio(&self) -> f64 {
        if self.scale == 0.0 {
            if self.residual == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.residual.abs() / self.scale
        }
    }
}

/// Evaluate `⟨w(θ), XᵀXw(θ) − XᵀY⟩` for a linear-activation scalar-output
/// network on a real-labeled dataset.
pub fn check_linear_stationarity(net: &Network, dataset: &Dataset) -> Result<LinearStationarity> {
    if net.output_dim() != 1 {
        return Err(Error::Unsupported(
            "linear stationarity check needs a single-output network".into(),
        ));
    }
    if !net
        .activations()
        .iter()
        .all(|a| matches!(a, ActivationKind::Linear))
    {
        return Err(Error::Unsupported(
            "linear stationarity check needs linear activations throughout".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let product = net
        .weights()
        .iter()
        .skip(1)
        .fold(net.weight(0).clone(), |acc, m| {
            acc.matmul(m).expect("chained layer dimensions")
        });
    let w = product.col(0);
    let mut r = vec![0.0; w.len()];
    for i in 0..dataset.len() {
        let x = dataset.input(i);
        let y = match dataset.label(i) {
            Label::Value(v) => v,
            Label::Class(_) => {
                return Err(Error::Data(
                    "linear stationarity check needs real-valued labels".into(),
                ))
            }
        };
        let err = dot(x, &w) - y;
        for (rj, xj) in r.iter_mut().zip(x) {
            *rj += err * xj;
        }
    }
    Ok(LinearStationarity {
        residual: dot(&w, &r),
        scale: norm2(&r) * norm2(&w),
        w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn sgd_config(lr: f64, loss: LossKind) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerKind::Sgd,
            lr,
            batch_size: 64,
            epochs: 100,
            seed: 1,
            loss,
            epsilon_grad: 1e-6,
            record_every: 1,
            record_norms: false,
        }
    }

    fn scalar_net(w: f64) -> Network {
        Network::linear(vec![Matrix::new(1, 1, vec![w]).unwrap()]).unwrap()
    }

    fn scalar_point(x: f64, y: f64) -> Dataset {
        Dataset::from_values(Matrix::new(1, 1, vec![x]).unwrap(), vec![y]).unwrap()
    }

    fn random_net(dims: &[usize], hidden: ActivationKind, seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::random_uniform(dims, hidden, ActivationKind::Linear, 1.0, &mut rng).unwrap()
    }

    fn random_regression(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = Matrix::from_fn(n, dim, |_, _| rng.gen_range(-1.5..1.5));
        let values = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Dataset::from_values(inputs, values).unwrap()
    }

    /// Two well-separated Gaussian blobs with ±1 labels.
    fn blob_dataset(n_per: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for sign in [1.0, -1.0] {
            for _ in 0..n_per {
                rows.push(vec![
                    sign * 2.0 + 0.5 * crate::data::standard_normal(&mut rng),
                    sign * 2.0 + 0.5 * crate::data::standard_normal(&mut rng),
                ]);
                labels.push(sign);
            }
        }
        Dataset::from_values(Matrix::from_rows(&rows).unwrap(), labels).unwrap()
    }

    #[test]
    fn sgd_leaves_parameters_unchanged_at_zero_gradient() {
        // Zero network with zero labels: the squared-loss gradient vanishes.
        let net = Network::relu(vec![Matrix::zeros(2, 3), Matrix::zeros(3, 1)]).unwrap();
        let data = Dataset::from_values(
            Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap(),
            vec![0.0, 0.0],
        )
        .unwrap();
        let config = sgd_config(0.1, LossKind::Squared);
        let stepped = sgd_step(&net, &data, &config).unwrap();
        assert_eq!(stepped.flatten(), net.flatten());
    }

    #[test]
    fn sgd_monotone_decrease_on_quadratic() {
        // Loss ½(w·x − y)² with x = 1: curvature 1, so any lr < 2 descends.
        let mut net = scalar_net(5.0);
        let data = scalar_point(1.0, 1.0);
        let config = sgd_config(0.5, LossKind::Squared);
        let mut prev = batch_grad(&net, &data, LossKind::Squared).unwrap().0;
        for _ in 0..30 {
            net = sgd_step(&net, &data, &config).unwrap();
            let loss = batch_grad(&net, &data, LossKind::Squared).unwrap().0;
            assert!(loss <= prev + 1e-15, "loss rose: {loss} > {prev}");
            prev = loss;
        }
        assert!((net.flatten()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn momentum_zero_reduces_to_sgd() {
        let net = random_net(&[2, 4, 1], ActivationKind::Relu, 5);
        let data = random_regression(8, 2, 6);
        let sgd = sgd_step(&net, &data, &sgd_config(0.05, LossKind::Squared)).unwrap();
        let mut config = sgd_config(0.05, LossKind::Squared);
        config.optimizer = OptimizerKind::Momentum { beta: 0.0 };
        let mut velocity = vec![0.0; net.num_params()];
        let mom = momentum_step(&net, &data, &config, &mut velocity).unwrap();
        assert_eq!(sgd.flatten(), mom.flatten());
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let net = scalar_net(5.0);
        let data = scalar_point(1.0, 1.0);
        let mut config = sgd_config(0.1, LossKind::Squared);
        config.optimizer = OptimizerKind::Momentum { beta: 0.9 };
        let mut velocity = vec![0.0; 1];
        let one = momentum_step(&net, &data, &config, &mut velocity).unwrap();
        // First step equals SGD; the velocity then carries (w₀−1)·β forward.
        assert_relative_eq!(one.flatten()[0], 5.0 - 0.1 * 4.0, max_relative = 1e-12);
        let two = momentum_step(&one, &data, &config, &mut velocity).unwrap();
        let g2 = one.flatten()[0] - 1.0;
        let v2 = 0.9 * 4.0 + g2;
        assert_relative_eq!(two.flatten()[0], one.flatten()[0] - 0.1 * v2, max_relative = 1e-12);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let net = scalar_net(5.0);
        let data = scalar_point(1.0, 1.0);
        let mut config = sgd_config(0.05, LossKind::Squared);
        config.optimizer = OptimizerKind::adam_default();
        let mut state = AdamState::new(1);
        let stepped = adam_step(&net, &data, &config, &mut state).unwrap();
        // m̂/√v̂ = sign(g) up to ε, so the first move is ≈ −lr.
        assert_relative_eq!(stepped.flatten()[0], 5.0 - 0.05, max_relative = 1e-3);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut net = scalar_net(5.0);
        let data = scalar_point(1.0, 1.0);
        let mut config = sgd_config(0.05, LossKind::Squared);
        config.optimizer = OptimizerKind::adam_default();
        let mut state = AdamState::new(1);
        for _ in 0..400 {
            net = adam_step(&net, &data, &config, &mut state).unwrap();
        }
        assert!((net.flatten()[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn natural_gradient_one_parameter_hand_formula() {
        // Single weight, single sample: δ = ∇/(g² + λ) exactly.
        let (w0, x, y, lambda, lr) = (2.0, 1.5, 0.5, 0.1, 0.3);
        let net = scalar_net(w0);
        let data = scalar_point(x, y);
        let mut config = sgd_config(lr, LossKind::Squared);
        config.optimizer = OptimizerKind::NaturalGradient {
            damping: Some(lambda),
            cg_tol: 1e-12,
            cg_max_iter: 50,
            fisher: FisherMode::Empirical,
        };
        let out = natural_gradient_step(&net, &data, &config).unwrap();
        let g = (w0 * x - y) * x;
        let expected = w0 - lr * g / (g * g + lambda);
        assert_relative_eq!(out.net.flatten()[0], expected, max_relative = 1e-12);
        assert!(!out.damping_escalated);
    }

    #[test]
    fn natural_gradient_large_damping_recovers_scaled_sgd() {
        let net = random_net(&[2, 3, 1], ActivationKind::Relu, 7);
        let data = random_regression(10, 2, 8);
        let (_, grad) = batch_grad(&net, &data, LossKind::Squared).unwrap();
        let gs = per_sample_grads(&net, data.inputs(), &data.label_vec(), LossKind::Squared)
            .unwrap();
        let trace: f64 = gs.iter().map(|g| dot(g, g)).sum::<f64>() / gs.len() as f64;
        let lambda = 1e8 * trace;
        let mut config = sgd_config(0.1, LossKind::Squared);
        config.optimizer = OptimizerKind::NaturalGradient {
            damping: Some(lambda),
            cg_tol: 1e-14,
            cg_max_iter: 200,
            fisher: FisherMode::Empirical,
        };
        let out = natural_gradient_step(&net, &data, &config).unwrap();
        let theta = net.flatten();
        let stepped = out.net.flatten();
        for i in 0..theta.len() {
            let expected = theta[i] - config.lr * grad[i] / lambda;
            let denom = (theta[i] - expected).abs().max(1e-300);
            assert!(
                (stepped[i] - expected).abs() / denom <= 1e-6 + 1e-9 / denom,
                "index {i}: {} vs {}",
                stepped[i],
                expected
            );
        }
    }

    #[test]
    fn natural_gradient_solves_the_damped_system() {
        let net = random_net(&[3, 4, 1], ActivationKind::LeakyRelu(0.2), 9);
        let data = random_regression(12, 3, 10);
        let mut config = sgd_config(1.0, LossKind::Squared);
        config.optimizer = OptimizerKind::NaturalGradient {
            damping: Some(0.05),
            cg_tol: 1e-12,
            cg_max_iter: 500,
            fisher: FisherMode::Empirical,
        };
        let out = natural_gradient_step(&net, &data, &config).unwrap();
        // Recover δ from the update and verify (Î + λI)δ = ∇ directly.
        let theta = net.flatten();
        let stepped = out.net.flatten();
        let delta: Vec<f64> = theta
            .iter()
            .zip(&stepped)
            .map(|(a, b)| (a - b) / config.lr)
            .collect();
        let gs = per_sample_grads(&net, data.inputs(), &data.label_vec(), LossKind::Squared)
            .unwrap();
        let w = 1.0 / gs.len() as f64;
        let mut applied: Vec<f64> = delta.iter().map(|v| 0.05 * v).collect();
        for g in &gs {
            let c = w * dot(g, &delta);
            for (a, gi) in applied.iter_mut().zip(g) {
                *a += c * gi;
            }
        }
        let (_, grad) = batch_grad(&net, &data, LossKind::Squared).unwrap();
        for (a, g) in applied.iter().zip(&grad) {
            assert_relative_eq!(a, g, max_relative = 1e-6, epsilon = 1e-12);
        }
    }

    #[test]
    fn natural_gradient_escalates_damping_when_cg_is_starved() {
        let net = random_net(&[3, 5, 1], ActivationKind::Relu, 11);
        let data = random_regression(10, 3, 12);
        let mut config = sgd_config(0.1, LossKind::Squared);
        // Three iterations cannot reach the tolerance at the default tiny
        // damping, but succeed once escalation has tamed the conditioning.
        config.optimizer = OptimizerKind::NaturalGradient {
            damping: None,
            cg_tol: 1e-6,
            cg_max_iter: 3,
            fisher: FisherMode::Empirical,
        };
        let out = natural_gradient_step(&net, &data, &config).unwrap();
        assert!(out.damping_escalated);
        assert!(out.warning.as_deref().unwrap().contains("escalated"));
        assert!(out.damping > 0.0);
    }

    #[test]
    fn natural_gradient_model_fisher_is_deterministic_and_distinct() {
        let net = random_net(&[2, 4, 1], ActivationKind::Relu, 13);
        let data = random_regression(8, 2, 14);
        let make = |fisher| {
            let mut config = sgd_config(0.1, LossKind::Squared);
            config.optimizer = OptimizerKind::NaturalGradient {
                damping: Some(0.01),
                cg_tol: 1e-12,
                cg_max_iter: 200,
                fisher,
            };
            config
        };
        let model = FisherMode::ModelSampled {
            samples_per_input: 25,
            seed: 3,
        };
        let a = natural_gradient_step(&net, &data, &make(model)).unwrap();
        let b = natural_gradient_step(&net, &data, &make(model)).unwrap();
        assert_eq!(a.net.flatten(), b.net.flatten());
        let emp = natural_gradient_step(&net, &data, &make(FisherMode::Empirical)).unwrap();
        assert_ne!(a.net.flatten(), emp.net.flatten());
    }

    #[test]
    fn train_separable_hinge_task_reaches_large_margins() {
        let data = blob_dataset(15, 21);
        let net = random_net(&[2, 8, 1], ActivationKind::Relu, 22);
        let mut config = sgd_config(0.05, LossKind::Hinge);
        config.batch_size = 30;
        config.epochs = 500;
        config.record_every = 50;
        let out = train(&net, &data, &config).unwrap();
        assert!(out.divergence.is_none());
        let last = out.history.last().unwrap();
        assert!(
            last.grad_norm <= 1e-6,
            "gradient norm {} not stationary",
            last.grad_norm
        );
        assert_eq!(last.train_loss, 0.0);

        let report = check_large_margin(&out.net, &data, 1e-6, 1e-3).unwrap();
        assert!(report.applicable);
        assert_eq!(report.verdict, Some(true));
        assert!(report.min_margin >= 1.0 - 1e-3);
    }

    #[test]
    fn margin_check_reports_inapplicable_cases() {
        // An untrained random net almost surely misclassifies something.
        let data = blob_dataset(10, 31);
        let net = random_net(&[2, 4, 1], ActivationKind::Relu, 32);
        let report = check_large_margin(&net, &data, 1e-6, 1e-3).unwrap();
        assert!(!report.applicable);
        assert_eq!(report.verdict, None);
        assert_eq!(report.margins.len(), data.len());
    }

    #[test]
    fn train_is_deterministic_given_seed() {
        let data = random_regression(20, 2, 41);
        let net = random_net(&[2, 5, 1], ActivationKind::Relu, 42);
        let mut config = sgd_config(0.05, LossKind::Squared);
        config.batch_size = 5;
        config.epochs = 10;
        config.record_norms = true;
        let a = train(&net, &data, &config).unwrap();
        let b = train(&net, &data, &config).unwrap();
        assert_eq!(a.net.flatten(), b.net.flatten());
        assert_eq!(a.history.records().len(), b.history.records().len());
        for (ra, rb) in a.history.records().iter().zip(b.history.records()) {
            assert_eq!(ra.epoch, rb.epoch);
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.grad_norm.to_bits(), rb.grad_norm.to_bits());
            assert_eq!(ra.fr_natural, rb.fr_natural);
            assert_eq!(ra.spectral, rb.spectral);
            assert_eq!(ra.path_q1, rb.path_q1);
        }
    }

    #[test]
    fn deep_linear_training_reaches_stationarity() {
        // y = ⟨x, β⟩ exactly; full-batch descent drives the gradient to the
        // stopping threshold.
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let beta = [0.8, -0.4, 0.3];
        let inputs = Matrix::from_fn(40, 3, |_, _| rng.gen_range(-1.0..1.0));
        let values = (0..40).map(|i| dot(inputs.row(i), &beta)).collect();
        let data = Dataset::from_values(inputs, values).unwrap();
        let net = random_net(&[3, 4, 1], ActivationKind::Linear, 52);
        let mut config = sgd_config(0.1, LossKind::Squared);
        config.batch_size = 40;
        config.epochs = 20_000;
        config.record_every = 1000;
        let out = train(&net, &data, &config).unwrap();
        let last = out.history.last().unwrap();
        assert!(
            last.grad_norm <= 1e-6,
            "gradient norm {} after {} records",
            last.grad_norm,
            out.history.records().len()
        );

        // At stationarity the inner-product identity
        // ⟨w, r⟩ = (N/(L+1))·⟨θ, ∇L̂⟩ pins the residual to gradient scale.
        let stat = check_linear_stationarity(&out.net, &data).unwrap();
        let (_, grad) = batch_grad(&out.net, &data, LossKind::Squared).unwrap();
        let theta = out.net.flatten();
        let rhs = data.len() as f64 / (out.net.depth() + 1) as f64 * dot(&theta, &grad);
        assert_relative_eq!(stat.residual, rhs, max_relative = 1e-8, epsilon = 1e-10);
        assert!(stat.residual.abs() <= data.len() as f64 * norm2(&theta) * 1e-6);
    }

    #[test]
    fn linear_stationarity_identity_holds_off_stationarity_too() {
        // The identity is algebraic; verify at a random (non-trained) point.
        let net = random_net(&[3, 5, 2, 1], ActivationKind::Linear, 61);
        let data = random_regression(15, 3, 62);
        let stat = check_linear_stationarity(&net, &data).unwrap();
        let (_, grad) = batch_grad(&net, &data, LossKind::Squared).unwrap();
        let theta = net.flatten();
        let rhs = data.len() as f64 / (net.depth() + 1) as f64 * dot(&theta, &grad);
        assert_relative_eq!(stat.residual, rhs, max_relative = 1e-10);
    }

    #[test]
    fn linear_stationarity_hand_cases() {
        // Exact least-squares fit: residual and scale both vanish.
        let inputs = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let w = [0.7, -0.2];
        let values: Vec<f64> = (0..3).map(|i| dot(inputs.row(i), &w)).collect();
        let data = Dataset::from_values(inputs, values).unwrap();
        let net = Network::linear(vec![Matrix::new(2, 1, w.to_vec()).unwrap()]).unwrap();
        let stat = check_linear_stationarity(&net, &data).unwrap();
        assert!(stat.residual.abs() < 1e-12);
        assert!(stat.within(1e-6));

        // Zero first layer: w = 0, a non-global stationary point.
        let zero = Network::linear(vec![Matrix::zeros(2, 3), Matrix::new(3, 1, vec![1.0; 3]).unwrap()])
            .unwrap();
        let stat = check_linear_stationarity(&zero, &data).unwrap();
        assert_eq!(stat.residual, 0.0);
        assert_eq!(stat.ratio(), 0.0);
        assert!(stat.within(1e-6));

        // Rectified networks are rejected.
        let relu = Network::relu(vec![Matrix::zeros(2, 2), Matrix::zeros(2, 1)]).unwrap();
        assert!(matches!(
            check_linear_stationarity(&relu, &data),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn divergent_run_is_reported_not_propagated() {
        let data = random_regression(10, 2, 71);
        let net = random_net(&[2, 4, 1], ActivationKind::Relu, 72);
        let mut config = sgd_config(1e6, LossKind::Squared);
        config.epochs = 50;
        let out = train(&net, &data, &config).unwrap();
        assert!(out.divergence.is_some(), "expected a divergence record");
        assert!(finite_weights(&out.net));
        for r in out.history.records() {
            assert!(r.train_loss.is_finite());
            assert!(r.grad_norm.is_finite());
        }
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        let mut config = sgd_config(0.1, LossKind::Squared);
        config.lr = -1.0;
        assert!(matches!(config.validate(), Err(Error::InvalidParameter(_))));
        let mut config = sgd_config(0.1, LossKind::Squared);
        config.batch_size = 0;
        assert!(matches!(config.validate(), Err(Error::InvalidParameter(_))));
        let mut config = sgd_config(0.1, LossKind::Squared);
        config.optimizer = OptimizerKind::Momentum { beta: 1.0 };
        assert!(matches!(config.validate(), Err(Error::InvalidParameter(_))));
        let mut config = sgd_config(0.1, LossKind::Squared);
        config.optimizer = OptimizerKind::NaturalGradient {
            damping: Some(0.0),
            cg_tol: 1e-10,
            cg_max_iter: 100,
            fisher: FisherMode::Empirical,
        };
        assert!(matches!(config.validate(), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = TrainConfig {
            optimizer: OptimizerKind::NaturalGradient {
                damping: None,
                cg_tol: 1e-10,
                cg_max_iter: 200,
                fisher: FisherMode::ModelSampled {
                    samples_per_input: 5,
                    seed: 9,
                },
            },
            lr: 0.05,
            batch_size: 16,
            epochs: 40,
            seed: 3,
            loss: LossKind::CrossEntropySoftmax(3),
            epsilon_grad: 1e-6,
            record_every: 5,
            record_norms: true,
        };
        let json = serde_json::to_string(&config).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(config, back);

        // Unknown fields are rejected — the config is schema-strict.
        let with_extra = json.replace("\"lr\":", "\"typo\":1,\"lr\":");
        assert!(serde_json::from_str::<TrainConfig>(&with_extra).is_err());
    }

    #[test]
    fn history_csv_has_matching_columns() {
        let data = random_regression(10, 2, 81);
        let net = random_net(&[2, 3, 1], ActivationKind::Relu, 82);
        let mut config = sgd_config(0.05, LossKind::Squared);
        config.epochs = 3;
        config.record_norms = true;
        let out = train(&net, &data, &config).unwrap();
        let csv = out.history.to_csv();
        let mut lines = csv.lines();
        let header_cols = lines.next().unwrap().split(',').count();
        let mut rows = 0;
        for line in lines {
            assert_eq!(line.split(',').count(), header_cols);
            rows += 1;
        }
        assert_eq!(rows, out.history.records().len());
        assert!(rows >= 1);
    }
}
