//! Capacity measures for feedforward rectified networks.
//!
//! The crate computes and cross-validates norm-based capacity measures for
//! bias-free feedforward networks whose activations satisfy σ(z) = σ′(z)·z
//! (ReLU, leaky ReLU, linear). The centrepiece is the Fisher-Rao norm,
//! available through two independent routes that must agree:
//!
//! * [`capacity::fr_norm_fisher`] — the quadratic form ⟨θ, I(θ)θ⟩ evaluated
//!   through per-sample loss gradients, and
//! * [`capacity::fr_norm_identity`] — the analytical identity
//!   (L+1)·√E⟨∂ℓ/∂f, f_θ(X)⟩².
//!
//! Around it sit the flat per-layer-product norms (spectral, group, induced,
//! chain, path), their data-dependent counterparts built from activation-mask
//! operator norms, comparison reports between the two families, trainers with
//! a damped natural-gradient step, and a Monte-Carlo estimate of the
//! Rademacher complexity of Fisher-Rao balls for deep linear networks.
//!
//! # Modules
//!
//! - [`linalg`] — dense kernels and the matrix norm catalogue, including
//!   closed forms for diagonal masks.
//! - [`network`] — the architecture, forward traces, nodewise rescaling, and
//!   the depth-(L+1) convex-combination construction.
//! - [`losses`] — absolute, squared, hinge, and softmax cross-entropy losses
//!   with fixed kink conventions.
//! - [`autodiff`] — exact reverse-mode gradients, per-sample gradients,
//!   contraction identities, and finite-difference checkers.
//! - [`capacity`] — Fisher-Rao norms, flat and data-dependent norms, and the
//!   comparison report.
//! - [`optimize`] — SGD/momentum/Adam/natural-gradient trainers plus margin
//!   and stationarity checks.
//! - [`invariance`] — small exactly-solvable models probing natural-gradient
//!   parametrization invariance.
//! - [`rademacher`] — Monte-Carlo Rademacher estimates over Fisher-Rao balls.
//! - [`data`] — in-memory datasets, label corruption, train/test splits.
//!
//! All floating point is `f64`. Every random choice flows from explicit
//! seeds; repeated runs are bit-identical.

pub mod autodiff;
pub mod capacity;
pub mod data;
pub mod error;
pub mod invariance;
pub mod linalg;
pub mod losses;
pub mod network;
pub mod optimize;
pub mod rademacher;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use network::{ActivationKind, ForwardTrace, Network};
