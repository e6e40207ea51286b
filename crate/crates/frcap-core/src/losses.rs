//! Loss functions over network outputs: value and derivative with respect
//! to the output vector.
//!
//! Four kinds are supported: absolute `|f − y|`, squared `½(f − y)²`, hinge
//! `max{0, 1 − yf}` with labels ±1 (all single-output), and softmax
//! cross-entropy `−log g(f)_y` over `K` classes. Subgradient conventions at
//! the kinks are fixed: hinge returns 0 at `yf = 1`, absolute returns 0 at
//! `f = y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training target for one example: a real value or a class index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Value(f64),
    Class(usize),
}

impl Label {
    fn as_value(self, kind: &str) -> Result<f64> {
        match self {
            Label::Value(v) => Ok(v),
            Label::Class(_) => Err(Error::InvalidParameter(format!(
                "{kind} loss needs a real-valued label"
            ))),
        }
    }

    fn as_class(self, num_classes: usize) -> Result<usize> {
        match self {
            Label::Class(c) if c < num_classes => Ok(c),
            Label::Class(c) => Err(Error::InvalidParameter(format!(
                "class label {c} out of range for {num_classes} classes"
            ))),
            Label::Value(_) => Err(Error::InvalidParameter(
                "cross-entropy loss needs a class label".into(),
            )),
        }
    }
}

/// The supported loss functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Absolute,
    Squared,
    Hinge,
    CrossEntropySoftmax(usize),
}

impl LossKind {
    /// Output dimension the loss expects.
    pub fn output_dim(self) -> usize {
        match self {
            LossKind::Absolute | LossKind::Squared | LossKind::Hinge => 1,
            LossKind::CrossEntropySoftmax(k) => k,
        }
    }

    /// True when the loss consumes class labels rather than real values.
    pub fn expects_class_labels(self) -> bool {
        matches!(self, LossKind::CrossEntropySoftmax(_))
    }

    fn check_output(self, f: &[f64]) -> Result<()> {
        let want = self.output_dim();
        if f.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "{self:?} expects {want} outputs, got {}",
                f.len()
            )));
        }
        if let LossKind::CrossEntropySoftmax(k) = self {
            if k < 2 {
                return Err(Error::InvalidParameter(
                    "cross-entropy needs at least 2 classes".into(),
                ));
            }
        }
        Ok(())
    }
}

fn hinge_label(y: f64) -> Result<f64> {
    if y == 1.0 || y == -1.0 {
        Ok(y)
    } else {
        Err(Error::InvalidParameter(format!(
            "hinge labels must be +1 or -1, got {y}"
        )))
    }
}

/// Loss value `ℓ(f, y)`.
pub fn loss_value(kind: LossKind, f: &[f64], y: Label) -> Result<f64> {
    kind.check_output(f)?;
    match kind {
        LossKind::Absolute => Ok((f[0] - y.as_value("absolute")?).abs()),
        LossKind::Squared => {
            let r = f[0] - y.as_value("squared")?;
            Ok(0.5 * r * r)
        }
        LossKind::Hinge => {
            let y = hinge_label(y.as_value("hinge")?)?;
            Ok((1.0 - y * f[0]).max(0.0))
        }
        LossKind::CrossEntropySoftmax(k) => {
            let c = y.as_class(k)?;
            Ok(log_sum_exp(f) - f[c])
        }
    }
}

/// Derivative `∂ℓ/∂f` as a vector of the output dimension.
pub fn loss_output_grad(kind: LossKind, f: &[f64], y: Label) -> Result<Vec<f64>> {
    kind.check_output(f)?;
    match kind {
        LossKind::Absolute => {
            let r = f[0] - y.as_value("absolute")?;
            Ok(vec![if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            }])
        }
        LossKind::Squared => Ok(vec![f[0] - y.as_value("squared")?]),
        LossKind::Hinge => {
            let y = hinge_label(y.as_value("hinge")?)?;
            Ok(vec![if y * f[0] < 1.0 { -y } else { 0.0 }])
        }
        LossKind::CrossEntropySoftmax(k) => {
            let c = y.as_class(k)?;
            let mut g = softmax(f);
            g[c] -= 1.0;
            Ok(g)
        }
    }
}

/// Numerically stable softmax (max-shifted exponentials).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    assert!(!z.is_empty(), "softmax of an empty vector");
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log Σ exp(z_i)`, max-shifted.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let s: f64 = z.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}
