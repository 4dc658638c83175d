//! Inverted Huber (berHu) objective with a batch-adaptive threshold, and the
//! MSE baseline.
//!
//! berHu is linear for `|e| <= c` and quadratic, `(e^2 + c^2) / 2c`, beyond.
//! The two branches meet with equal value and slope at `|e| = c`. The
//! threshold is one fifth of the batch's largest absolute error, so the
//! hardest example always sits on the quadratic branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of the largest absolute batch error used as the berHu threshold.
pub const ADAPTIVE_C_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Berhu,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "berhu" => Ok(LossKind::Berhu),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::config(format!("unknown loss '{other}' (expected berhu or mse)"))),
        }
    }
}

/// Mean loss over a batch with the gradient of that mean for each prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub grads: Vec<f64>,
    /// Threshold used (0 for MSE).
    pub c: f64,
}

fn check_batch(predictions: &[f64], targets: &[f64]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::invalid("loss over an empty batch"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    Ok(())
}

pub fn adaptive_c(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_batch(predictions, targets)?;
    let max_err = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y).abs())
        .fold(0.0, f64::max);
    Ok(ADAPTIVE_C_FRACTION * max_err)
}

/// berHu of the error `e` at threshold `c`. With `c == 0` this is `|e|`.
pub fn berhu(e: f64, c: f64) -> f64 {
    let a = e.abs();
    if a <= c || c <= 0.0 {
        a
    } else {
        (e * e + c * c) / (2.0 * c)
    }
}

pub fn berhu_grad(e: f64, c: f64) -> f64 {
    if e == 0.0 {
        0.0
    } else if e.abs() <= c || c <= 0.0 {
        e.signum()
    } else {
        e / c
    }
}

/// berHu averaged over the batch. `c` comes from [`adaptive_c`] and is held
/// constant when differentiating.
pub fn batch_loss(predictions: &[f64], targets: &[f64]) -> Result<BatchLoss> {
    let c = adaptive_c(predictions, targets)?;
    let n = predictions.len() as f64;
    let mut loss = 0.0;
    let grads = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| {
            let e = p - y;
            loss += berhu(e, c);
            berhu_grad(e, c) / n
        })
        .collect();
    Ok(BatchLoss { loss: loss / n, grads, c })
}

pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<BatchLoss> {
    check_batch(predictions, targets)?;
    let n = predictions.len() as f64;
    let mut loss = 0.0;
    let grads = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| {
            let e = p - y;
            loss += e * e;
            2.0 * e / n
        })
        .collect();
    Ok(BatchLoss {
        loss: loss / n,
        grads,
        c: 0.0,
    })
}

pub fn loss_for(kind: LossKind, predictions: &[f64], targets: &[f64]) -> Result<BatchLoss> {
    match kind {
        LossKind::Berhu => batch_loss(predictions, targets),
        LossKind::Mse => mse_loss(predictions, targets),
    }
}
