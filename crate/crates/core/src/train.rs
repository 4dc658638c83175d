//! Mini-batch Adam training on windowed samples, and scoring.

use std::borrow::Borrow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{NormalizationSpec, Sample};
use crate::error::{Error, Result};
use crate::loss::{loss_for, LossKind};
use crate::model::{backward_batch, forward, forward_batch, fuse, FusionModel, ModelGrads};
use crate::tensor::AdamState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch: 32,
            epochs: 40,
            seed: 0,
            shuffle: true,
            loss: LossKind::Berhu,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted: it is a useful no-op run
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: FusionModel,
    /// Sample-weighted mean training loss of each epoch.
    pub history: Vec<f64>,
    pub steps: u64,
}

fn check_samples<S: Borrow<Sample>>(model: &FusionModel, samples: &[S]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let shape = model.config().input_shape();
    if let Some(s) = samples.iter().map(Borrow::borrow).find(|s| s.frames.shape() != shape) {
        return Err(Error::invalid(format!(
            "sample from {}@{} has shape {:?}, model expects {:?}",
            s.source.acquisition,
            s.source.start,
            s.frames.shape(),
            shape
        )));
    }
    Ok(())
}

/// Runs `epochs * ceil(n / batch)` Adam steps. The threshold of the berHu
/// loss is recomputed for every batch, and for the fusion variant the gyro
/// estimate is a constant input to the mix.
pub fn train<S: Borrow<Sample>>(model: FusionModel, samples: &[S], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_samples(&model, samples)?;
    let mut model = model;
    let mut adam = AdamState::new(model.n_params(), cfg.lr);
    let mut grads = ModelGrads::zeros_for(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let frames: Vec<_> = batch.iter().map(|&i| &samples[i].borrow().frames).collect();
            let traces = forward_batch(&model, &frames)?;
            let y_gy: Vec<f64> = batch.iter().map(|&i| samples[i].borrow().y_gy).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| samples[i].borrow().y).collect();
            let preds: Vec<f64> = traces.iter().zip(&y_gy).map(|(t, &g)| t.output(g)).collect();
            let bl = loss_for(cfg.loss, &preds, &targets)?;
            if !bl.loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss became {} at epoch {} step {steps}",
                    bl.loss,
                    epoch + 1
                )));
            }
            epoch_loss += bl.loss * batch.len() as f64;

            let mut d_th = Vec::with_capacity(batch.len());
            let mut d_k = Vec::with_capacity(batch.len());
            for ((t, &g), &gy) in traces.iter().zip(&bl.grads).zip(&y_gy) {
                match t.k_g() {
                    Some(k) => {
                        d_th.push(g * k);
                        d_k.push(g * (t.y_th() - gy));
                    }
                    None => {
                        d_th.push(g);
                        d_k.push(0.0);
                    }
                }
            }
            grads.clear();
            backward_batch(&model, &traces.iter().collect::<Vec<_>>(), &d_th, &d_k, &mut grads)?;
            adam.step(model.params_mut(), grads.data())
                .map_err(|e| Error::NonFinite(format!("epoch {} step {steps}: {e}", epoch + 1)))?;
            steps += 1;
        }
        history.push(epoch_loss / samples.len() as f64);
    }
    Ok(TrainOutcome { model, history, steps })
}

/// How the fusion gain is chosen at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainMode {
    /// The model's own gain head (thermal estimate for the thermal-only variant).
    Learned,
    /// Override the gain with a constant in [0, 1].
    Forced(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub y_th: f64,
    pub k_g: Option<f64>,
    /// Score used for evaluation, normalized units.
    pub y: f64,
}

pub fn predict(model: &FusionModel, sample: &Sample, gain: GainMode) -> Result<Prediction> {
    let t = forward(model, &sample.frames)?;
    let y = match gain {
        GainMode::Learned => t.output(sample.y_gy),
        GainMode::Forced(k) => fuse(t.y_th(), k, sample.y_gy),
    };
    Ok(Prediction {
        y_th: t.y_th(),
        k_g: t.k_g(),
        y,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean squared error in normalized speed units.
    pub mse: f64,
    pub rmse_deg_s: f64,
    pub n: usize,
}

impl Evaluation {
    pub fn from_errors(errors: impl IntoIterator<Item = f64>, norm: &NormalizationSpec) -> Result<Self> {
        let (mut sum, mut n) = (0.0, 0usize);
        for e in errors {
            sum += e * e;
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("evaluation over no samples"));
        }
        let mse = sum / n as f64;
        if !mse.is_finite() {
            return Err(Error::NonFinite(format!("evaluation MSE is {mse}")));
        }
        Ok(Evaluation {
            mse,
            rmse_deg_s: mse.sqrt() * norm.speed_scale,
            n,
        })
    }
}

/// Fusion models are scored on the fused estimate, thermal-only models on the
/// thermal estimate.
pub fn evaluate<S: Borrow<Sample>>(model: &FusionModel, samples: &[S]) -> Result<Evaluation> {
    evaluate_with(model, samples, GainMode::Learned, &NormalizationSpec::default())
}

pub fn evaluate_with<S: Borrow<Sample>>(
    model: &FusionModel,
    samples: &[S],
    gain: GainMode,
    norm: &NormalizationSpec,
) -> Result<Evaluation> {
    if let GainMode::Forced(k) = gain {
        if !(0.0..=1.0).contains(&k) {
            return Err(Error::invalid(format!("forced gain {k} outside [0, 1]")));
        }
    }
    check_samples(model, samples)?;
    let errors = samples
        .iter()
        .map(|s| {
            let s = s.borrow();
            predict(model, s, gain).map(|p| p.y - s.y)
        })
        .collect::<Result<Vec<_>>>()?;
    Evaluation::from_errors(errors, norm)
}
