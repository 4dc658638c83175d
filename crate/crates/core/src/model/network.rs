use super::complexity::MacTally;
use super::{FusionModel, LayerId, ModelGrads, Variant, CONV1_FILTERS, CONV2_FILTERS, FC1_UNITS, FC2_UNITS, GAIN_UNITS};
use crate::error::{Error, Result};
use crate::tensor::kernels;
use crate::tensor::{sigmoid_scalar, Tensor};

/// Activations kept from a forward pass for the matching backward pass.
///
/// Every stored activation is post-ReLU; `x > 0` after the ReLU holds exactly
/// where it held before, so the masks can be read off the outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub(crate) input: Vec<f64>,
    pub(crate) conv1: Vec<f64>,
    pub(crate) pooled: Vec<f64>,
    pub(crate) pool_winners: Vec<usize>,
    pub(crate) features: Vec<f64>,
    pub(crate) fc1: Vec<f64>,
    pub(crate) fc2: Vec<f64>,
    pub(crate) gain_hidden: Option<Vec<f64>>,
    y_th: f64,
    k_g: Option<f64>,
}

impl ForwardTrace {
    /// Thermal-only speed estimate (normalized units).
    pub fn y_th(&self) -> f64 {
        self.y_th
    }

    /// Fusion gain, present only for the fusion variant.
    pub fn k_g(&self) -> Option<f64> {
        self.k_g
    }

    /// Flattened backbone output shared by both heads.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Final estimate: the fused speed for the fusion variant, `y_th` otherwise.
    pub fn output(&self, y_gy: f64) -> f64 {
        match self.k_g {
            Some(k) => fuse(self.y_th, k, y_gy),
            None => self.y_th,
        }
    }
}

/// Convex mix of the thermal and gyro speed estimates.
pub fn fuse(y_th: f64, k_g: f64, y_gy: f64) -> f64 {
    k_g * y_th + (1.0 - k_g) * y_gy
}

fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

fn mask_in_place(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn forward(model: &FusionModel, frames: &Tensor) -> Result<ForwardTrace> {
    Ok(run_forward(model, &[frames], None)?.pop().expect("one trace per input"))
}

/// Forward pass over several inputs. The dense heads read each weight row once
/// per batch; every trace equals what [`forward`] returns for that input.
pub fn forward_batch(model: &FusionModel, frames: &[&Tensor]) -> Result<Vec<ForwardTrace>> {
    run_forward(model, frames, None)
}

/// Forward pass that also tallies the multiply-accumulates each layer performs.
pub fn forward_instrumented(model: &FusionModel, frames: &Tensor) -> Result<(ForwardTrace, MacTally)> {
    let mut tally = MacTally::default();
    let trace = run_forward(model, &[frames], Some(&mut tally))?.pop().expect("one trace per input");
    Ok((trace, tally))
}

struct Backbone {
    input: Vec<f64>,
    conv1: Vec<f64>,
    pooled: Vec<f64>,
    pool_winners: Vec<usize>,
    features: Vec<f64>,
}

fn backbone_forward(model: &FusionModel, frames: &Tensor, tally: Option<&mut MacTally>) -> Result<Backbone> {
    let cfg = model.config();
    let [nf, h, w] = cfg.input_shape();
    if frames.shape() != [nf, h, w] {
        return Err(Error::invalid(format!(
            "model expects frames of shape {:?}, got {:?}",
            cfg.input_shape(),
            frames.shape()
        )));
    }
    let (ph, pw) = (cfg.pooled_h(), cfg.pooled_w());
    let layer = |id| model.layer(id).expect("layer present in layout");

    let (w1, b1) = layer(LayerId::Conv1);
    let mut conv1 = vec![0.0; CONV1_FILTERS * h * w];
    let executed1 = kernels::conv_same_forward(frames.data(), nf, h, w, w1, b1, CONV1_FILTERS, &mut conv1);
    relu_in_place(&mut conv1);

    let mut pooled = vec![0.0; CONV1_FILTERS * ph * pw];
    let mut pool_winners = vec![0; pooled.len()];
    kernels::maxpool2_forward(&conv1, CONV1_FILTERS, h, w, &mut pooled, &mut pool_winners);

    let (w2, b2) = layer(LayerId::Conv2);
    let mut features = vec![0.0; cfg.flatten_len()];
    let executed2 = kernels::conv_same_forward(&pooled, CONV1_FILTERS, ph, pw, w2, b2, CONV2_FILTERS, &mut features);
    relu_in_place(&mut features);

    if let Some(t) = tally {
        t.record_conv(LayerId::Conv1, executed1, CONV1_FILTERS, nf, h, w);
        t.record_conv(LayerId::Conv2, executed2, CONV2_FILTERS, CONV1_FILTERS, ph, pw);
    }
    Ok(Backbone {
        input: frames.data().to_vec(),
        conv1,
        pooled,
        pool_winners,
        features,
    })
}

fn run_forward(model: &FusionModel, frames: &[&Tensor], mut tally: Option<&mut MacTally>) -> Result<Vec<ForwardTrace>> {
    let backbones = frames
        .iter()
        .map(|f| backbone_forward(model, f, tally.as_deref_mut()))
        .collect::<Result<Vec<_>>>()?;

    let mut dense = |id: LayerId, inputs: &[&[f64]], m: usize, relu: bool| {
        let (wt, b) = model.layer(id).expect("layer present in layout");
        let n = inputs.first().map_or(0, |x| x.len());
        let mut outs = vec![vec![0.0; m]; inputs.len()];
        kernels::dense_forward_batch(inputs, wt, b, m, n, &mut outs);
        if let Some(t) = tally.as_deref_mut() {
            t.record_dense(id, m, n);
        }
        if relu {
            outs.iter_mut().for_each(|o| relu_in_place(o));
        }
        outs
    };

    let features: Vec<&[f64]> = backbones.iter().map(|b| b.features.as_slice()).collect();
    let fc1 = dense(LayerId::Fc1, &features, FC1_UNITS, true);
    let fc2 = dense(LayerId::Fc2, &refs(&fc1), FC2_UNITS, true);
    let y_th = dense(LayerId::Out, &refs(&fc2), 1, false);

    let gain: Vec<Option<(Vec<f64>, f64)>> = match model.config().variant {
        Variant::Fusion => {
            let hidden = dense(LayerId::GainFc, &features, GAIN_UNITS, true);
            let logits = dense(LayerId::GainOut, &refs(&hidden), 1, false);
            hidden.into_iter().zip(logits).map(|(h, l)| Some((h, sigmoid_scalar(l[0])))).collect()
        }
        Variant::ThermalOnly => vec![None; frames.len()],
    };

    Ok(backbones
        .into_iter()
        .zip(fc1)
        .zip(fc2)
        .zip(y_th)
        .zip(gain)
        .map(|((((b, fc1), fc2), y), g)| {
            let (gain_hidden, k_g) = match g {
                Some((h, k)) => (Some(h), Some(k)),
                None => (None, None),
            };
            ForwardTrace {
                input: b.input,
                conv1: b.conv1,
                pooled: b.pooled,
                pool_winners: b.pool_winners,
                features: b.features,
                fc1,
                fc2,
                gain_hidden,
                y_th: y[0],
                k_g,
            }
        })
        .collect())
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

/// Parameter gradients for upstream gradients on `y_th` and `K_g`.
pub fn backward(model: &FusionModel, trace: &ForwardTrace, d_y_th: f64, d_k_g: f64) -> Result<ModelGrads> {
    let mut grads = ModelGrads::zeros_for(model);
    backward_into(model, trace, d_y_th, d_k_g, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but adds into an existing gradient buffer.
pub fn backward_into(
    model: &FusionModel,
    trace: &ForwardTrace,
    d_y_th: f64,
    d_k_g: f64,
    grads: &mut ModelGrads,
) -> Result<()> {
    backward_batch(model, &[trace], &[d_y_th], &[d_k_g], grads)
}

/// Adds the gradients of a whole batch into `grads`. Each parameter gradient
/// is summed in trace order, so the result is bit-identical to calling
/// [`backward_into`] once per trace.
pub fn backward_batch(
    model: &FusionModel,
    traces: &[&ForwardTrace],
    d_y_th: &[f64],
    d_k_g: &[f64],
    grads: &mut ModelGrads,
) -> Result<()> {
    let cfg = model.config();
    let [nf, h, w] = cfg.input_shape();
    let (ph, pw) = (cfg.pooled_h(), cfg.pooled_w());
    if traces.len() != d_y_th.len() || traces.len() != d_k_g.len() {
        return Err(Error::invalid("one upstream gradient pair per trace is required"));
    }
    for trace in traces {
        if trace.input.len() != nf * h * w
            || trace.features.len() != cfg.flatten_len()
            || trace.k_g.is_some() != model.has_gain_head()
        {
            return Err(Error::invalid("forward trace does not belong to this model"));
        }
    }
    if grads.data.len() != model.n_params() {
        return Err(Error::invalid("gradient buffer does not match model layout"));
    }
    if !model.has_gain_head() && d_k_g.iter().any(|&d| d != 0.0) {
        return Err(Error::invalid("thermal-only model has no gain to differentiate"));
    }

    let layout = model.layout();
    let slot = |id| layout.slot(id).expect("layer present in layout");
    let params = model.params();
    let g = &mut grads.data;
    let n = traces.len();
    let flat = cfg.flatten_len();

    // Splits `g` into the (weights, bias) gradient slices of one layer.
    fn grad_slices<'a>(g: &'a mut [f64], s: &super::LayerSlot) -> (&'a mut [f64], &'a mut [f64]) {
        let (head, tail) = g.split_at_mut(s.bias.start);
        (&mut head[s.weights.clone()], &mut tail[..s.bias.len()])
    }

    let mut dense_back = |id: LayerId, inputs: &[&[f64]], d_outs: &[&[f64]], m: usize, d_ins: &mut [Vec<f64>]| {
        let s = slot(id);
        let (dw, db) = grad_slices(g, s);
        let width = inputs[0].len();
        kernels::dense_backward_batch(inputs, &params[s.weights.clone()], m, width, d_outs, dw, db, Some(d_ins));
    };

    let features: Vec<&[f64]> = traces.iter().map(|t| t.features.as_slice()).collect();
    let mut d_features = vec![vec![0.0; flat]; n];

    // thermal head
    {
        let d_out: Vec<[f64; 1]> = d_y_th.iter().map(|&d| [d]).collect();
        let d_out: Vec<&[f64]> = d_out.iter().map(|d| d.as_slice()).collect();
        let fc2: Vec<&[f64]> = traces.iter().map(|t| t.fc2.as_slice()).collect();
        let mut d_fc2 = vec![vec![0.0; FC2_UNITS]; n];
        dense_back(LayerId::Out, &fc2, &d_out, 1, &mut d_fc2);
        for (d, t) in d_fc2.iter_mut().zip(traces) {
            mask_in_place(d, &t.fc2);
        }

        let fc1: Vec<&[f64]> = traces.iter().map(|t| t.fc1.as_slice()).collect();
        let mut d_fc1 = vec![vec![0.0; FC1_UNITS]; n];
        dense_back(LayerId::Fc2, &fc1, &refs(&d_fc2), FC2_UNITS, &mut d_fc1);
        for (d, t) in d_fc1.iter_mut().zip(traces) {
            mask_in_place(d, &t.fc1);
        }

        dense_back(LayerId::Fc1, &features, &refs(&d_fc1), FC1_UNITS, &mut d_features);
    }

    // gain head
    if model.has_gain_head() {
        let d_logit: Vec<[f64; 1]> = traces
            .iter()
            .zip(d_k_g)
            .map(|(t, &d)| {
                let k = t.k_g.expect("fusion trace carries a gain");
                [d * k * (1.0 - k)]
            })
            .collect();
        let d_logit: Vec<&[f64]> = d_logit.iter().map(|d| d.as_slice()).collect();
        let hidden: Vec<&[f64]> = traces
            .iter()
            .map(|t| t.gain_hidden.as_deref().expect("fusion trace carries the gain hidden layer"))
            .collect();
        let mut d_hidden = vec![vec![0.0; GAIN_UNITS]; n];
        dense_back(LayerId::GainOut, &hidden, &d_logit, 1, &mut d_hidden);
        for (d, hdn) in d_hidden.iter_mut().zip(&hidden) {
            mask_in_place(d, hdn);
        }
        dense_back(LayerId::GainFc, &features, &refs(&d_hidden), GAIN_UNITS, &mut d_features);
    }

    // backbone, one trace at a time
    let s2 = slot(LayerId::Conv2);
    let s1 = slot(LayerId::Conv1);
    for (trace, d_feat) in traces.iter().zip(d_features.iter_mut()) {
        mask_in_place(d_feat, &trace.features);
        let (dw, db) = grad_slices(g, s2);
        let mut d_pooled = vec![0.0; trace.pooled.len()];
        kernels::conv_same_backward(
            &trace.pooled,
            CONV1_FILTERS,
            ph,
            pw,
            &params[s2.weights.clone()],
            CONV2_FILTERS,
            d_feat,
            dw,
            db,
            Some(&mut d_pooled),
        );

        let mut d_conv1 = vec![0.0; trace.conv1.len()];
        kernels::maxpool2_backward(&trace.pool_winners, &d_pooled, &mut d_conv1);
        mask_in_place(&mut d_conv1, &trace.conv1);

        let (dw, db) = grad_slices(g, s1);
        kernels::conv_same_backward(&trace.input, nf, h, w, &params[s1.weights.clone()], CONV1_FILTERS, &d_conv1, dw, db, None);
    }
    Ok(())
}
