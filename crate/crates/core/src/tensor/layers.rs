use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Convolution kernel side.
pub const KERNEL: usize = kernels::K;
/// Zero padding on each border; keeps the spatial size unchanged.
pub const PAD: usize = kernels::P;

/// Gradients of one parametrized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub d_weights: Tensor,
    pub d_bias: Tensor,
    pub d_input: Tensor,
}

/// Winner positions of a max-pool forward pass, as flat offsets into its input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub(crate) input_shape: Vec<usize>,
    pub(crate) output_shape: Vec<usize>,
    pub(crate) winners: Vec<usize>,
}

impl PoolIndices {
    pub fn winners(&self) -> &[usize] {
        &self.winners
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

fn conv_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (c_in, h, w) = match *input.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::invalid(format!("conv input must be [C,H,W], got {:?}", input.shape()))),
    };
    match *weights.shape() {
        [c_out, wc, KERNEL, KERNEL] if wc == c_in => Ok((c_in, h, w, c_out)),
        _ => Err(Error::invalid(format!(
            "conv weights must be [C_out,{c_in},{KERNEL},{KERNEL}], got {:?}",
            weights.shape()
        ))),
    }
}

pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_in, h, w, c_out) = conv_dims(input, weights)?;
    if bias.shape() != [c_out] {
        return Err(Error::invalid(format!("conv bias must be [{c_out}], got {:?}", bias.shape())));
    }
    let mut out = Tensor::zeros(&[c_out, h, w]);
    kernels::conv_same_forward(
        input.data(),
        c_in,
        h,
        w,
        weights.data(),
        bias.data(),
        c_out,
        out.data_mut(),
    );
    Ok(out)
}

pub fn conv2d_backward(input: &Tensor, weights: &Tensor, d_output: &Tensor) -> Result<LayerGrads> {
    let (c_in, h, w, c_out) = conv_dims(input, weights)?;
    if d_output.shape() != [c_out, h, w] {
        return Err(Error::invalid(format!(
            "conv upstream gradient must be [{c_out},{h},{w}], got {:?}",
            d_output.shape()
        )));
    }
    let mut d_weights = Tensor::zeros(weights.shape());
    let mut d_bias = Tensor::zeros(&[c_out]);
    let mut d_input = Tensor::zeros(input.shape());
    kernels::conv_same_backward(
        input.data(),
        c_in,
        h,
        w,
        weights.data(),
        c_out,
        d_output.data(),
        d_weights.data_mut(),
        d_bias.data_mut(),
        Some(d_input.data_mut()),
    );
    Ok(LayerGrads {
        d_weights,
        d_bias,
        d_input,
    })
}

pub fn maxpool2_forward(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let (c, h, w) = match *input.shape() {
        [c, h, w] if h >= 2 && w >= 2 => (c, h, w),
        _ => {
            return Err(Error::invalid(format!(
                "max pool needs [C,H,W] with H,W >= 2, got {:?}",
                input.shape()
            )))
        }
    };
    let out_shape = [c, h / 2, w / 2];
    let mut out = Tensor::zeros(&out_shape);
    let mut winners = vec![0; out.len()];
    kernels::maxpool2_forward(input.data(), c, h, w, out.data_mut(), &mut winners);
    Ok((
        out,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            output_shape: out_shape.to_vec(),
            winners,
        },
    ))
}

pub fn maxpool2_backward(indices: &PoolIndices, d_output: &Tensor) -> Result<Tensor> {
    if d_output.shape() != indices.output_shape.as_slice() {
        return Err(Error::invalid(format!(
            "pool upstream gradient must be {:?}, got {:?}",
            indices.output_shape,
            d_output.shape()
        )));
    }
    let mut d_input = Tensor::zeros(&indices.input_shape);
    kernels::maxpool2_backward(&indices.winners, d_output.data(), d_input.data_mut());
    Ok(d_input)
}

fn dense_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    match *weights.shape() {
        [m, n] if input.len() == n && input.rank() == 1 => Ok((m, n)),
        _ => Err(Error::invalid(format!(
            "dense weights {:?} do not accept input {:?}",
            weights.shape(),
            input.shape()
        ))),
    }
}

pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = dense_dims(input, weights)?;
    if bias.shape() != [m] {
        return Err(Error::invalid(format!("dense bias must be [{m}], got {:?}", bias.shape())));
    }
    let mut out = Tensor::zeros(&[m]);
    kernels::dense_forward(input.data(), weights.data(), bias.data(), m, n, out.data_mut());
    Ok(out)
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, d_output: &Tensor) -> Result<LayerGrads> {
    let (m, n) = dense_dims(input, weights)?;
    if d_output.shape() != [m] {
        return Err(Error::invalid(format!(
            "dense upstream gradient must be [{m}], got {:?}",
            d_output.shape()
        )));
    }
    let mut d_weights = Tensor::zeros(&[m, n]);
    let mut d_bias = Tensor::zeros(&[m]);
    let mut d_input = Tensor::zeros(&[n]);
    kernels::dense_backward(
        input.data(),
        weights.data(),
        m,
        n,
        d_output.data(),
        d_weights.data_mut(),
        d_bias.data_mut(),
        Some(d_input.data_mut()),
    );
    Ok(LayerGrads {
        d_weights,
        d_bias,
        d_input,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient is zero wherever `x <= 0`, including exactly at zero.
pub fn relu_backward(x: &Tensor, d_y: &Tensor) -> Result<Tensor> {
    if x.shape() != d_y.shape() {
        return Err(Error::invalid(format!(
            "relu gradient shape {:?} does not match input {:?}",
            d_y.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(d_y.data())
        .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

const SIGMOID_LO: f64 = f64::MIN_POSITIVE;
const SIGMOID_HI: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, clamped so the result stays strictly inside (0, 1) even
/// where the exact value rounds to 0 or 1.
pub fn sigmoid_scalar(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(SIGMOID_LO, SIGMOID_HI)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Takes the forward *output* `y`.
pub fn sigmoid_backward(y: &Tensor, d_y: &Tensor) -> Result<Tensor> {
    if y.shape() != d_y.shape() {
        return Err(Error::invalid(format!(
            "sigmoid gradient shape {:?} does not match output {:?}",
            d_y.shape(),
            y.shape()
        )));
    }
    let data = y
        .data()
        .iter()
        .zip(d_y.data())
        .map(|(&yi, &g)| g * yi * (1.0 - yi))
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}
