//! The fusion CNN: a shared two-convolution backbone, a thermal-only speed
//! regressor and a sigmoid gain head that mixes the thermal estimate with the
//! averaged gyro reading.
//!
//! All learnable values live in one flat vector ([`FusionModel::params`]); the
//! [`Layout`] maps each layer onto a slice of it, which lets the optimizer and
//! the weight file treat the model as a single array.

mod complexity;
pub mod gradcheck;
mod io;
mod network;

pub use complexity::{count_flops, count_params, FlopCounts, LayerFlops, LayerParams, MacTally, ParamCounts};
pub use io::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_FORMAT, WEIGHTS_VERSION};
pub use network::{
    backward, backward_batch, backward_into, forward, forward_batch, forward_instrumented, fuse, ForwardTrace,
};

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{NATIVE_H, NATIVE_W};
use crate::error::{Error, Result};
use crate::tensor::KERNEL;

pub const CONV1_FILTERS: usize = 6;
pub const CONV2_FILTERS: usize = 16;
pub const FC1_UNITS: usize = 120;
pub const FC2_UNITS: usize = 80;
pub const GAIN_UNITS: usize = 120;

/// Supported resolution subsampling factors.
pub const SUBSAMPLE_FACTORS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ThermalOnly,
    Fusion,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::ThermalOnly => "thermal_only",
            Variant::Fusion => "fusion",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thermal_only" | "thermal-only" | "thermal" => Ok(Variant::ThermalOnly),
            "fusion" | "fus" => Ok(Variant::Fusion),
            other => Err(Error::config(format!(
                "unknown variant '{other}' (expected thermal_only or fusion)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Consecutive frames stacked as input channels.
    pub n_frames: usize,
    /// Block-averaging factor applied to the native 24x32 frame.
    pub subsample: usize,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn new(n_frames: usize, subsample: usize, variant: Variant) -> Result<Self> {
        let cfg = ModelConfig {
            n_frames,
            subsample,
            variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::config("n_frames must be >= 1"));
        }
        if !SUBSAMPLE_FACTORS.contains(&self.subsample) {
            return Err(Error::config(format!(
                "unsupported subsampling factor {} (expected one of {SUBSAMPLE_FACTORS:?})",
                self.subsample
            )));
        }
        Ok(())
    }

    pub fn input_h(&self) -> usize {
        NATIVE_H / self.subsample
    }

    pub fn input_w(&self) -> usize {
        NATIVE_W / self.subsample
    }

    pub fn pooled_h(&self) -> usize {
        self.input_h() / 2
    }

    pub fn pooled_w(&self) -> usize {
        self.input_w() / 2
    }

    /// Length of the flattened conv2 feature map fed to both heads.
    pub fn flatten_len(&self) -> usize {
        CONV2_FILTERS * self.pooled_h() * self.pooled_w()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.n_frames, self.input_h(), self.input_w()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerId {
    Conv1,
    Conv2,
    Fc1,
    Fc2,
    Out,
    GainFc,
    GainOut,
}

impl LayerId {
    pub fn name(self) -> &'static str {
        match self {
            LayerId::Conv1 => "conv1",
            LayerId::Conv2 => "conv2",
            LayerId::Fc1 => "fc1",
            LayerId::Fc2 => "fc2",
            LayerId::Out => "out",
            LayerId::GainFc => "kg_fc",
            LayerId::GainOut => "kg_out",
        }
    }

    /// Followed by a ReLU (as opposed to the linear and sigmoid outputs).
    fn feeds_relu(self) -> bool {
        !matches!(self, LayerId::Out | LayerId::GainOut)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlot {
    pub id: LayerId,
    pub weight_shape: Vec<usize>,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

impl LayerSlot {
    pub fn fan_in(&self) -> usize {
        self.weight_shape[1..].iter().product()
    }

    pub fn fan_out(&self) -> usize {
        match self.weight_shape.len() {
            4 => self.weight_shape[0] * KERNEL * KERNEL,
            _ => self.weight_shape[0],
        }
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Where each layer's weights and biases sit in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    slots: Vec<LayerSlot>,
    total: usize,
}

impl Layout {
    pub fn for_config(cfg: &ModelConfig) -> Self {
        let flat = cfg.flatten_len();
        let mut shapes = vec![
            (LayerId::Conv1, vec![CONV1_FILTERS, cfg.n_frames, KERNEL, KERNEL]),
            (LayerId::Conv2, vec![CONV2_FILTERS, CONV1_FILTERS, KERNEL, KERNEL]),
            (LayerId::Fc1, vec![FC1_UNITS, flat]),
            (LayerId::Fc2, vec![FC2_UNITS, FC1_UNITS]),
            (LayerId::Out, vec![1, FC2_UNITS]),
        ];
        if cfg.variant == Variant::Fusion {
            shapes.push((LayerId::GainFc, vec![GAIN_UNITS, flat]));
            shapes.push((LayerId::GainOut, vec![1, GAIN_UNITS]));
        }
        let mut offset = 0;
        let slots = shapes
            .into_iter()
            .map(|(id, weight_shape)| {
                let n_w: usize = weight_shape.iter().product();
                let n_b = weight_shape[0];
                let slot = LayerSlot {
                    id,
                    weight_shape,
                    weights: offset..offset + n_w,
                    bias: offset + n_w..offset + n_w + n_b,
                };
                offset += n_w + n_b;
                slot
            })
            .collect();
        Layout { slots, total: offset }
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    pub fn slot(&self, id: LayerId) -> Option<&LayerSlot> {
        self.slots.iter().find(|s| s.id == id)
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl FusionModel {
    /// Seeded initialization: uniform He bounds `sqrt(6/fan_in)` for layers
    /// followed by a ReLU, uniform Glorot bounds `sqrt(6/(fan_in+fan_out))` for
    /// the linear and sigmoid outputs, zero biases. Layers are drawn in layout
    /// order, so both variants share their common parameters for a given seed.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::for_config(&config);
        let mut params = vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in layout.slots() {
            let bound = if slot.id.feeds_relu() {
                (6.0 / slot.fan_in() as f64).sqrt()
            } else {
                (6.0 / (slot.fan_in() + slot.fan_out()) as f64).sqrt()
            };
            for p in &mut params[slot.weights.clone()] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(FusionModel {
            config,
            layout,
            params,
        })
    }

    /// Every parameter zero: `y_th = 0` and `K_g = 0.5` for any input.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::for_config(&config);
        Ok(FusionModel {
            params: vec![0.0; layout.total()],
            config,
            layout,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::for_config(&config);
        if params.len() != layout.total() {
            return Err(Error::invalid(format!(
                "model {config:?} has {} parameters, got {}",
                layout.total(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("non-finite model parameter".into()));
        }
        Ok(FusionModel {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn has_gain_head(&self) -> bool {
        self.layout.slot(LayerId::GainFc).is_some()
    }

    /// Weights and bias of one layer, or `None` if the variant lacks it.
    pub fn layer(&self, id: LayerId) -> Option<(&[f64], &[f64])> {
        self.layout
            .slot(id)
            .map(|s| (&self.params[s.weights.clone()], &self.params[s.bias.clone()]))
    }

    pub fn layer_mut(&mut self, id: LayerId) -> Option<(&mut [f64], &mut [f64])> {
        let slot = self.layout.slot(id)?.clone();
        let (head, tail) = self.params.split_at_mut(slot.bias.start);
        Some((&mut head[slot.weights], &mut tail[..slot.bias.len()]))
    }
}

/// Parameter gradients in the same flat layout as [`FusionModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub(crate) data: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_for(model: &FusionModel) -> Self {
        ModelGrads {
            data: vec![0.0; model.n_params()],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn layer<'a>(&'a self, model: &FusionModel, id: LayerId) -> Option<(&'a [f64], &'a [f64])> {
        model
            .layout()
            .slot(id)
            .map(|s| (&self.data[s.weights.clone()], &self.data[s.bias.clone()]))
    }

    pub fn clear(&mut self) {
        self.data.fill(0.0);
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|g| *g *= k);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic() {
        let cfg = ModelConfig::new(3, 1, Variant::Fusion).unwrap();
        let a = FusionModel::build(cfg, 7).unwrap();
        let b = FusionModel::build(cfg, 7).unwrap();
        assert_eq!(a.params(), b.params());
        let c = FusionModel::build(cfg, 8).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn fusion_parameter_count() {
        let cfg = ModelConfig::new(3, 1, Variant::Fusion).unwrap();
        assert_eq!(FusionModel::build(cfg, 7).unwrap().n_params(), 750_274);
    }

    #[test]
    fn thermal_only_has_no_gain_head() {
        let cfg = ModelConfig::new(3, 1, Variant::ThermalOnly).unwrap();
        let m = FusionModel::build(cfg, 7).unwrap();
        assert!(!m.has_gain_head());
        assert!(m.layer(LayerId::GainFc).is_none());
        assert!(m.layer(LayerId::GainOut).is_none());
        assert_eq!(m.n_params(), 750_274 - 368_760 - 121);
    }

    #[test]
    fn variants_share_common_parameters() {
        let fus = FusionModel::build(ModelConfig::new(2, 3, Variant::Fusion).unwrap(), 11).unwrap();
        let th = FusionModel::build(ModelConfig::new(2, 3, Variant::ThermalOnly).unwrap(), 11).unwrap();
        assert_eq!(&fus.params()[..th.n_params()], th.params());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ModelConfig::new(3, 4, Variant::Fusion).is_err());
        assert!(ModelConfig::new(3, 0, Variant::Fusion).is_err());
        assert!(ModelConfig::new(0, 1, Variant::Fusion).is_err());
        let bad = ModelConfig {
            n_frames: 3,
            subsample: 5,
            variant: Variant::Fusion,
        };
        assert!(FusionModel::build(bad, 1).is_err());
    }

    #[test]
    fn init_bounds_and_zero_biases() {
        let m = FusionModel::build(ModelConfig::new(3, 2, Variant::Fusion).unwrap(), 3).unwrap();
        for slot in m.layout().slots() {
            let bound = if slot.id.feeds_relu() {
                (6.0 / slot.fan_in() as f64).sqrt()
            } else {
                (6.0 / (slot.fan_in() + slot.fan_out()) as f64).sqrt()
            };
            let (w, b) = m.layer(slot.id).unwrap();
            assert!(w.iter().all(|x| x.abs() <= bound));
            assert!(b.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn shape_chain_dimensions() {
        let c1 = ModelConfig::new(3, 1, Variant::Fusion).unwrap();
        assert_eq!(c1.input_shape(), [3, 24, 32]);
        assert_eq!(c1.flatten_len(), 3072);
        let c2 = ModelConfig::new(3, 2, Variant::Fusion).unwrap();
        assert_eq!(c2.input_shape(), [3, 12, 16]);
        assert_eq!(c2.flatten_len(), 768);
        let c3 = ModelConfig::new(3, 3, Variant::Fusion).unwrap();
        assert_eq!(c3.input_shape(), [3, 8, 10]);
        assert_eq!(c3.flatten_len(), 320);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("fusion".parse::<Variant>().unwrap(), Variant::Fusion);
        assert_eq!("thermal_only".parse::<Variant>().unwrap(), Variant::ThermalOnly);
        assert!("both".parse::<Variant>().is_err());
    }
}
