//! Closed-form parameter and FLOP accounting.
//!
//! Convention: one multiply-accumulate is two FLOPs; activations, pooling and
//! bias additions are not counted. Convolutions count every tap of the 5x5
//! window at every output position, including taps that fall on padding.

use serde::{Deserialize, Serialize};

use super::{LayerId, Layout, ModelConfig};
use crate::error::Result;
use crate::tensor::KERNEL;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerParams {
    pub layer: String,
    pub weights: usize,
    pub biases: usize,
}

impl LayerParams {
    pub fn total(&self) -> usize {
        self.weights + self.biases
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub layers: Vec<LayerParams>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub layer: String,
    pub macs: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounts {
    pub layers: Vec<LayerFlops>,
    pub total_macs: u64,
    pub total_flops: u64,
}

pub fn count_params(config: &ModelConfig) -> Result<ParamCounts> {
    config.validate()?;
    let layout = Layout::for_config(config);
    let layers: Vec<LayerParams> = layout
        .slots()
        .iter()
        .map(|s| LayerParams {
            layer: s.id.name().to_string(),
            weights: s.weights.len(),
            biases: s.bias.len(),
        })
        .collect();
    let total = layers.iter().map(LayerParams::total).sum();
    Ok(ParamCounts { layers, total })
}

pub fn count_flops(config: &ModelConfig) -> Result<FlopCounts> {
    config.validate()?;
    let layout = Layout::for_config(config);
    let window = (KERNEL * KERNEL) as u64;
    let layers: Vec<LayerFlops> = layout
        .slots()
        .iter()
        .map(|s| {
            let macs = match s.id {
                LayerId::Conv1 => (s.weight_shape[0] * s.weight_shape[1] * config.input_h() * config.input_w()) as u64 * window,
                LayerId::Conv2 => {
                    (s.weight_shape[0] * s.weight_shape[1] * config.pooled_h() * config.pooled_w()) as u64 * window
                }
                _ => s.weights.len() as u64,
            };
            LayerFlops {
                layer: s.id.name().to_string(),
                macs,
                flops: 2 * macs,
            }
        })
        .collect();
    let total_macs = layers.iter().map(|l| l.macs).sum();
    Ok(FlopCounts {
        layers,
        total_macs,
        total_flops: 2 * total_macs,
    })
}

/// Multiply-accumulates observed during an instrumented forward pass.
///
/// `executed` counts the taps the kernels actually ran; `padding` counts the
/// window taps that landed on the zero border and were skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacTally {
    pub layers: Vec<(LayerId, u64, u64)>,
}

impl MacTally {
    pub(crate) fn record_conv(&mut self, id: LayerId, executed: u64, c_out: usize, c_in: usize, h: usize, w: usize) {
        let window_taps = (c_out * c_in * h * w * KERNEL * KERNEL) as u64;
        self.layers.push((id, executed, window_taps - executed));
    }

    pub(crate) fn record_dense(&mut self, id: LayerId, m: usize, n: usize) {
        self.layers.push((id, (m * n) as u64, 0));
    }

    pub fn executed(&self) -> u64 {
        self.layers.iter().map(|l| l.1).sum()
    }

    /// Executed plus skipped padding taps: the convention of [`count_flops`].
    pub fn window_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.1 + l.2).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_instrumented, FusionModel, Variant};
    use crate::tensor::Tensor;

    fn cfg(nf: usize, nr: usize, v: Variant) -> ModelConfig {
        ModelConfig::new(nf, nr, v).unwrap()
    }

    #[test]
    fn fusion_totals_per_subsampling() {
        let totals: Vec<usize> = [1, 2, 3]
            .iter()
            .map(|&nr| count_params(&cfg(3, nr, Variant::Fusion)).unwrap().total)
            .collect();
        assert_eq!(totals, vec![750_274, 197_314, 89_794]);
    }

    #[test]
    fn per_layer_breakdown() {
        let p = count_params(&cfg(3, 1, Variant::Fusion)).unwrap();
        let by_name: Vec<(&str, usize)> = p.layers.iter().map(|l| (l.layer.as_str(), l.total())).collect();
        assert_eq!(
            by_name,
            vec![
                ("conv1", 456),
                ("conv2", 2_416),
                ("fc1", 368_760),
                ("fc2", 9_680),
                ("out", 81),
                ("kg_fc", 368_760),
                ("kg_out", 121)
            ]
        );
    }

    #[test]
    fn flop_examples() {
        let f = count_flops(&cfg(3, 1, Variant::Fusion)).unwrap();
        assert_eq!(f.layers[0].macs, 345_600);
        assert_eq!(f.layers[0].flops, 691_200);
        for nr in [1, 2, 3] {
            let f = count_flops(&cfg(3, nr, Variant::Fusion)).unwrap();
            let fc2 = f.layers.iter().find(|l| l.layer == "fc2").unwrap();
            assert_eq!(fc2.flops, 19_200);
        }
    }

    #[test]
    fn monotone_in_subsampling_and_frames() {
        for v in [Variant::Fusion, Variant::ThermalOnly] {
            for nf in 1..=6 {
                let p: Vec<_> = [1, 2, 3].iter().map(|&nr| count_params(&cfg(nf, nr, v)).unwrap().total).collect();
                let f: Vec<_> = [1, 2, 3].iter().map(|&nr| count_flops(&cfg(nf, nr, v)).unwrap().total_flops).collect();
                assert!(p[0] > p[1] && p[1] > p[2]);
                assert!(f[0] > f[1] && f[1] > f[2]);
            }
            for nr in [1, 2, 3] {
                for nf in 1..6 {
                    assert!(count_params(&cfg(nf + 1, nr, v)).unwrap().total > count_params(&cfg(nf, nr, v)).unwrap().total);
                    assert!(
                        count_flops(&cfg(nf + 1, nr, v)).unwrap().total_flops
                            > count_flops(&cfg(nf, nr, v)).unwrap().total_flops
                    );
                }
            }
        }
    }

    #[test]
    fn counts_agree_with_instrumented_forward() {
        for v in [Variant::Fusion, Variant::ThermalOnly] {
            for nf in [1, 3, 5] {
                for nr in [1, 2, 3] {
                    let c = cfg(nf, nr, v);
                    let m = FusionModel::zeroed(c).unwrap();
                    assert_eq!(count_params(&c).unwrap().total, m.n_params());
                    let (_, tally) = forward_instrumented(&m, &Tensor::zeros(&c.input_shape())).unwrap();
                    let f = count_flops(&c).unwrap();
                    assert_eq!(tally.window_macs(), f.total_macs);
                    assert!(tally.executed() < tally.window_macs());
                    for ((id, exec, pad), lf) in tally.layers.iter().zip(&f.layers) {
                        assert_eq!(id.name(), lf.layer);
                        assert_eq!(exec + pad, lf.macs);
                    }
                }
            }
        }
    }
}
