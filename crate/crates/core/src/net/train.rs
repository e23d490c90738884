use alloc::vec;
use alloc::vec::Vec;

use super::data::Dataset;
use super::engine::{FloatLayer, Network};
use super::layer::{LayerParams, LayerShape, LAYER_BITS};
use super::model::QuantizedModel;
use super::quant::check_bitwidth;
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub shape: LayerShape,
    pub pool: bool,
}

/// Architecture descriptor for [`train_toy`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Two-layer perceptron `inputs -> hidden -> classes`.
    pub fn mlp(inputs: usize, hidden: usize, classes: usize) -> Self {
        Self {
            layers: vec![
                LayerSpec {
                    shape: LayerShape::Dense {
                        inputs,
                        outputs: hidden,
                    },
                    pool: false,
                },
                LayerSpec {
                    shape: LayerShape::Dense {
                        inputs: hidden,
                        outputs: classes,
                    },
                    pool: false,
                },
            ],
        }
    }

    /// Six-layer CNN for `channels x 8 x 8` inputs: three 3x3 convolutions
    /// (the last two followed by 2x2 pooling) and three dense layers.
    pub fn toy_cnn(channels: usize, classes: usize) -> Self {
        let conv = |c_in, c_out, pool| LayerSpec {
            shape: LayerShape::Conv {
                kernel: 3,
                in_channels: c_in,
                out_channels: c_out,
            },
            pool,
        };
        let dense = |inputs, outputs| LayerSpec {
            shape: LayerShape::Dense { inputs, outputs },
            pool: false,
        };
        Self {
            layers: vec![
                conv(channels, 4, false),
                conv(4, 8, true),
                conv(8, 8, true),
                dense(8 * 2 * 2, 16),
                dense(16, 16),
                dense(16, classes),
            ],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.shape.element_count() + l.shape.outputs())
            .sum()
    }

    /// He-normal weights and zero biases drawn from `seed`.
    pub fn init(&self, seed: u64) -> Result<Network> {
        let mut rng = SplitMix64::new(seed);
        let mut layers = Vec::with_capacity(self.layers.len());
        for spec in &self.layers {
            spec.shape.validate()?;
            let fan_in = match spec.shape {
                LayerShape::Dense { inputs, .. } => inputs,
                LayerShape::Conv {
                    kernel,
                    in_channels,
                    ..
                } => kernel * kernel * in_channels,
            };
            let std = libm::sqrt(2.0 / fan_in as f64);
            layers.push(FloatLayer {
                shape: spec.shape,
                pool: spec.pool,
                weights: (0..spec.shape.element_count())
                    .map(|_| std * rng.normal())
                    .collect(),
                bias: vec![0.0; spec.shape.outputs()],
            });
        }
        Ok(Network { layers })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub bitwidth: u8,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            seed: 0,
            bitwidth: 8,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
        }
    }
}

/// Quantizes every layer of a real-valued network.
pub fn quantize_network(net: &Network, bitwidth: u8) -> Result<QuantizedModel> {
    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            LayerParams::from_real(l.shape, l.pool, bitwidth, &l.weights, l.bias.clone(), i)
        })
        .collect::<Result<Vec<_>>>()?;
    QuantizedModel::new(layers)
}

/// Mini-batch SGD with momentum in real arithmetic, then per-layer
/// quantization. Deterministic for a fixed config.
pub fn train_toy(arch: &Architecture, data: &Dataset, cfg: &TrainConfig) -> Result<QuantizedModel> {
    check_bitwidth(cfg.bitwidth, LAYER_BITS)?;
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let mut net = arch.init(cfg.seed)?;
    // Validate the architecture against the data even when no epoch runs.
    if data.is_empty() {
        if cfg.epochs > 0 {
            return Err(Error::Empty("training data"));
        }
    } else {
        net.loss(&data.subset(&[0]))?;
    }
    let mut rng = SplitMix64::new(cfg.seed ^ 0xD1B5_4A32_D192_ED03);
    let mut vw: Vec<Vec<f64>> = net
        .layers
        .iter()
        .map(|l| vec![0.0; l.weights.len()])
        .collect();
    let mut vb: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.subset(chunk);
            let g = net.gradients(&batch)?;
            if !g.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            for (l, layer) in net.layers.iter_mut().enumerate() {
                for ((w, v), gr) in layer.weights.iter_mut().zip(&mut vw[l]).zip(&g.weights[l]) {
                    *v = cfg.momentum * *v - cfg.learning_rate * gr;
                    *w += *v;
                }
                for ((b, v), gr) in layer.bias.iter_mut().zip(&mut vb[l]).zip(&g.bias[l]) {
                    *v = cfg.momentum * *v - cfg.learning_rate * gr;
                    *b += *v;
                }
            }
        }
        let bad = net
            .layers
            .iter()
            .any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()));
        if bad {
            return Err(Error::Diverged { epoch });
        }
    }
    quantize_network(&net, cfg.bitwidth).map_err(|e| match e {
        Error::NonFinite { .. } => Error::Diverged { epoch: cfg.epochs },
        other => other,
    })
}
