use alloc::format;
use alloc::vec::Vec;

use super::data::Dataset;
use super::engine::{FloatLayer, Network};
use super::layer::{LayerKind, LayerParams, LayerShape};
use super::quant::flip_value_bit;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

/// Ordered quantized layers. The class count is the last layer's output
/// width.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    layers: Vec<LayerParams>,
    activation: Activation,
}

/// Per-layer gradients with respect to the dequantized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Vec<f64>>,
}

/// One committed bit inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitFlip {
    pub layer: usize,
    pub element: usize,
    pub bit: u8,
    pub old_value: i8,
    pub new_value: i8,
}

impl QuantizedModel {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("model has no layers"));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.validate()?;
            if layer.index != i {
                return Err(Error::Invalid(format!(
                    "layer at position {i} carries index {}",
                    layer.index
                )));
            }
        }
        for pair in layers.windows(2) {
            let (a, b) = (&pair[0].shape, &pair[1].shape);
            let ok = match (*a, *b) {
                (LayerShape::Dense { outputs, .. }, LayerShape::Dense { inputs, .. }) => {
                    outputs == inputs
                }
                (LayerShape::Conv { out_channels, .. }, LayerShape::Conv { in_channels, .. }) => {
                    out_channels == in_channels
                }
                // Flattened feature map: spatial size is only known at run time.
                (LayerShape::Conv { out_channels, .. }, LayerShape::Dense { inputs, .. }) => {
                    inputs % out_channels == 0
                }
                (LayerShape::Dense { .. }, LayerShape::Conv { .. }) => false,
            };
            if !ok {
                return Err(Error::Shape(format!(
                    "layer {} output does not compose with layer {} input",
                    pair[0].index, pair[1].index
                )));
            }
        }
        let last = layers.last().expect("non-empty");
        if last.kind() != LayerKind::FullyConnected || last.shape.outputs() < 2 {
            return Err(Error::Shape(
                "output layer must be fully connected with >= 2 classes".into(),
            ));
        }
        Ok(Self {
            layers,
            activation: Activation::Relu,
        })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Result<&LayerParams> {
        self.layers
            .get(index)
            .ok_or_else(|| Error::OutOfRange(format!("layer {index} of {}", self.layers.len())))
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.shape.outputs())
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// Real-valued copy of the network (weights dequantized).
    pub fn dequantized(&self) -> Network {
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| FloatLayer {
                    shape: l.shape,
                    pool: l.pool,
                    weights: l.dequantize(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    /// Logits (sample-major) and mean cross-entropy of `batch`.
    pub fn forward(&self, batch: &Dataset) -> Result<(Vec<f64>, f64)> {
        self.dequantized().forward(batch)
    }

    pub fn loss(&self, batch: &Dataset) -> Result<f64> {
        self.dequantized().loss(batch)
    }

    pub fn logits(&self, batch: &Dataset) -> Result<Vec<f64>> {
        self.dequantized().logits(batch)
    }

    /// Gradients of the batch-mean cross-entropy with respect to each
    /// dequantized weight (rounding treated as identity).
    pub fn backward(&self, batch: &Dataset) -> Result<GradientSet> {
        let g = self.dequantized().gradients(batch)?;
        Ok(GradientSet { layers: g.weights })
    }

    /// Fraction of samples whose argmax logit (lowest index on ties) equals
    /// the label. Empty data scores 0.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        data.check_labels(self.num_classes())?;
        let logits = self.logits(data)?;
        let c = self.num_classes();
        let correct = data
            .labels()
            .iter()
            .enumerate()
            .filter(|&(i, &y)| argmax(&logits[i * c..(i + 1) * c]) == y as usize)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    fn check_flip(&self, layer: usize, element: usize, bit: u8) -> Result<&LayerParams> {
        let l = self.layer(layer)?;
        if element >= l.weights.len() {
            return Err(Error::OutOfRange(format!(
                "element {element} of layer {layer} ({} weights)",
                l.weights.len()
            )));
        }
        if bit >= l.bitwidth {
            return Err(Error::OutOfRange(format!(
                "bit {bit} of a {}-bit weight",
                l.bitwidth
            )));
        }
        Ok(l)
    }

    /// Copy of the model with one two's-complement weight bit inverted
    /// (bit 0 least significant, bit `bitwidth - 1` the sign).
    pub fn flip_bit(&self, layer: usize, element: usize, bit: u8) -> Result<Self> {
        let mut m = self.clone();
        m.flip_bit_in_place(layer, element, bit)?;
        Ok(m)
    }

    pub fn flip_bit_in_place(&mut self, layer: usize, element: usize, bit: u8) -> Result<BitFlip> {
        let bitwidth = self.check_flip(layer, element, bit)?.bitwidth;
        let w = &mut self.layers[layer].weights[element];
        let old_value = *w;
        let new_value = flip_value_bit(old_value, bitwidth, bit);
        *w = new_value;
        debug_assert!(self.layers[layer].validate().is_ok());
        Ok(BitFlip {
            layer,
            element,
            bit,
            old_value,
            new_value,
        })
    }

    /// Overwrites one weight; the value must be in the layer's range.
    pub fn set_weight(&mut self, layer: usize, element: usize, value: i8) -> Result<()> {
        let l = self.check_flip(layer, element, 0)?;
        let (lo, hi) = super::quant::int_range(l.bitwidth);
        if !(lo..=hi).contains(&(value as i32)) {
            return Err(Error::OutOfRange(format!(
                "value {value} outside {}-bit range",
                l.bitwidth
            )));
        }
        self.layers[layer].weights[element] = value;
        Ok(())
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
