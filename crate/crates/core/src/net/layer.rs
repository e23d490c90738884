use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::quant::{self, int_range};
use crate::{Error, Result};

/// Bitwidths accepted for stored layer weights.
pub const LAYER_BITS: core::ops::RangeInclusive<u8> = 4..=8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    FullyConnected,
    Convolution,
}

/// Weight tensor geometry.
///
/// Storage is row-major over the declared dims: a dense layer `(in, out)`
/// stores `w[i][o]` at `i * out + o`; a convolution `(k, k, C_i, C_o)` stores
/// `w[ky][kx][c][o]` at `((ky * k + kx) * C_i + c) * C_o + o`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Square kernel, stride 1, zero "same" padding (`(k - 1) / 2` rows and
    /// columns before, the rest after).
    Conv {
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
    },
}

impl LayerShape {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerShape::Dense { .. } => LayerKind::FullyConnected,
            LayerShape::Conv { .. } => LayerKind::Convolution,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            LayerShape::Dense { inputs, outputs } => vec![inputs, outputs],
            LayerShape::Conv {
                kernel,
                in_channels,
                out_channels,
            } => vec![kernel, kernel, in_channels, out_channels],
        }
    }

    /// Rebuilds a shape from its kind and dims.
    pub fn from_dims(kind: LayerKind, dims: &[usize]) -> Result<Self> {
        let shape = match (kind, dims) {
            (LayerKind::FullyConnected, &[inputs, outputs]) => {
                LayerShape::Dense { inputs, outputs }
            }
            (LayerKind::Convolution, &[k1, k2, in_channels, out_channels]) if k1 == k2 => {
                LayerShape::Conv {
                    kernel: k1,
                    in_channels,
                    out_channels,
                }
            }
            _ => return Err(Error::Shape(format!("invalid dims {dims:?} for {kind:?}"))),
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerShape::Dense { inputs, outputs } if inputs > 0 && outputs > 0 => Ok(()),
            LayerShape::Conv {
                kernel,
                in_channels,
                out_channels,
            } if kernel > 0 && in_channels > 0 && out_channels > 0 => Ok(()),
            _ => Err(Error::Shape(format!("degenerate layer shape {self:?}"))),
        }
    }

    pub fn element_count(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn outputs(&self) -> usize {
        match *self {
            LayerShape::Dense { outputs, .. } => outputs,
            LayerShape::Conv { out_channels, .. } => out_channels,
        }
    }
}

/// One quantized layer: weights are two's-complement integers of
/// `bitwidth` bits stored sign-extended in `i8`; biases stay real-valued.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub shape: LayerShape,
    /// 2x2 max pooling after the activation (convolutions only).
    pub pool: bool,
    pub bitwidth: u8,
    pub scale: f64,
    pub weights: Vec<i8>,
    pub bias: Vec<f64>,
    pub index: usize,
}

impl LayerParams {
    pub fn new(
        shape: LayerShape,
        pool: bool,
        bitwidth: u8,
        scale: f64,
        weights: Vec<i8>,
        bias: Vec<f64>,
        index: usize,
    ) -> Result<Self> {
        let layer = Self {
            shape,
            pool,
            bitwidth,
            scale,
            weights,
            bias,
            index,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Quantizes real weights into a layer.
    pub fn from_real(
        shape: LayerShape,
        pool: bool,
        bitwidth: u8,
        weights: &[f64],
        bias: Vec<f64>,
        index: usize,
    ) -> Result<Self> {
        quant::check_bitwidth(bitwidth, LAYER_BITS)?;
        let (q, scale) = quant::quantize(weights, bitwidth)?;
        Self::new(shape, pool, bitwidth, scale, q, bias, index)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        quant::check_bitwidth(self.bitwidth, LAYER_BITS)?;
        if self.pool && self.shape.kind() != LayerKind::Convolution {
            return Err(Error::Shape(format!(
                "layer {}: pooling on a dense layer",
                self.index
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Invalid(format!(
                "layer {}: scale {} not positive",
                self.index, self.scale
            )));
        }
        if self.weights.len() != self.shape.element_count() {
            return Err(Error::Shape(format!(
                "layer {}: {} weights for shape {:?}",
                self.index,
                self.weights.len(),
                self.shape.dims()
            )));
        }
        if self.bias.len() != self.shape.outputs() {
            return Err(Error::Shape(format!(
                "layer {}: bias length {} != {} outputs",
                self.index,
                self.bias.len(),
                self.shape.outputs()
            )));
        }
        if let Some(i) = self.bias.iter().position(|b| !b.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        let (lo, hi) = int_range(self.bitwidth);
        if let Some(i) = self
            .weights
            .iter()
            .position(|&w| !(lo..=hi).contains(&(w as i32)))
        {
            return Err(Error::OutOfRange(format!(
                "layer {}: weight {} = {} outside {}-bit range",
                self.index, i, self.weights[i], self.bitwidth
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> LayerKind {
        self.shape.kind()
    }

    pub fn element_count(&self) -> usize {
        self.weights.len()
    }

    pub fn dequantize(&self) -> Vec<f64> {
        quant::dequantize_values(&self.weights, self.scale)
    }

    /// Weight value as a `bitwidth`-bit field (no sign extension).
    pub fn raw_bits(&self, element: usize) -> u8 {
        let mask = if self.bitwidth == 8 {
            0xFF
        } else {
            (1u8 << self.bitwidth) - 1
        };
        self.weights[element] as u8 & mask
    }
}

/// `scale * q` for every weight of `layer`.
pub fn dequantize(layer: &LayerParams) -> Vec<f64> {
    layer.dequantize()
}
