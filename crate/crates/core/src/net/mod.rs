//! Minimal fixed-point neural-network engine: dense and convolutional layers
//! with ReLU, optional 2x2 max pooling, mean cross-entropy loss and exact
//! backpropagation.

mod data;
mod engine;
mod layer;
mod model;
pub mod quant;
mod train;

pub use data::{gaussian_blobs, BlobConfig, BlobSplits, Dataset, Split, VALIDATION_PER_CLASS};
pub use engine::{cross_entropy, logit_gradient, FloatLayer, Gradients, Network};
pub use layer::{dequantize, LayerKind, LayerParams, LayerShape, LAYER_BITS};
pub use model::{argmax, Activation, BitFlip, GradientSet, QuantizedModel};
pub use quant::{flip_value_bit, int_range, quantize};
pub use train::{quantize_network, train_toy, Architecture, LayerSpec, TrainConfig};
