#![allow(dead_code)]

use hashtag_core::net::{
    gaussian_blobs, train_toy, Architecture, BlobConfig, BlobSplits, Dataset, LayerParams,
    LayerShape, QuantizedModel, Split, TrainConfig,
};
use hashtag_core::rng::SplitMix64;

pub fn blobs(
    classes: usize,
    per_class: usize,
    dims: &[usize],
    noise: f64,
    seed: u64,
) -> BlobSplits {
    gaussian_blobs(&BlobConfig {
        classes,
        per_class,
        input_dims: dims.to_vec(),
        noise,
        seed,
    })
    .unwrap()
}

/// Three-class 1x8x8 blobs and the six-layer toy CNN trained on them.
pub fn toy_cnn(bitwidth: u8) -> (QuantizedModel, BlobSplits) {
    let data = blobs(3, 100, &[1, 8, 8], 1.0, 2024);
    let cfg = TrainConfig {
        seed: 7,
        bitwidth,
        ..TrainConfig::default()
    };
    let model = train_toy(&Architecture::toy_cnn(1, 3), &data.train, &cfg).unwrap();
    (model, data)
}

/// Random quantized layer with the given geometry.
pub fn random_layer(
    shape: LayerShape,
    pool: bool,
    bitwidth: u8,
    index: usize,
    rng: &mut SplitMix64,
) -> LayerParams {
    let w: Vec<f64> = (0..shape.element_count()).map(|_| rng.normal()).collect();
    let b: Vec<f64> = (0..shape.outputs()).map(|_| 0.1 * rng.normal()).collect();
    LayerParams::from_real(shape, pool, bitwidth, &w, b, index).unwrap()
}

/// Small conv + pool + dense model (109 parameters) on 1x4x4 inputs.
pub fn small_cnn(bitwidth: u8, seed: u64) -> QuantizedModel {
    let mut rng = SplitMix64::new(seed);
    let conv = |ci, co| LayerShape::Conv {
        kernel: 3,
        in_channels: ci,
        out_channels: co,
    };
    QuantizedModel::new(vec![
        random_layer(conv(1, 2), false, bitwidth, 0, &mut rng),
        random_layer(conv(2, 2), true, bitwidth, 1, &mut rng),
        random_layer(
            LayerShape::Dense {
                inputs: 8,
                outputs: 4,
            },
            false,
            bitwidth,
            2,
            &mut rng,
        ),
        random_layer(
            LayerShape::Dense {
                inputs: 4,
                outputs: 3,
            },
            false,
            bitwidth,
            3,
            &mut rng,
        ),
    ])
    .unwrap()
}

pub fn random_data(n: usize, dims: &[usize], classes: u16, seed: u64) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    let per: usize = dims.iter().product();
    let inputs = (0..n * per).map(|_| rng.normal() as f32).collect();
    let labels = (0..n).map(|_| rng.below(classes as u64) as u16).collect();
    Dataset::new(inputs, dims.to_vec(), labels, Split::Validation).unwrap()
}
