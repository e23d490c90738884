//! Secret stream ordering, per-layer signatures and the signature bundle.
//!
//! A layer's weights become a hash stream by walking the kernel output
//! channel first: `(out, in, row, col)` for convolutions and `(out, in)` for
//! dense layers. The keyed traversal additionally shuffles that channel-major
//! list with a Fisher-Yates permutation seeded by the ordering key. Each
//! weight contributes one byte, its value sign-extended to 8 bits.

use alloc::format;
use alloc::vec::Vec;

use crate::net::{LayerParams, LayerShape, QuantizedModel};
use crate::pearson::{gen_table, hash_wide_with, HashTable, HashValue};
use crate::rng::{mix64, SplitMix64};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Traversal {
    #[default]
    ChannelMajor,
    KeyedPermutation,
}

impl Traversal {
    pub fn code(self) -> u8 {
        match self {
            Traversal::ChannelMajor => 0,
            Traversal::KeyedPermutation => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Traversal::ChannelMajor),
            1 => Some(Traversal::KeyedPermutation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderingKey {
    pub layer_index: usize,
    pub key: u64,
    pub traversal: Traversal,
}

/// Storage indices of `shape` in channel-major order.
pub fn channel_major_indices(shape: &LayerShape) -> Vec<usize> {
    let mut order = Vec::with_capacity(shape.element_count());
    match *shape {
        LayerShape::Dense { inputs, outputs } => {
            for o in 0..outputs {
                for i in 0..inputs {
                    order.push(i * outputs + o);
                }
            }
        }
        LayerShape::Conv {
            kernel: k,
            in_channels: ci,
            out_channels: co,
        } => {
            for o in 0..co {
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            order.push(((ky * k + kx) * ci + c) * co + o);
                        }
                    }
                }
            }
        }
    }
    order
}

/// Storage index emitted at each stream position.
pub fn stream_permutation(layer: &LayerParams, ordering: &OrderingKey) -> Result<Vec<usize>> {
    if ordering.layer_index != layer.index {
        return Err(Error::Invalid(format!(
            "ordering for layer {} applied to layer {}",
            ordering.layer_index, layer.index
        )));
    }
    let mut order = channel_major_indices(&layer.shape);
    if order.len() != layer.weights.len() {
        return Err(Error::Shape(format!(
            "layer {}: ordering covers {} elements, layer has {}",
            layer.index,
            order.len(),
            layer.weights.len()
        )));
    }
    if ordering.traversal == Traversal::KeyedPermutation {
        SplitMix64::new(ordering.key).shuffle(&mut order);
    }
    Ok(order)
}

/// The layer's hash input: one sign-extended byte per weight in secret order.
pub fn order_stream(layer: &LayerParams, ordering: &OrderingKey) -> Result<Vec<u8>> {
    Ok(stream_permutation(layer, ordering)?
        .into_iter()
        .map(|i| layer.weights[i] as u8)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSignature {
    pub layer_index: usize,
    pub table_seed: u64,
    pub ordering: OrderingKey,
    pub hash: HashValue,
    pub element_count: usize,
}

impl LayerSignature {
    /// Digit tables for this signature's width.
    pub fn tables(&self) -> Vec<HashTable> {
        (0..self.hash.width())
            .map(|j| gen_table(crate::pearson::digit_seed(self.table_seed, j)))
            .collect()
    }

    /// Recomputes the hash of `layer` with this signature's secrets.
    pub fn recompute(&self, layer: &LayerParams) -> Result<HashValue> {
        if layer.weights.len() != self.element_count {
            return Err(Error::StructuralMismatch(format!(
                "layer {} has {} weights, signature covers {}",
                layer.index,
                layer.weights.len(),
                self.element_count
            )));
        }
        hash_wide_with(&self.tables(), &order_stream(layer, &self.ordering)?)
    }
}

/// Widened hash of the layer's ordered stream.
pub fn sign_layer(
    layer: &LayerParams,
    ordering: OrderingKey,
    table_seed: u64,
    width: usize,
) -> Result<LayerSignature> {
    let stream = order_stream(layer, &ordering)?;
    let hash = crate::pearson::hash_wide(table_seed, &stream, width)?;
    Ok(LayerSignature {
        layer_index: layer.index,
        table_seed,
        ordering,
        hash,
        element_count: layer.weights.len(),
    })
}

/// Public table seed of the model fingerprint. Not a secret.
pub const FINGERPRINT_SEED: u64 = 0x4854_4147_4650_5231; // "HTAGFPR1"

/// Identification hash over every layer's geometry, scale, biases and
/// weights, computed with a public table.
pub fn model_fingerprint(model: &QuantizedModel, width: usize) -> Result<HashValue> {
    let mut stream = Vec::with_capacity(model.weight_count() + 64 * model.num_layers());
    for layer in model.layers() {
        stream.push(layer.kind() as u8);
        stream.push(layer.bitwidth);
        stream.push(layer.pool as u8);
        for d in layer.shape.dims() {
            stream.extend_from_slice(&(d as u32).to_le_bytes());
        }
        stream.extend_from_slice(&layer.scale.to_le_bytes());
        for b in &layer.bias {
            stream.extend_from_slice(&b.to_le_bytes());
        }
        stream.extend(layer.weights.iter().map(|&w| w as u8));
    }
    crate::pearson::hash_wide(FINGERPRINT_SEED, &stream, width)
}

const TABLE_DOMAIN: u64 = 0x7461_626C_655F_7365; // "table_se"
const ORDER_DOMAIN: u64 = 0x6F72_6465_725F_6B65; // "order_ke"

/// Per-layer `(table_seed, ordering_key)` derived from one master secret:
/// `mix64(master ^ mix64(layer + 1) ^ domain)` with a distinct domain
/// constant for each secret.
pub fn derive_secrets(master_secret: u64, layer_index: usize) -> (u64, u64) {
    let salt = mix64(layer_index as u64 + 1);
    (
        mix64(master_secret ^ salt ^ TABLE_DOMAIN),
        mix64(master_secret ^ salt ^ ORDER_DOMAIN),
    )
}

/// Deployable signature: one entry per checkpoint layer plus a public model
/// fingerprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureBundle {
    pub width: usize,
    pub fingerprint: HashValue,
    pub checkpoints: Vec<LayerSignature>,
}

impl SignatureBundle {
    /// Checks internal consistency (widths agree, layer indices distinct).
    pub fn validate(&self) -> Result<()> {
        if self.checkpoints.is_empty() {
            return Err(Error::Empty("bundle has no checkpoints"));
        }
        if self.width == 0 || self.fingerprint.width() != self.width {
            return Err(Error::Invalid(
                "fingerprint width disagrees with bundle width".into(),
            ));
        }
        for (i, c) in self.checkpoints.iter().enumerate() {
            if c.hash.width() != self.width {
                return Err(Error::Invalid(format!(
                    "checkpoint {i} has a different hash width"
                )));
            }
            if c.ordering.layer_index != c.layer_index {
                return Err(Error::Invalid(format!(
                    "checkpoint {i}: ordering targets another layer"
                )));
            }
            if self.checkpoints[..i]
                .iter()
                .any(|p| p.layer_index == c.layer_index)
            {
                return Err(Error::Invalid(format!(
                    "layer {} checkpointed twice",
                    c.layer_index
                )));
            }
        }
        Ok(())
    }

    pub fn layer_indices(&self) -> Vec<usize> {
        self.checkpoints.iter().map(|c| c.layer_index).collect()
    }

    /// Number of weight elements covered by the checkpoints.
    pub fn covered_elements(&self) -> usize {
        self.checkpoints.iter().map(|c| c.element_count).sum()
    }
}

/// Signs every checkpoint layer with secrets derived from `master_secret`.
pub fn build_bundle(
    model: &QuantizedModel,
    checkpoint_layers: &[usize],
    master_secret: u64,
    width: usize,
    traversal: Traversal,
) -> Result<SignatureBundle> {
    if checkpoint_layers.is_empty() {
        return Err(Error::Empty("no checkpoint layers selected"));
    }
    let mut checkpoints = Vec::with_capacity(checkpoint_layers.len());
    for (i, &l) in checkpoint_layers.iter().enumerate() {
        if checkpoint_layers[..i].contains(&l) {
            return Err(Error::Invalid(format!("layer {l} listed twice")));
        }
        let layer = model.layer(l)?;
        let (table_seed, key) = derive_secrets(master_secret, l);
        let ordering = OrderingKey {
            layer_index: l,
            key,
            traversal,
        };
        checkpoints.push(sign_layer(layer, ordering, table_seed, width)?);
    }
    Ok(SignatureBundle {
        width,
        fingerprint: model_fingerprint(model, width)?,
        checkpoints,
    })
}

#[cfg(test)]
#[allow(clippy::identity_op, clippy::erasing_op)]
mod tests {
    use super::*;
    use crate::net::{LayerParams, LayerShape};
    use alloc::vec;

    fn conv_layer(k: usize, ci: usize, co: usize, weights: Vec<i8>) -> LayerParams {
        let shape = LayerShape::Conv {
            kernel: k,
            in_channels: ci,
            out_channels: co,
        };
        LayerParams::new(shape, false, 8, 0.1, weights, vec![0.0; co], 0).unwrap()
    }

    fn cm(layer: usize) -> OrderingKey {
        OrderingKey {
            layer_index: layer,
            key: 0,
            traversal: Traversal::ChannelMajor,
        }
    }

    #[test]
    fn single_weight_convolution_stream() {
        let l = conv_layer(1, 1, 1, vec![-3]);
        assert_eq!(order_stream(&l, &cm(0)).unwrap(), vec![(-3i8) as u8]);
    }

    #[test]
    fn channel_major_lists_output_channel_zero_first() {
        // 2 x 2 x 1 x 2 kernel, storage (ky, kx, c, o) with o fastest;
        // weight value encodes 10 * o + (ky * 2 + kx).
        let mut w = vec![0i8; 8];
        for ky in 0..2 {
            for kx in 0..2 {
                for o in 0..2 {
                    w[((ky * 2 + kx) * 1) * 2 + o] = (10 * o + ky * 2 + kx) as i8;
                }
            }
        }
        let l = conv_layer(2, 1, 2, w);
        let s: Vec<i8> = order_stream(&l, &cm(0))
            .unwrap()
            .into_iter()
            .map(|b| b as i8)
            .collect();
        assert_eq!(s, vec![0, 1, 2, 3, 10, 11, 12, 13]);
    }

    #[test]
    fn three_by_three_kernel_order_is_out_in_row_col() {
        let shape = LayerShape::Conv {
            kernel: 3,
            in_channels: 2,
            out_channels: 2,
        };
        let order = channel_major_indices(&shape);
        assert_eq!(order.len(), 36);
        // (o=0, c=0, ky=0, kx=1) is the second stream element.
        assert_eq!(order[1], ((0 * 3 + 1) * 2 + 0) * 2 + 0);
        // (o=0, c=1, ky=0, kx=0) follows the nine c=0 taps.
        assert_eq!(order[9], 2);
        // (o=1, ...) starts at position 18.
        assert_eq!(order[18], 1);
    }

    #[test]
    fn keyed_permutations_differ_but_preserve_multiset() {
        let shape = LayerShape::Dense {
            inputs: 4,
            outputs: 4,
        };
        let w: Vec<i8> = (0..16).map(|v| v as i8 - 8).collect();
        let l = LayerParams::new(shape, false, 8, 1.0, w, vec![0.0; 4], 0).unwrap();
        let key = |k| OrderingKey {
            layer_index: 0,
            key: k,
            traversal: Traversal::KeyedPermutation,
        };
        let a = order_stream(&l, &key(1)).unwrap();
        let b = order_stream(&l, &key(2)).unwrap();
        assert_ne!(a, b);
        let (mut sa, mut sb) = (a.clone(), b.clone());
        sa.sort_unstable();
        sb.sort_unstable();
        assert_eq!(sa, sb);
    }

    #[test]
    fn ordering_for_wrong_layer_is_rejected() {
        let l = conv_layer(1, 1, 1, vec![1]);
        assert!(order_stream(&l, &cm(3)).is_err());
    }

    #[test]
    fn derived_secrets_differ_per_layer_and_role() {
        let (t0, o0) = derive_secrets(5, 0);
        let (t1, o1) = derive_secrets(5, 1);
        assert_ne!(t0, o0);
        assert_ne!(t0, t1);
        assert_ne!(o0, o1);
        assert_eq!(derive_secrets(5, 1), (t1, o1));
    }
}
