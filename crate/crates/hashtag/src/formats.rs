//! Binary artifact formats. All integers are little-endian.
//!
//! * model `QNN1`: u32 layer count; per layer: kind u8 (0 dense, 1 conv,
//!   2 conv + pool), bitwidth u8, rank u8, rank x u32 dims, f64 scale,
//!   u32 bias count + f64 biases, u32 weight count + i8 weights.
//! * dataset `DSB1`: u32 sample count, u8 rank, rank x u32 dims, f32 inputs,
//!   u16 labels. The split is named by the file, not stored.
//! * bundle `HTAG`: version u8 (1), width u8, u16 checkpoint count,
//!   fingerprint (width bytes); per checkpoint: u16 layer, u32 element count,
//!   u64 table seed, u64 ordering key, u8 traversal, hash (width bytes).
//!
//! Loaders read the whole file and reject bad magic, truncation and trailing
//! bytes before building anything.

use std::fs;
use std::path::Path;

use hashtag_core::net::{Dataset, LayerKind, LayerParams, LayerShape, QuantizedModel, Split};
use hashtag_core::pearson::HashValue;
use hashtag_core::signature::{LayerSignature, OrderingKey, SignatureBundle, Traversal};

pub const MODEL_MAGIC: &[u8; 4] = b"QNN1";
pub const DATASET_MAGIC: &[u8; 4] = b"DSB1";
pub const BUNDLE_MAGIC: &[u8; 4] = b"HTAG";
pub const BUNDLE_VERSION: u8 = 1;

/// Magic, version, width and checkpoint count.
pub const BUNDLE_FIXED_HEADER: usize = 4 + 1 + 1 + 2;
/// Layer, element count, table seed, ordering key, traversal.
pub const CHECKPOINT_FIXED: usize = 2 + 4 + 8 + 8 + 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("bad magic: expected {expected:?}")]
    Magic { expected: &'static str },
    #[error("truncated input: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after the last record")]
    Trailing(usize),
    #[error("unsupported bundle version {0}")]
    Version(u8),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] hashtag_core::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|err| FormatError::Io {
        path: path.display().to_string(),
        err,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|err| FormatError::Io {
        path: path.display().to_string(),
        err,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &'static [u8; 4]) -> Result<Self> {
        let mut r = Self { buf, pos: 0 };
        if r.take(4)? != magic {
            return Err(FormatError::Magic {
                expected: std::str::from_utf8(magic).unwrap_or("?"),
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - left,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// Length prefix checked against the bytes left so a corrupt count cannot
    /// trigger a huge allocation.
    fn count(&mut self, item_size: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        let left = self.buf.len() - self.pos;
        if n.saturating_mul(item_size) > left {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n * item_size - left,
            });
        }
        Ok(n)
    }

    fn finish(self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| FormatError::Invalid(format!("{what} {n} does not fit in u32")))
}

fn kind_code(layer: &LayerParams) -> u8 {
    match (layer.kind(), layer.pool) {
        (LayerKind::FullyConnected, _) => 0,
        (LayerKind::Convolution, false) => 1,
        (LayerKind::Convolution, true) => 2,
    }
}

pub fn encode_model(model: &QuantizedModel) -> Result<Vec<u8>> {
    let mut out = MODEL_MAGIC.to_vec();
    out.extend(u32_of(model.num_layers(), "layer count")?.to_le_bytes());
    for l in model.layers() {
        if l.pool && l.kind() == LayerKind::FullyConnected {
            return Err(FormatError::Invalid(format!(
                "layer {}: dense layers cannot pool",
                l.index
            )));
        }
        let dims = l.shape.dims();
        out.push(kind_code(l));
        out.push(l.bitwidth);
        out.push(dims.len() as u8);
        for d in dims {
            out.extend(u32_of(d, "dimension")?.to_le_bytes());
        }
        out.extend(l.scale.to_le_bytes());
        out.extend(u32_of(l.bias.len(), "bias count")?.to_le_bytes());
        for b in &l.bias {
            out.extend(b.to_le_bytes());
        }
        out.extend(u32_of(l.weights.len(), "weight count")?.to_le_bytes());
        out.extend(l.weights.iter().map(|&w| w as u8));
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<QuantizedModel> {
    let mut r = Reader::new(bytes, MODEL_MAGIC)?;
    let n = r.count(1)?;
    let mut layers = Vec::with_capacity(n);
    for index in 0..n {
        let (kind, pool) = match r.u8()? {
            0 => (LayerKind::FullyConnected, false),
            1 => (LayerKind::Convolution, false),
            2 => (LayerKind::Convolution, true),
            k => {
                return Err(FormatError::Invalid(format!(
                    "layer {index}: unknown kind {k}"
                )))
            }
        };
        let bitwidth = r.u8()?;
        let rank = r.u8()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let shape = LayerShape::from_dims(kind, &dims)?;
        let scale = r.f64()?;
        let nb = r.count(8)?;
        let bias = (0..nb).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let nw = r.count(1)?;
        let weights = r.take(nw)?.iter().map(|&b| b as i8).collect();
        layers.push(LayerParams::new(
            shape, pool, bitwidth, scale, weights, bias, index,
        )?);
    }
    r.finish()?;
    Ok(QuantizedModel::new(layers)?)
}

pub fn save_model(model: &QuantizedModel, path: &Path) -> Result<()> {
    write_file(path, &encode_model(model)?)
}

pub fn load_model(path: &Path) -> Result<QuantizedModel> {
    decode_model(&read_file(path)?)
}

pub fn encode_dataset(data: &Dataset) -> Result<Vec<u8>> {
    let mut out = DATASET_MAGIC.to_vec();
    out.extend(u32_of(data.len(), "sample count")?.to_le_bytes());
    out.push(data.input_dims().len() as u8);
    for &d in data.input_dims() {
        out.extend(u32_of(d, "dimension")?.to_le_bytes());
    }
    for x in data.inputs() {
        out.extend(x.to_le_bytes());
    }
    for y in data.labels() {
        out.extend(y.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8], split: Split) -> Result<Dataset> {
    let mut r = Reader::new(bytes, DATASET_MAGIC)?;
    let n = r.count(2)?;
    let rank = r.u8()? as usize;
    let dims = (0..rank)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let per: usize = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .unwrap_or(usize::MAX);
    let values = n
        .checked_mul(per)
        .filter(|v| v.saturating_mul(4) <= bytes.len())
        .ok_or_else(|| {
            FormatError::Invalid(format!("{n} samples of dims {dims:?} exceed the file"))
        })?;
    let inputs = r
        .take(values * 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    let labels = r
        .take(n * 2)?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    r.finish()?;
    Ok(Dataset::new(inputs, dims, labels, split)?)
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    write_file(path, &encode_dataset(data)?)
}

pub fn load_dataset(path: &Path, split: Split) -> Result<Dataset> {
    decode_dataset(&read_file(path)?, split)
}

/// Serialized size of a bundle with `checkpoints` entries of `width` digits.
pub fn bundle_size(checkpoints: usize, width: usize) -> usize {
    BUNDLE_FIXED_HEADER + width + checkpoints * (CHECKPOINT_FIXED + width)
}

/// Storage when every checkpoint's digit tables are materialized next to its
/// hash: 257 bytes per digit per checkpoint, plus the header.
pub fn materialized_size(checkpoints: usize, width: usize) -> usize {
    BUNDLE_FIXED_HEADER + width + checkpoints * 257 * width
}

pub fn encode_bundle(bundle: &SignatureBundle) -> Result<Vec<u8>> {
    bundle.validate()?;
    let width = u8::try_from(bundle.width)
        .map_err(|_| FormatError::Invalid(format!("hash width {} exceeds 255", bundle.width)))?;
    let count = u16::try_from(bundle.checkpoints.len()).map_err(|_| {
        FormatError::Invalid(format!(
            "{} checkpoints exceed u16",
            bundle.checkpoints.len()
        ))
    })?;
    let mut out = Vec::with_capacity(bundle_size(bundle.checkpoints.len(), bundle.width));
    out.extend(BUNDLE_MAGIC);
    out.push(BUNDLE_VERSION);
    out.push(width);
    out.extend(count.to_le_bytes());
    out.extend(bundle.fingerprint.digits());
    for c in &bundle.checkpoints {
        let layer = u16::try_from(c.layer_index).map_err(|_| {
            FormatError::Invalid(format!("checkpoint layer {} exceeds u16", c.layer_index))
        })?;
        out.extend(layer.to_le_bytes());
        out.extend(u32_of(c.element_count, "element count")?.to_le_bytes());
        out.extend(c.table_seed.to_le_bytes());
        out.extend(c.ordering.key.to_le_bytes());
        out.push(c.ordering.traversal.code());
        out.extend(c.hash.digits());
    }
    Ok(out)
}

pub fn decode_bundle(bytes: &[u8]) -> Result<SignatureBundle> {
    let mut r = Reader::new(bytes, BUNDLE_MAGIC)?;
    let version = r.u8()?;
    if version != BUNDLE_VERSION {
        return Err(FormatError::Version(version));
    }
    let width = r.u8()? as usize;
    if width == 0 {
        return Err(FormatError::Invalid("hash width 0".into()));
    }
    let count = r.u16()? as usize;
    let fingerprint = HashValue::new(r.take(width)?.to_vec())?;
    let mut checkpoints = Vec::with_capacity(count.min(bytes.len() / (CHECKPOINT_FIXED + width)));
    for _ in 0..count {
        let layer_index = r.u16()? as usize;
        let element_count = r.u32()? as usize;
        let table_seed = r.u64()?;
        let key = r.u64()?;
        let code = r.u8()?;
        let traversal = Traversal::from_code(code)
            .ok_or_else(|| FormatError::Invalid(format!("unknown traversal {code}")))?;
        let hash = HashValue::new(r.take(width)?.to_vec())?;
        checkpoints.push(LayerSignature {
            layer_index,
            table_seed,
            ordering: OrderingKey {
                layer_index,
                key,
                traversal,
            },
            hash,
            element_count,
        });
    }
    r.finish()?;
    let bundle = SignatureBundle {
        width,
        fingerprint,
        checkpoints,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_bundle(bundle: &SignatureBundle, path: &Path) -> Result<()> {
    write_file(path, &encode_bundle(bundle)?)
}

pub fn load_bundle(path: &Path) -> Result<SignatureBundle> {
    decode_bundle(&read_file(path)?)
}
