use alloc::format;
use alloc::vec::Vec;

use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Attack,
}

/// A labelled batch. Inputs are stored sample-major as `f32`; each sample
/// has shape `input_dims` (`[features]` or `[channels, height, width]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f32>,
    input_dims: Vec<usize>,
    labels: Vec<u16>,
    split: Split,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f32>,
        input_dims: Vec<usize>,
        labels: Vec<u16>,
        split: Split,
    ) -> Result<Self> {
        let per: usize = input_dims.iter().product();
        if input_dims.is_empty() || per == 0 || !matches!(input_dims.len(), 1 | 3) {
            return Err(Error::Shape(format!(
                "unsupported input dims {input_dims:?}"
            )));
        }
        if inputs.len() != per * labels.len() {
            return Err(Error::Shape(format!(
                "{} input values for {} samples of {per}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self {
            inputs,
            input_dims,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn sample_len(&self) -> usize {
        self.input_dims.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn inputs(&self) -> &[f32] {
        &self.inputs
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Checks every label against `num_classes`.
    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l as usize >= num_classes) {
            Some(i) => Err(Error::OutOfRange(format!(
                "label {} of sample {i} >= {num_classes} classes",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let n = self.sample_len();
        let mut inputs = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Self {
            inputs,
            input_dims: self.input_dims.clone(),
            labels,
            split: self.split,
        }
    }

    /// `min(size, len)` distinct samples chosen by a seeded shuffle.
    pub fn sample_batch(&self, size: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        SplitMix64::new(seed).shuffle(&mut idx);
        idx.truncate(size.min(self.len()));
        self.subset(&idx)
    }

    /// Takes up to `per_class` samples of every class (in stored order).
    /// The flag is true when some class had fewer than `per_class` samples.
    pub fn per_class_subset(&self, per_class: usize, num_classes: usize) -> (Self, bool) {
        let mut taken = alloc::vec![0usize; num_classes];
        let mut idx = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            let c = l as usize;
            if c < num_classes && taken[c] < per_class {
                taken[c] += 1;
                idx.push(i);
            }
        }
        let short = taken.iter().any(|&t| t < per_class);
        (self.subset(&idx).with_split(Split::Validation), short)
    }
}

/// Parameters of the synthetic Gaussian-blob task.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobConfig {
    pub classes: usize,
    pub per_class: usize,
    pub input_dims: Vec<usize>,
    /// Standard deviation of the per-class noise; class means are unit normal.
    pub noise: f64,
    pub seed: u64,
}

/// Train / validation / attack splits of one blob task.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub attack: Dataset,
    /// Set when `per_class` was below the 20-per-class validation quota.
    pub validation_short: bool,
}

/// Samples per class reserved for the validation split.
pub const VALIDATION_PER_CLASS: usize = 20;

/// Gaussian blobs: each class has a unit-normal mean vector; samples add
/// `noise`-scaled normal noise. Per class, the first 20 samples go to
/// validation (all of them when fewer exist), then two thirds of the rest to
/// train and the remainder to the attack split.
pub fn gaussian_blobs(cfg: &BlobConfig) -> Result<BlobSplits> {
    if cfg.classes < 2 || cfg.classes > u16::MAX as usize {
        return Err(Error::Invalid(format!(
            "need at least 2 classes, got {}",
            cfg.classes
        )));
    }
    let dim: usize = cfg.input_dims.iter().product();
    if dim == 0 || !matches!(cfg.input_dims.len(), 1 | 3) {
        return Err(Error::Shape(format!(
            "degenerate input dims {:?}",
            cfg.input_dims
        )));
    }
    if !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
        return Err(Error::Invalid(format!(
            "noise {} must be finite and >= 0",
            cfg.noise
        )));
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let means: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..dim).map(|_| rng.normal()).collect())
        .collect();

    let n_val = VALIDATION_PER_CLASS.min(cfg.per_class);
    let rest = cfg.per_class - n_val;
    let n_train = (rest * 2) / 3;
    let mut parts: [(Vec<f32>, Vec<u16>); 3] = Default::default();
    for i in 0..cfg.per_class {
        let part = if i < n_val {
            1
        } else if i < n_val + n_train {
            0
        } else {
            2
        };
        for (c, mean) in means.iter().enumerate() {
            let (xs, ys) = &mut parts[part];
            xs.extend(mean.iter().map(|m| (m + cfg.noise * rng.normal()) as f32));
            ys.push(c as u16);
        }
    }
    let [(tx, ty), (vx, vy), (ax, ay)] = parts;
    Ok(BlobSplits {
        train: Dataset::new(tx, cfg.input_dims.clone(), ty, Split::Train)?,
        validation: Dataset::new(vx, cfg.input_dims.clone(), vy, Split::Validation)?,
        attack: Dataset::new(ax, cfg.input_dims.clone(), ay, Split::Attack)?,
        validation_short: cfg.per_class < VALIDATION_PER_CLASS,
    })
}
