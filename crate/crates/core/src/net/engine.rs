//! Real-valued forward and backward passes shared by training and by the
//! quantized model (which runs on its dequantized weights).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::data::Dataset;
use super::layer::LayerShape;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FloatLayer {
    pub shape: LayerShape,
    pub pool: bool,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// A network with real-valued weights. ReLU follows every layer except the
/// last, whose outputs are the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<FloatLayer>,
}

/// Weight and bias gradients of the batch-mean cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Geom {
    Flat(usize),
    Map { c: usize, h: usize, w: usize },
}

impl Geom {
    fn len(self) -> usize {
        match self {
            Geom::Flat(n) => n,
            Geom::Map { c, h, w } => c * h * w,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Step {
    input: Geom,
    /// Pre-activation output.
    output: Geom,
    /// After optional pooling.
    pooled: Geom,
}

struct Cache {
    input: Vec<f64>,
    z: Vec<f64>,
    /// For each pooled output, the flat index of the winning input.
    argmax: Vec<usize>,
}

/// Numerically stable `ln(sum(exp(z)))`.
fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(z.iter().map(|&v| libm::exp(v - m)).sum::<f64>())
}

/// Cross-entropy of one sample.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

/// `softmax(logits) - onehot(label)`: gradient of one sample's cross-entropy
/// with respect to its logits.
pub fn logit_gradient(logits: &[f64], label: usize) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    let mut g: Vec<f64> = logits.iter().map(|&v| libm::exp(v - lse)).collect();
    g[label] -= 1.0;
    g
}

impl Network {
    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.shape.outputs())
    }

    fn plan(&self, input_dims: &[usize]) -> Result<Vec<Step>> {
        let mut geom = match *input_dims {
            [n] => Geom::Flat(n),
            [c, h, w] => Geom::Map { c, h, w },
            _ => {
                return Err(Error::Shape(format!(
                    "unsupported input dims {input_dims:?}"
                )))
            }
        };
        let last = self
            .layers
            .len()
            .checked_sub(1)
            .ok_or(Error::Empty("network has no layers"))?;
        let mut steps = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.shape.element_count()
                || layer.bias.len() != layer.shape.outputs()
            {
                return Err(Error::Shape(format!(
                    "layer {l}: parameter lengths disagree with shape"
                )));
            }
            let output = match layer.shape {
                LayerShape::Dense { inputs, outputs } => {
                    if geom.len() != inputs {
                        return Err(Error::Shape(format!(
                            "layer {l}: expects {inputs} inputs, receives {}",
                            geom.len()
                        )));
                    }
                    Geom::Flat(outputs)
                }
                LayerShape::Conv {
                    in_channels,
                    out_channels,
                    ..
                } => match geom {
                    Geom::Map { c, h, w } if c == in_channels => Geom::Map {
                        c: out_channels,
                        h,
                        w,
                    },
                    _ => {
                        return Err(Error::Shape(format!(
                            "layer {l}: convolution over {in_channels} channels receives {geom:?}"
                        )))
                    }
                },
            };
            let pooled = match (layer.pool, output) {
                (false, g) => g,
                (true, _) if l == last => {
                    return Err(Error::Shape(format!("layer {l}: output layer cannot pool")))
                }
                (true, Geom::Map { c, h, w }) if h >= 2 && w >= 2 => Geom::Map {
                    c,
                    h: h / 2,
                    w: w / 2,
                },
                (true, g) => return Err(Error::Shape(format!("layer {l}: cannot pool {g:?}"))),
            };
            steps.push(Step {
                input: geom,
                output,
                pooled,
            });
            geom = pooled;
        }
        if let Geom::Map { .. } = steps[last].output {
            return Err(Error::Shape("output layer must be fully connected".into()));
        }
        Ok(steps)
    }

    fn check_batch(&self, data: &Dataset) -> Result<Vec<Step>> {
        let steps = self.plan(data.input_dims())?;
        data.check_labels(self.num_classes())?;
        Ok(steps)
    }

    fn forward_sample(
        &self,
        steps: &[Step],
        x: &[f32],
        caches: Option<&mut Vec<Cache>>,
    ) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut act: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut caches = caches;
        for (l, (layer, step)) in self.layers.iter().zip(steps).enumerate() {
            let mut z = match layer.shape {
                LayerShape::Dense { outputs, .. } => {
                    dense_forward(&act, &layer.weights, &layer.bias, outputs)
                }
                LayerShape::Conv { kernel, .. } => {
                    conv_forward(&act, step.input, step.output, kernel, layer)
                }
            };
            let mut argmax = Vec::new();
            let out = if l == last {
                z.clone()
            } else {
                let mut a = z.clone();
                a.iter_mut().for_each(|v| *v = v.max(0.0));
                if layer.pool {
                    let (p, idx) = max_pool(&a, step.output, step.pooled);
                    argmax = idx;
                    p
                } else {
                    a
                }
            };
            if let Some(c) = caches.as_deref_mut() {
                c.push(Cache {
                    input: core::mem::take(&mut act),
                    z: core::mem::take(&mut z),
                    argmax,
                });
            }
            act = out;
        }
        act
    }

    /// Logits for every sample, sample-major.
    pub fn logits(&self, data: &Dataset) -> Result<Vec<f64>> {
        let steps = self.plan(data.input_dims())?;
        let mut out = Vec::with_capacity(data.len() * self.num_classes());
        for i in 0..data.len() {
            out.extend(self.forward_sample(&steps, data.sample(i), None));
        }
        Ok(out)
    }

    /// Logits and batch-mean cross-entropy.
    pub fn forward(&self, data: &Dataset) -> Result<(Vec<f64>, f64)> {
        if data.is_empty() {
            return Err(Error::Empty("batch has no samples"));
        }
        self.check_batch(data)?;
        let logits = self.logits(data)?;
        let c = self.num_classes();
        let total: f64 = data
            .labels()
            .iter()
            .enumerate()
            .map(|(i, &y)| cross_entropy(&logits[i * c..(i + 1) * c], y as usize))
            .sum();
        Ok((logits, total / data.len() as f64))
    }

    pub fn loss(&self, data: &Dataset) -> Result<f64> {
        self.forward(data).map(|(_, l)| l)
    }

    /// Exact gradients of the batch-mean cross-entropy.
    pub fn gradients(&self, data: &Dataset) -> Result<Gradients> {
        if data.is_empty() {
            return Err(Error::Empty("batch has no samples"));
        }
        let steps = self.check_batch(data)?;
        let mut gw: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| vec![0.0; l.weights.len()])
            .collect();
        let mut gb: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| vec![0.0; l.bias.len()])
            .collect();
        let inv_n = 1.0 / data.len() as f64;
        let mut total = 0.0;
        let mut caches = Vec::with_capacity(self.layers.len());
        for i in 0..data.len() {
            caches.clear();
            let logits = self.forward_sample(&steps, data.sample(i), Some(&mut caches));
            let y = data.labels()[i] as usize;
            total += cross_entropy(&logits, y);
            let mut delta: Vec<f64> = logit_gradient(&logits, y)
                .into_iter()
                .map(|g| g * inv_n)
                .collect();
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let step = steps[l];
                let cache = &caches[l];
                if l + 1 < self.layers.len() {
                    // delta is w.r.t. the pooled activation; route back to z.
                    let mut dz = if layer.pool {
                        let mut d = vec![0.0; step.output.len()];
                        for (j, &src) in cache.argmax.iter().enumerate() {
                            d[src] += delta[j];
                        }
                        d
                    } else {
                        delta
                    };
                    for (d, &z) in dz.iter_mut().zip(&cache.z) {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    delta = dz;
                }
                delta = match layer.shape {
                    LayerShape::Dense { outputs, .. } => dense_backward(
                        &cache.input,
                        &delta,
                        &layer.weights,
                        outputs,
                        &mut gw[l],
                        &mut gb[l],
                    ),
                    LayerShape::Conv { kernel, .. } => conv_backward(
                        &cache.input,
                        &delta,
                        step.input,
                        step.output,
                        kernel,
                        layer,
                        &mut gw[l],
                        &mut gb[l],
                    ),
                };
            }
        }
        Ok(Gradients {
            loss: total * inv_n,
            weights: gw,
            bias: gb,
        })
    }
}

fn dense_forward(x: &[f64], w: &[f64], b: &[f64], outputs: usize) -> Vec<f64> {
    let mut z = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * outputs..(i + 1) * outputs];
        for (zo, &wo) in z.iter_mut().zip(row) {
            *zo += xi * wo;
        }
    }
    z
}

fn dense_backward(
    x: &[f64],
    dz: &[f64],
    w: &[f64],
    outputs: usize,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    for (g, &d) in gb.iter_mut().zip(dz) {
        *g += d;
    }
    let mut dx = vec![0.0; x.len()];
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * outputs..(i + 1) * outputs];
        let grow = &mut gw[i * outputs..(i + 1) * outputs];
        let mut acc = 0.0;
        for o in 0..outputs {
            grow[o] += xi * dz[o];
            acc += row[o] * dz[o];
        }
        dx[i] = acc;
    }
    dx
}

fn map_dims(g: Geom) -> (usize, usize, usize) {
    match g {
        Geom::Map { c, h, w } => (c, h, w),
        Geom::Flat(_) => unreachable!("convolution planned over a flat input"),
    }
}

fn conv_forward(x: &[f64], input: Geom, output: Geom, k: usize, layer: &FloatLayer) -> Vec<f64> {
    let (ci, h, w) = map_dims(input);
    let (co, _, _) = map_dims(output);
    let p = (k - 1) / 2;
    let mut z = vec![0.0; co * h * w];
    for o in 0..co {
        z[o * h * w..(o + 1) * h * w]
            .iter_mut()
            .for_each(|v| *v = layer.bias[o]);
    }
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let wbase = ((ky * k + kx) * ci + c) * co;
                for y in 0..h {
                    let iy = y + ky;
                    if iy < p || iy - p >= h {
                        continue;
                    }
                    let iy = iy - p;
                    for xo in 0..w {
                        let ix = xo + kx;
                        if ix < p || ix - p >= w {
                            continue;
                        }
                        let v = x[(c * h + iy) * w + ix - p];
                        if v == 0.0 {
                            continue;
                        }
                        for o in 0..co {
                            z[(o * h + y) * w + xo] += v * layer.weights[wbase + o];
                        }
                    }
                }
            }
        }
    }
    z
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    dz: &[f64],
    input: Geom,
    output: Geom,
    k: usize,
    layer: &FloatLayer,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let (ci, h, w) = map_dims(input);
    let (co, _, _) = map_dims(output);
    let p = (k - 1) / 2;
    for o in 0..co {
        gb[o] += dz[o * h * w..(o + 1) * h * w].iter().sum::<f64>();
    }
    let mut dx = vec![0.0; x.len()];
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let wbase = ((ky * k + kx) * ci + c) * co;
                for y in 0..h {
                    let iy = y + ky;
                    if iy < p || iy - p >= h {
                        continue;
                    }
                    let iy = iy - p;
                    for xo in 0..w {
                        let ix = xo + kx;
                        if ix < p || ix - p >= w {
                            continue;
                        }
                        let xi = (c * h + iy) * w + ix - p;
                        let v = x[xi];
                        let mut acc = 0.0;
                        for o in 0..co {
                            let d = dz[(o * h + y) * w + xo];
                            gw[wbase + o] += v * d;
                            acc += layer.weights[wbase + o] * d;
                        }
                        dx[xi] += acc;
                    }
                }
            }
        }
    }
    dx
}

/// 2x2 stride-2 max pooling; odd trailing rows/columns are dropped. Ties go
/// to the first element in row-major window order.
fn max_pool(a: &[f64], input: Geom, output: Geom) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = map_dims(input);
    let (_, ph, pw) = map_dims(output);
    let mut out = Vec::with_capacity(c * ph * pw);
    let mut idx = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                let mut best = (ch * h + 2 * y) * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = (ch * h + 2 * y + dy) * w + 2 * x + dx;
                    if a[j] > a[best] {
                        best = j;
                    }
                }
                out.push(a[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}
