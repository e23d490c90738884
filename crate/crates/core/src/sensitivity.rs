//! Taylor-expansion sensitivity of each weight to sign inversion.
//!
//! Negating a weight `p` moves it by `-2p`, so to first order the loss
//! changes by `2 p dL/dp`. The score of a weight is the square of that
//! estimate; the score of a layer is the mean of its five largest weight
//! scores. Layers are ranked by descending score and the top `k` become
//! checkpoints.

use alloc::format;
use alloc::vec::Vec;

use crate::net::{Dataset, GradientSet, QuantizedModel};
use crate::{Error, Result};

/// Number of largest element scores averaged into a layer score.
pub const TOP_ELEMENTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub per_element: Vec<Vec<f64>>,
    pub per_layer: Vec<f64>,
    /// Layer indices by descending score, lower index first on ties.
    pub ranking: Vec<usize>,
}

impl SensitivityReport {
    pub fn from_element_scores(per_element: Vec<Vec<f64>>) -> Self {
        let per_layer: Vec<f64> = per_element.iter().map(|s| layer_score(s)).collect();
        let ranking = rank_layers(&per_layer);
        Self {
            per_element,
            per_layer,
            ranking,
        }
    }

    /// Layer scores scaled to sum to 1 (all zeros stay zero).
    pub fn normalized(&self) -> Vec<f64> {
        normalize(&self.per_layer)
    }

    /// Rank position (0 = most sensitive) of every layer.
    pub fn rank_of(&self, layer: usize) -> Option<usize> {
        self.ranking.iter().position(|&l| l == layer)
    }
}

pub fn normalize(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().sum();
    if total > 0.0 {
        values.iter().map(|v| v / total).collect()
    } else {
        values.to_vec()
    }
}

/// Mean of the `TOP_ELEMENTS` largest scores (all of them when fewer).
pub fn layer_score(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = &sorted[..TOP_ELEMENTS.min(sorted.len())];
    top.iter().sum::<f64>() / top.len() as f64
}

/// Indices sorted by descending score; equal scores keep index order.
pub fn rank_layers(per_layer: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..per_layer.len()).collect();
    order.sort_by(|&a, &b| per_layer[b].total_cmp(&per_layer[a]).then(a.cmp(&b)));
    order
}

/// `(2 p g)^2` for every weight, with `p` the dequantized weight.
pub fn taylor_scores(model: &QuantizedModel, grads: &GradientSet) -> Result<Vec<Vec<f64>>> {
    if grads.layers.len() != model.num_layers() {
        return Err(Error::Shape("gradient set does not match model".into()));
    }
    model
        .layers()
        .iter()
        .zip(&grads.layers)
        .map(|(layer, g)| {
            if g.len() != layer.weights.len() {
                return Err(Error::Shape(format!(
                    "layer {} gradient length",
                    layer.index
                )));
            }
            Ok(layer
                .weights
                .iter()
                .zip(g)
                .map(|(&q, &g)| {
                    let est = 2.0 * layer.scale * q as f64 * g;
                    est * est
                })
                .collect())
        })
        .collect()
}

/// One backward pass over `val`, scored and ranked.
pub fn taylor_sensitivity(model: &QuantizedModel, val: &Dataset) -> Result<SensitivityReport> {
    if val.is_empty() {
        return Err(Error::Empty("validation data"));
    }
    let grads = model.backward(val)?;
    Ok(SensitivityReport::from_element_scores(taylor_scores(
        model, &grads,
    )?))
}

/// Exact sign-flip sensitivity `(L(P) - L(P with q -> -q))^2`. The negated
/// integer is clamped into range, so `-2^(b-1)` becomes `2^(b-1) - 1`.
pub fn exact_sensitivity(
    model: &QuantizedModel,
    val: &Dataset,
    layer: usize,
    element: usize,
) -> Result<f64> {
    let l = model.layer(layer)?;
    let q = *l
        .weights
        .get(element)
        .ok_or_else(|| Error::OutOfRange(format!("element {element} of layer {layer}")))?;
    if q == 0 {
        return Ok(0.0);
    }
    let (lo, hi) = crate::net::int_range(l.bitwidth);
    let negated = (-(q as i32)).clamp(lo, hi) as i8;
    let base = model.loss(val)?;
    let mut altered = model.clone();
    altered.set_weight(layer, element, negated)?;
    let d = base - altered.loss(val)?;
    Ok(d * d)
}

/// The first `k` layers of `ranking`.
pub fn select_from_ranking(ranking: &[usize], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > ranking.len() {
        return Err(Error::OutOfRange(format!(
            "k = {k} with {} layers",
            ranking.len()
        )));
    }
    Ok(ranking[..k].to_vec())
}

pub fn select_checkpoints(report: &SensitivityReport, k: usize) -> Result<Vec<usize>> {
    select_from_ranking(&report.ranking, k)
}
