//! Progressive bit-flip attack, random-flip baseline and attack profiling.
//!
//! Each progressive iteration takes gradients on a fixed attack batch,
//! proposes one bit per layer (the flip with the largest linearized loss
//! increase `g * scale * (q_new - q_old)`), evaluates the true batch loss of
//! every proposal on a trial copy, and commits the proposal with the highest
//! loss. The loop ends when accuracy on the attack data reaches the stop
//! threshold or the iteration cap is hit.
//!
//! The attacker only ever sees the model and the attack data; nothing here
//! reads a signature bundle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::net::{flip_value_bit, BitFlip, Dataset, GradientSet, QuantizedModel};
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipRecord {
    pub step: usize,
    pub layer: usize,
    pub element: usize,
    pub bit: u8,
    pub old_value: i8,
    pub new_value: i8,
    /// Old and new values have strictly opposite signs.
    pub sign_changed: bool,
    pub loss_after: f64,
    pub accuracy_after: f64,
}

impl FlipRecord {
    fn from_flip(step: usize, f: BitFlip, loss_after: f64, accuracy_after: f64) -> Self {
        Self {
            step,
            layer: f.layer,
            element: f.element,
            bit: f.bit,
            old_value: f.old_value,
            new_value: f.new_value,
            sign_changed: sign_changed(f.old_value, f.new_value),
            loss_after,
            accuracy_after,
        }
    }
}

/// True when `old` and `new` are nonzero with opposite signs.
pub fn sign_changed(old: i8, new: i8) -> bool {
    (old as i32) * (new as i32) < 0
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackTrace {
    pub records: Vec<FlipRecord>,
    pub seed: u64,
    pub batch_size: usize,
    pub stop_acc: f64,
    pub max_iters: usize,
    /// Loss on the evaluation batch before the first flip.
    pub initial_loss: f64,
    pub initial_accuracy: f64,
    pub terminal_accuracy: f64,
    /// False when the iteration cap ended the run above the threshold.
    pub reached_threshold: bool,
}

impl AttackTrace {
    pub fn flips(&self) -> usize {
        self.records.len()
    }

    /// Layers hit by at least one flip, ascending.
    pub fn attacked_layers(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.records.iter().map(|r| r.layer).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// Stop once attack-data accuracy is at or below this.
    pub stop_acc: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl AttackConfig {
    pub const DEFAULT_MAX_ITERS: usize = 200;
    pub const DEFAULT_BATCH: usize = 64;

    /// Random-guess threshold `1 / classes` with the default cap and batch.
    pub fn random_guess(classes: usize, seed: u64) -> Self {
        Self {
            stop_acc: 1.0 / classes as f64,
            max_iters: Self::DEFAULT_MAX_ITERS,
            seed,
            batch_size: Self::DEFAULT_BATCH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub element: usize,
    pub bit: u8,
    pub predicted_delta: f64,
}

/// Best single-bit flip of `layer` by linearized loss increase. Ties go to
/// the lower element, then the lower bit, so all-zero gradients give
/// `(0, 0)` with a zero prediction.
pub fn candidate_bit(
    model: &QuantizedModel,
    grads: &GradientSet,
    layer: usize,
) -> Result<Candidate> {
    let l = model.layer(layer)?;
    let g = grads
        .layers
        .get(layer)
        .filter(|g| g.len() == l.weights.len())
        .ok_or_else(|| Error::Shape(format!("gradients do not cover layer {layer}")))?;
    let mut best = Candidate {
        element: 0,
        bit: 0,
        predicted_delta: f64::NEG_INFINITY,
    };
    for (element, (&q, &ge)) in l.weights.iter().zip(g).enumerate() {
        for bit in 0..l.bitwidth {
            let dq = flip_value_bit(q, l.bitwidth, bit) as i32 - q as i32;
            let delta = ge * l.scale * dq as f64;
            if delta > best.predicted_delta {
                best = Candidate {
                    element,
                    bit,
                    predicted_delta: delta,
                };
            }
        }
    }
    Ok(best)
}

fn check_stop(stop_acc: f64) -> Result<()> {
    if stop_acc > 0.0 && stop_acc < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "stop accuracy {stop_acc} must lie in (0, 1)"
        )))
    }
}

/// Runs the progressive attack. Returns the attacked model and its trace.
/// A cap of zero yields an empty trace flagged as not reaching the threshold.
pub fn progressive_bfa(
    model: &QuantizedModel,
    data: &Dataset,
    cfg: &AttackConfig,
) -> Result<(QuantizedModel, AttackTrace)> {
    check_stop(cfg.stop_acc)?;
    if data.is_empty() {
        return Err(Error::Empty("attack data"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("attack batch size must be positive".into()));
    }
    let batch = data.sample_batch(cfg.batch_size, cfg.seed);
    let mut attacked = model.clone();
    let initial_loss = attacked.loss(&batch)?;
    let initial_accuracy = attacked.accuracy(data)?;
    let mut trace = AttackTrace {
        records: Vec::new(),
        seed: cfg.seed,
        batch_size: batch.len(),
        stop_acc: cfg.stop_acc,
        max_iters: cfg.max_iters,
        initial_loss,
        initial_accuracy,
        terminal_accuracy: initial_accuracy,
        reached_threshold: cfg.max_iters > 0 && initial_accuracy <= cfg.stop_acc,
    };
    if trace.reached_threshold || cfg.max_iters == 0 {
        return Ok((attacked, trace));
    }
    let mut trial = attacked.clone();
    for step in 0..cfg.max_iters {
        let grads = attacked.backward(&batch)?;
        let mut best: Option<(usize, Candidate, f64)> = None;
        for layer in 0..attacked.num_layers() {
            let cand = candidate_bit(&attacked, &grads, layer)?;
            let flip = trial.flip_bit_in_place(layer, cand.element, cand.bit)?;
            let loss = trial.loss(&batch)?;
            trial.flip_bit_in_place(layer, flip.element, flip.bit)?;
            if best.as_ref().is_none_or(|&(_, _, l)| loss > l) {
                best = Some((layer, cand, loss));
            }
        }
        let (layer, cand, loss) = best.expect("model has layers");
        let flip = attacked.flip_bit_in_place(layer, cand.element, cand.bit)?;
        trial.flip_bit_in_place(layer, cand.element, cand.bit)?;
        let acc = attacked.accuracy(data)?;
        trace
            .records
            .push(FlipRecord::from_flip(step, flip, loss, acc));
        trace.terminal_accuracy = acc;
        if acc <= cfg.stop_acc {
            trace.reached_threshold = true;
            break;
        }
    }
    Ok((attacked, trace))
}

/// Flips `n_flips` bits chosen uniformly among all weight bits of the model,
/// recording loss and accuracy on `data` after each flip.
pub fn random_flip_baseline(
    model: &QuantizedModel,
    data: &Dataset,
    n_flips: usize,
    seed: u64,
) -> Result<(QuantizedModel, AttackTrace)> {
    if n_flips == 0 {
        return Err(Error::Invalid(
            "random baseline needs at least one flip".into(),
        ));
    }
    let mut attacked = model.clone();
    let bits: Vec<usize> = model
        .layers()
        .iter()
        .map(|l| l.weights.len() * l.bitwidth as usize)
        .collect();
    let total: usize = bits.iter().sum();
    let mut rng = SplitMix64::new(seed);
    let initial_loss = attacked.loss(data)?;
    let initial_accuracy = attacked.accuracy(data)?;
    let mut records = Vec::with_capacity(n_flips);
    for step in 0..n_flips {
        let mut r = rng.below_usize(total);
        let mut layer = 0;
        while r >= bits[layer] {
            r -= bits[layer];
            layer += 1;
        }
        let bw = model.layers()[layer].bitwidth as usize;
        let flip = attacked.flip_bit_in_place(layer, r / bw, (r % bw) as u8)?;
        let (loss, acc) = (attacked.loss(data)?, attacked.accuracy(data)?);
        records.push(FlipRecord::from_flip(step, flip, loss, acc));
    }
    let terminal_accuracy = records
        .last()
        .map_or(initial_accuracy, |r| r.accuracy_after);
    Ok((
        attacked,
        AttackTrace {
            records,
            seed,
            batch_size: data.len(),
            stop_acc: 0.0,
            max_iters: n_flips,
            initial_loss,
            initial_accuracy,
            terminal_accuracy,
            reached_threshold: false,
        },
    ))
}

/// Re-applies a trace's flips to `model`.
pub fn replay(model: &QuantizedModel, trace: &AttackTrace) -> Result<QuantizedModel> {
    let mut m = model.clone();
    for r in &trace.records {
        let f = m.flip_bit_in_place(r.layer, r.element, r.bit)?;
        if f.old_value != r.old_value {
            return Err(Error::Invalid(format!(
                "step {}: layer {} element {} holds {}, trace expects {}",
                r.step, r.layer, r.element, f.old_value, r.old_value
            )));
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackStats {
    /// Fraction of flips that changed the weight's sign.
    pub sign_change_pct: f64,
    /// Mean over traces of the largest per-layer hit count.
    pub per_layer_max_concentration: f64,
    /// Flips per layer summed over all traces.
    pub per_layer_hit_counts: Vec<usize>,
    pub total_flips: usize,
}

pub fn attack_stats(traces: &[AttackTrace], num_layers: usize) -> Result<AttackStats> {
    if traces.is_empty() {
        return Err(Error::Empty("no attack traces"));
    }
    let mut hits = vec![0usize; num_layers];
    let mut concentration = 0.0;
    let (mut flips, mut sign) = (0usize, 0usize);
    for t in traces {
        let mut local = vec![0usize; num_layers];
        for r in &t.records {
            let slot = local.get_mut(r.layer).ok_or_else(|| {
                Error::OutOfRange(format!("trace flips layer {} of {num_layers}", r.layer))
            })?;
            *slot += 1;
            flips += 1;
            sign += r.sign_changed as usize;
        }
        concentration += local.iter().copied().max().unwrap_or(0) as f64;
        for (h, l) in hits.iter_mut().zip(&local) {
            *h += l;
        }
    }
    Ok(AttackStats {
        sign_change_pct: if flips == 0 {
            0.0
        } else {
            sign as f64 / flips as f64
        },
        per_layer_max_concentration: concentration / traces.len() as f64,
        per_layer_hit_counts: hits,
        total_flips: flips,
    })
}
