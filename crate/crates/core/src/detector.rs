//! Online verification against a signature bundle and detection metrics.

use alloc::format;
use alloc::vec::Vec;
use core::time::Duration;

use crate::attack::AttackTrace;
use crate::net::{Dataset, QuantizedModel};
use crate::signature::SignatureBundle;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Clean,
    Compromised,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationResult {
    pub verdict: Verdict,
    pub mismatched_layers: Vec<usize>,
    pub checked_layers: Vec<usize>,
    /// Wall-clock time when measured by a std caller; `None` otherwise.
    pub elapsed: Option<Duration>,
}

impl VerificationResult {
    pub fn is_clean(&self) -> bool {
        self.verdict == Verdict::Clean
    }
}

/// Confirms the bundle was built for a model of this structure.
pub fn check_structure(model: &QuantizedModel, bundle: &SignatureBundle) -> Result<()> {
    bundle.validate()?;
    for c in &bundle.checkpoints {
        let layer = model.layers().get(c.layer_index).ok_or_else(|| {
            Error::StructuralMismatch(format!(
                "checkpoint layer {} but model has {} layers",
                c.layer_index,
                model.num_layers()
            ))
        })?;
        if layer.weights.len() != c.element_count {
            return Err(Error::StructuralMismatch(format!(
                "layer {} has {} weights, signature covers {}",
                c.layer_index,
                layer.weights.len(),
                c.element_count
            )));
        }
    }
    Ok(())
}

/// Recomputes every checkpoint hash and compares digit by digit. Any
/// mismatch marks the model compromised; a structural mismatch is an error.
pub fn verify(model: &QuantizedModel, bundle: &SignatureBundle) -> Result<VerificationResult> {
    check_structure(model, bundle)?;
    let mut mismatched = Vec::new();
    let mut checked = Vec::with_capacity(bundle.checkpoints.len());
    for c in &bundle.checkpoints {
        let layer = &model.layers()[c.layer_index];
        if c.recompute(layer)? != c.hash {
            mismatched.push(c.layer_index);
        }
        checked.push(c.layer_index);
    }
    Ok(VerificationResult {
        verdict: if mismatched.is_empty() {
            Verdict::Clean
        } else {
            Verdict::Compromised
        },
        mismatched_layers: mismatched,
        checked_layers: checked,
        elapsed: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum GuardedOutput {
    Logits(Vec<f64>),
    Alarm { mismatched_layers: Vec<usize> },
}

/// Verifies first and releases logits only for a clean model.
pub fn guarded_infer(
    model: &QuantizedModel,
    bundle: &SignatureBundle,
    batch: &Dataset,
) -> Result<GuardedOutput> {
    let v = verify(model, bundle)?;
    if !v.is_clean() {
        return Ok(GuardedOutput::Alarm {
            mismatched_layers: v.mismatched_layers,
        });
    }
    Ok(GuardedOutput::Logits(model.logits(batch)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub seed: u64,
    pub checkpoints: Vec<usize>,
    /// The benign model raised an alarm.
    pub false_alarm: bool,
    /// The attack committed at least one flip.
    pub attacked: bool,
    pub detected: bool,
    pub flips: usize,
    /// Flips that landed in checkpoint layers (comparison-only count).
    pub flips_in_checkpoints: usize,
    pub terminal_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    /// Detected attacked rounds over attacked rounds; `None` when no round
    /// was attacked.
    pub detection_rate: Option<f64>,
    pub false_positive_rate: f64,
    pub rounds: usize,
    pub per_round: Vec<RoundOutcome>,
}

impl EvalSummary {
    pub fn from_rounds(per_round: Vec<RoundOutcome>) -> Self {
        let attacked = per_round.iter().filter(|r| r.attacked).count();
        let detected = per_round
            .iter()
            .filter(|r| r.attacked && r.detected)
            .count();
        let alarms = per_round.iter().filter(|r| r.false_alarm).count();
        Self {
            detection_rate: (attacked > 0).then(|| detected as f64 / attacked as f64),
            false_positive_rate: if per_round.is_empty() {
                0.0
            } else {
                alarms as f64 / per_round.len() as f64
            },
            rounds: per_round.len(),
            per_round,
        }
    }

    pub fn mean_flips(&self) -> f64 {
        if self.rounds == 0 {
            return 0.0;
        }
        self.per_round.iter().map(|r| r.flips).sum::<usize>() as f64 / self.rounds as f64
    }
}

/// One evaluation round given the benign model, its bundle and the attack
/// outcome.
pub fn score_round(
    seed: u64,
    benign: &QuantizedModel,
    bundle: &SignatureBundle,
    attacked: &QuantizedModel,
    trace: &AttackTrace,
) -> Result<RoundOutcome> {
    let before = verify(benign, bundle)?;
    let after = verify(attacked, bundle)?;
    let checkpoints = bundle.layer_indices();
    Ok(RoundOutcome {
        seed,
        false_alarm: !before.is_clean(),
        attacked: trace.flips() > 0,
        detected: !after.is_clean(),
        flips: trace.flips(),
        flips_in_checkpoints: trace
            .records
            .iter()
            .filter(|r| checkpoints.contains(&r.layer))
            .count(),
        terminal_accuracy: trace.terminal_accuracy,
        checkpoints,
    })
}

/// Runs one round per seed: build the benign model and its bundle, verify
/// it, attack it, verify the attacked copy.
pub fn evaluate<F, B, A>(
    seeds: &[u64],
    mut model_factory: F,
    mut bundle_builder: B,
    mut attack_runner: A,
) -> Result<EvalSummary>
where
    F: FnMut(u64) -> Result<QuantizedModel>,
    B: FnMut(&QuantizedModel, u64) -> Result<SignatureBundle>,
    A: FnMut(&QuantizedModel, u64) -> Result<(QuantizedModel, AttackTrace)>,
{
    if seeds.is_empty() {
        return Err(Error::Empty("evaluation needs at least one round"));
    }
    let per_round = seeds
        .iter()
        .map(|&seed| {
            let benign = model_factory(seed)?;
            let bundle = bundle_builder(&benign, seed)?;
            let (attacked, trace) = attack_runner(&benign, seed)?;
            score_round(seed, &benign, &bundle, &attacked, &trace)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_rounds(per_round))
}
