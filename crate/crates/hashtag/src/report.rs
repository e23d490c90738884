//! Machine-readable JSON records written next to artifacts.

use serde::{Deserialize, Serialize};

use hashtag_core::detector::{Verdict, VerificationResult};
use hashtag_core::sensitivity::SensitivityReport;

/// Command name, tool version and every parameter of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub args: serde_json::Value,
}

impl RunRecord {
    pub fn new<A: Serialize>(command: &str, args: &A) -> serde_json::Result<Self> {
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args: serde_json::to_value(args)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub per_layer: Vec<f64>,
    pub normalized: Vec<f64>,
    pub ranking: Vec<usize>,
    pub checkpoints: Vec<usize>,
}

impl SensitivityRecord {
    pub fn new(report: &SensitivityReport, checkpoints: &[usize]) -> Self {
        Self {
            per_layer: report.per_layer.clone(),
            normalized: report.normalized(),
            ranking: report.ranking.clone(),
            checkpoints: checkpoints.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRecord {
    pub config: RunRecord,
    pub verdict: String,
    pub mismatched_layers: Vec<usize>,
    pub checked_layers: Vec<usize>,
}

impl VerifyRecord {
    pub fn new<A: Serialize>(r: &VerificationResult, args: &A) -> serde_json::Result<Self> {
        Ok(Self {
            config: RunRecord::new("verify", args)?,
            verdict: match r.verdict {
                Verdict::Clean => "clean",
                Verdict::Compromised => "compromised",
            }
            .to_string(),
            mismatched_layers: r.mismatched_layers.clone(),
            checked_layers: r.checked_layers.clone(),
        })
    }
}
