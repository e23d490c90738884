//! Desk-scale benchmark: the toy CNN and its data, parallel attack rounds,
//! checkpoint sweeps, collision experiments and overhead timing.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hashtag_core::attack::{attack_stats, progressive_bfa, AttackConfig, AttackStats, AttackTrace};
use hashtag_core::detector::{score_round, verify, EvalSummary};
use hashtag_core::net::{
    gaussian_blobs, quantize_network, train_toy, Architecture, BlobConfig, BlobSplits, Dataset,
    LayerParams, LayerShape, QuantizedModel, TrainConfig,
};
use hashtag_core::pearson::{check_collision_params, collision_trials, CollisionStats};
use hashtag_core::rng::{mix64, SplitMix64};
use hashtag_core::sensitivity::{
    normalize, select_from_ranking, taylor_sensitivity, SensitivityReport,
};
use hashtag_core::signature::{build_bundle, SignatureBundle, Traversal};
use hashtag_core::stats::{linear_fit, mean, spearman};

use crate::formats;

/// Data generator settings of the desk benchmark.
pub fn desk_blobs(seed: u64) -> BlobConfig {
    BlobConfig {
        classes: 3,
        per_class: 100,
        input_dims: vec![1, 8, 8],
        noise: 1.0,
        seed,
    }
}

pub const DESK_DATA_SEED: u64 = 2024;
pub const DESK_TRAIN_SEED: u64 = 7;

/// The six-layer toy CNN trained on the default desk data.
pub fn desk_model(bitwidth: u8) -> hashtag_core::Result<(QuantizedModel, BlobSplits)> {
    let data = gaussian_blobs(&desk_blobs(DESK_DATA_SEED))?;
    let cfg = TrainConfig {
        seed: DESK_TRAIN_SEED,
        bitwidth,
        ..TrainConfig::default()
    };
    let model = train_toy(&Architecture::toy_cnn(1, 3), &data.train, &cfg)?;
    Ok((model, data))
}

/// Master secret of evaluation round `seed`.
pub fn round_secret(seed: u64) -> u64 {
    mix64(seed ^ 0x5EC2_E7C0_FFEE_0001)
}

/// One progressive attack per seed, in parallel.
pub fn attack_rounds(
    model: &QuantizedModel,
    attack_data: &Dataset,
    seeds: &[u64],
    stop_acc: f64,
    max_iters: usize,
) -> hashtag_core::Result<Vec<(QuantizedModel, AttackTrace)>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = AttackConfig {
                stop_acc,
                max_iters,
                ..AttackConfig::random_guess(model.num_classes(), seed)
            };
            progressive_bfa(model, attack_data, &cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub checkpoints: Vec<usize>,
    /// `None` when no round committed a flip.
    pub detection_rate: Option<f64>,
    pub false_positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rounds: usize,
    pub width: usize,
    pub ranking: Vec<usize>,
    pub normalized_sensitivity: Vec<f64>,
    pub per_k: Vec<KRow>,
    /// Smallest k with detection rate 1 and no false alarms.
    pub minimal_k: Option<usize>,
    pub mean_flips: f64,
    pub max_flips: usize,
    pub sign_change_pct: f64,
    pub per_layer_hits: Vec<usize>,
    /// Rank correlation of normalized sensitivity with per-layer hit counts.
    pub sensitivity_hit_spearman: Option<f64>,
    pub mean_terminal_accuracy: f64,
    pub reached_threshold: usize,
}

/// Scores every attack round against top-k bundles for each k in `ks`.
pub fn detection_sweep(
    model: &QuantizedModel,
    report: &SensitivityReport,
    rounds: &[(QuantizedModel, AttackTrace)],
    ks: &[usize],
    width: usize,
    traversal: Traversal,
) -> hashtag_core::Result<Vec<(KRow, EvalSummary)>> {
    ks.iter()
        .map(|&k| {
            let checkpoints = select_from_ranking(&report.ranking, k)?;
            let outcomes = rounds
                .par_iter()
                .map(|(attacked, trace)| {
                    let bundle = build_bundle(
                        model,
                        &checkpoints,
                        round_secret(trace.seed),
                        width,
                        traversal,
                    )?;
                    score_round(trace.seed, model, &bundle, attacked, trace)
                })
                .collect::<hashtag_core::Result<Vec<_>>>()?;
            let summary = EvalSummary::from_rounds(outcomes);
            let row = KRow {
                k,
                checkpoints,
                detection_rate: summary.detection_rate,
                false_positive_rate: summary.false_positive_rate,
            };
            Ok((row, summary))
        })
        .collect()
}

/// Full evaluation: sensitivity on `validation`, one attack per seed on
/// `attack`, and a sweep over every k from 1 to the layer count.
pub fn evaluate_model(
    model: &QuantizedModel,
    validation: &Dataset,
    attack: &Dataset,
    seeds: &[u64],
    stop_acc: f64,
    width: usize,
) -> hashtag_core::Result<(EvalReport, Vec<AttackTrace>)> {
    let report = taylor_sensitivity(model, validation)?;
    let rounds = attack_rounds(
        model,
        attack,
        seeds,
        stop_acc,
        AttackConfig::DEFAULT_MAX_ITERS,
    )?;
    let ks: Vec<usize> = (1..=model.num_layers()).collect();
    let sweep = detection_sweep(
        model,
        &report,
        &rounds,
        &ks,
        width,
        Traversal::KeyedPermutation,
    )?;
    let traces: Vec<AttackTrace> = rounds.into_iter().map(|(_, t)| t).collect();
    let stats = attack_stats(&traces, model.num_layers())?;
    let eval = assemble_report(&report, &sweep, &traces, &stats, width);
    Ok((eval, traces))
}

fn assemble_report(
    report: &SensitivityReport,
    sweep: &[(KRow, EvalSummary)],
    traces: &[AttackTrace],
    stats: &AttackStats,
    width: usize,
) -> EvalReport {
    let normalized = normalize(&report.per_layer);
    let hits: Vec<f64> = stats
        .per_layer_hit_counts
        .iter()
        .map(|&h| h as f64)
        .collect();
    let n = traces.len().max(1) as f64;
    EvalReport {
        rounds: traces.len(),
        width,
        ranking: report.ranking.clone(),
        per_k: sweep.iter().map(|(r, _)| r.clone()).collect(),
        minimal_k: sweep
            .iter()
            .find(|(r, _)| r.detection_rate == Some(1.0) && r.false_positive_rate == 0.0)
            .map(|(r, _)| r.k),
        mean_flips: stats.total_flips as f64 / n,
        max_flips: traces.iter().map(|t| t.flips()).max().unwrap_or(0),
        sign_change_pct: stats.sign_change_pct,
        sensitivity_hit_spearman: spearman(&normalized, &hits),
        normalized_sensitivity: normalized,
        per_layer_hits: stats.per_layer_hit_counts.clone(),
        mean_terminal_accuracy: traces.iter().map(|t| t.terminal_accuracy).sum::<f64>() / n,
        reached_threshold: traces.iter().filter(|t| t.reached_threshold).count(),
    }
}

/// Human-readable summary of an evaluation.
pub fn render_eval(r: &EvalReport) -> String {
    let mut s = format!(
        "rounds {}  mean flips {:.2} (max {})  sign changes {:.1}%  reached threshold {}/{}\n",
        r.rounds,
        r.mean_flips,
        r.max_flips,
        100.0 * r.sign_change_pct,
        r.reached_threshold,
        r.rounds
    );
    s += "layer  rank  sensitivity  hits\n";
    for (l, (&sens, &hits)) in r
        .normalized_sensitivity
        .iter()
        .zip(&r.per_layer_hits)
        .enumerate()
    {
        let rank = r.ranking.iter().position(|&x| x == l).unwrap_or(usize::MAX);
        s += &format!("{l:>5}  {rank:>4}  {sens:>11.4}  {hits:>4}\n");
    }
    s += "k  checkpoints         DR      FPR\n";
    for row in &r.per_k {
        let dr = row
            .detection_rate
            .map_or("n/a".to_string(), |d| format!("{d:.3}"));
        s += &format!(
            "{:<2} {:<18} {:>6} {:>8.3}\n",
            row.k,
            format!("{:?}", row.checkpoints),
            dr,
            row.false_positive_rate
        );
    }
    s += &format!(
        "minimal k with DR=1, FPR=0: {}\nspearman(sensitivity, hits): {}\n",
        r.minimal_k.map_or("none".into(), |k| k.to_string()),
        r.sensitivity_hit_spearman
            .map_or("n/a".into(), |x| format!("{x:.3}"))
    );
    s
}

/// Monte-Carlo collision rate, sharded across threads. Trial `i` always
/// uses seed `seed ^ i`, so the count does not depend on the sharding.
pub fn collision_rate(
    len: usize,
    k: usize,
    trials: u64,
    seed: u64,
) -> hashtag_core::Result<CollisionStats> {
    check_collision_params(len, k, trials)?;
    let shards = (rayon::current_num_threads() as u64 * 4).clamp(1, trials);
    let step = trials.div_ceil(shards);
    Ok((0..shards)
        .into_par_iter()
        .map(|s| collision_trials(len, k, seed, s * step..((s + 1) * step).min(trials)))
        .reduce(CollisionStats::default, CollisionStats::merge))
}

fn median_duration(mut samples: Vec<Duration>) -> Duration {
    samples.sort();
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2
    }
}

fn time_samples<T>(reps: usize, mut f: impl FnMut() -> T) -> Vec<Duration> {
    (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed()
        })
        .collect()
}

fn time_median<T>(reps: usize, f: impl FnMut() -> T) -> Duration {
    median_duration(time_samples(reps, f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub checkpoints: usize,
    pub width: usize,
    pub covered_elements: usize,
    /// Bytes of the serialized bundle.
    pub signature_bytes: usize,
    /// Bytes if every digit table were stored with its hash (257 per digit).
    pub materialized_bytes: usize,
    pub repetitions: usize,
    pub hash_seconds: f64,
    pub inference_seconds: f64,
    pub hash_over_inference: f64,
}

/// Median wall-clock time of `verify` and of one forward pass over `batch`.
pub fn overhead_report(
    model: &QuantizedModel,
    bundle: &SignatureBundle,
    batch: &Dataset,
    reps: usize,
) -> anyhow::Result<OverheadReport> {
    let reps = reps.max(10);
    verify(model, bundle)?;
    model.logits(batch)?;
    let hash = time_median(reps, || verify(model, bundle).map(|r| r.verdict));
    let infer = time_median(reps, || model.logits(batch).map(|l| l.len()));
    let k = bundle.checkpoints.len();
    Ok(OverheadReport {
        checkpoints: k,
        width: bundle.width,
        covered_elements: bundle.covered_elements(),
        signature_bytes: formats::encode_bundle(bundle)?.len(),
        materialized_bytes: formats::materialized_size(k, bundle.width),
        repetitions: reps,
        hash_seconds: hash.as_secs_f64(),
        inference_seconds: infer.as_secs_f64(),
        hash_over_inference: hash.as_secs_f64() / infer.as_secs_f64().max(f64::MIN_POSITIVE),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub elements: Vec<usize>,
    pub seconds: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Verify time against checkpointed element count for single-layer models
/// of the given sizes (each a multiple of 16). Each point is the fastest of
/// `reps` runs, which is far less sensitive to other load than the median.
pub fn verify_scaling(sizes: &[usize], reps: usize, seed: u64) -> anyhow::Result<ScalingFit> {
    let mut rng = SplitMix64::new(seed);
    let mut seconds = Vec::with_capacity(sizes.len());
    for &n in sizes {
        anyhow::ensure!(
            n >= 32 && n % 16 == 0,
            "size {n} must be a multiple of 16, at least 32"
        );
        let shape = LayerShape::Dense {
            inputs: n / 16,
            outputs: 16,
        };
        let w: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let layer = LayerParams::from_real(shape, false, 8, &w, vec![0.0; 16], 0)?;
        let model = QuantizedModel::new(vec![layer])?;
        let bundle = build_bundle(&model, &[0], seed, 1, Traversal::KeyedPermutation)?;
        verify(&model, &bundle)?;
        let samples = time_samples(reps.max(10), || verify(&model, &bundle).map(|r| r.verdict));
        seconds.push(samples.into_iter().min().unwrap_or_default().as_secs_f64());
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &seconds)
        .ok_or_else(|| anyhow::anyhow!("need at least two distinct sizes"))?;
    Ok(ScalingFit {
        elements: sizes.to_vec(),
        seconds,
        slope,
        intercept,
        r_squared,
    })
}

/// A small MLP (323 parameters) kept in the regime where a first-order
/// expansion of a sign flip is accurate: hidden units biased onto the linear
/// side of the ReLU, output weights scaled down.
pub fn smooth_mlp(seed: u64) -> hashtag_core::Result<(QuantizedModel, BlobSplits)> {
    let data = gaussian_blobs(&BlobConfig {
        classes: 3,
        per_class: 60,
        input_dims: vec![16],
        noise: 1.0,
        seed: 31 + seed,
    })?;
    let mut net = Architecture::mlp(16, 16, 3).init(seed)?;
    net.layers[0].bias.iter_mut().for_each(|b| *b = 3.0);
    net.layers[1].weights.iter_mut().for_each(|w| *w *= 0.01);
    Ok((quantize_network(&net, 8)?, data))
}

/// Mean accuracy of random flips on `data` over paired seeds, each run with
/// `flips[i]` flips.
pub fn random_baseline_accuracy(
    model: &QuantizedModel,
    data: &Dataset,
    flips: &[(u64, usize)],
) -> hashtag_core::Result<f64> {
    let accs = flips
        .par_iter()
        .map(|&(seed, n)| {
            hashtag_core::attack::random_flip_baseline(model, data, n.max(1), seed)
                .map(|(_, t)| t.terminal_accuracy)
        })
        .collect::<hashtag_core::Result<Vec<f64>>>()?;
    mean(&accs).ok_or(hashtag_core::Error::Empty("no baseline runs"))
}
