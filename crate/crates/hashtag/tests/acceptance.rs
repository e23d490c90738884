//! Acceptance suite: one PASS/FAIL line per criterion. Run with
//! `cargo test -p hashtag --test acceptance -- --nocapture` to see the report.

use std::time::{Duration, Instant};

use hashtag::bench::{
    collision_rate, desk_model, evaluate_model, random_baseline_accuracy, round_secret, smooth_mlp,
    EvalReport,
};
use hashtag::formats::{self, BUNDLE_FIXED_HEADER};
use hashtag_core::attack::AttackTrace;
use hashtag_core::detector::{verify, Verdict};
use hashtag_core::net::{
    quantize_network, Architecture, BlobSplits, Dataset, LayerParams, LayerShape, Network,
    QuantizedModel, Split,
};
use hashtag_core::pearson::{exhaustive_collision_count, SmallTable};
use hashtag_core::rng::SplitMix64;
use hashtag_core::sensitivity::{exact_sensitivity, taylor_sensitivity};
use hashtag_core::signature::{build_bundle, Traversal};
use hashtag_core::stats::spearman;

const BITWIDTHS: [u8; 3] = [4, 6, 8];
const ROUNDS: u64 = 50;

struct Report {
    failed: Vec<u32>,
}

impl Report {
    fn line(&mut self, n: u32, pass: bool, what: &str, detail: String) {
        println!(
            "{} criterion {n:>2}: {what} [{detail}]",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failed.push(n);
        }
    }
}

struct Desk {
    bitwidth: u8,
    model: QuantizedModel,
    data: BlobSplits,
}

struct Exhaustive {
    positions: usize,
    detected: usize,
    checkpoints: Vec<usize>,
    elapsed: Duration,
}

impl Exhaustive {
    fn pass(&self) -> bool {
        self.positions >= 2000
            && self.detected == self.positions
            && self.elapsed < Duration::from_secs(60)
    }
}

/// Flip every bit of every checkpoint weight. Checkpoints are the top of the
/// sensitivity ranking: at least three layers, more until 2000 bit positions.
fn exhaustive_flips(d: &Desk) -> Exhaustive {
    let start = Instant::now();
    let report = taylor_sensitivity(&d.model, &d.data.validation).unwrap();
    let bits = |layers: &[usize]| -> usize {
        layers
            .iter()
            .map(|&l| d.model.layers()[l].weights.len() * d.bitwidth as usize)
            .sum()
    };
    let mut k = 3;
    while k < report.ranking.len() && bits(&report.ranking[..k]) < 2000 {
        k += 1;
    }
    let checkpoints = report.ranking[..k].to_vec();
    let bundle = build_bundle(
        &d.model,
        &checkpoints,
        round_secret(0),
        1,
        Traversal::KeyedPermutation,
    )
    .unwrap();
    let (mut positions, mut detected) = (0, 0);
    for &l in &checkpoints {
        for e in 0..d.model.layers()[l].weights.len() {
            for bit in 0..d.bitwidth {
                let flipped = d.model.flip_bit(l, e, bit).unwrap();
                positions += 1;
                detected +=
                    (verify(&flipped, &bundle).unwrap().verdict == Verdict::Compromised) as usize;
            }
        }
    }
    Exhaustive {
        positions,
        detected,
        checkpoints,
        elapsed: start.elapsed(),
    }
}

fn end_to_end(d: &Desk) -> (EvalReport, Vec<AttackTrace>, Duration) {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..ROUNDS).collect();
    let stop = 1.0 / d.model.num_classes() as f64;
    let (report, traces) = evaluate_model(
        &d.model,
        &d.data.validation,
        &d.data.attack,
        &seeds,
        stop,
        1,
    )
    .unwrap();
    (report, traces, start.elapsed())
}

fn e2e_pass(r: &EvalReport, elapsed: Duration) -> bool {
    r.rounds == ROUNDS as usize
        && r.minimal_k.is_some_and(|k| k <= 3)
        && elapsed < Duration::from_secs(15 * 60)
}

fn random_data(n: usize, dims: &[usize], classes: u64, seed: u64) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    let per: usize = dims.iter().product();
    let inputs = (0..n * per).map(|_| rng.normal() as f32).collect();
    let labels = (0..n).map(|_| rng.below(classes) as u16).collect();
    Dataset::new(inputs, dims.to_vec(), labels, Split::Validation).unwrap()
}

fn random_layer(shape: LayerShape, pool: bool, index: usize, rng: &mut SplitMix64) -> LayerParams {
    let w: Vec<f64> = (0..shape.element_count()).map(|_| rng.normal()).collect();
    let b: Vec<f64> = (0..shape.outputs()).map(|_| 0.1 * rng.normal()).collect();
    LayerParams::from_real(shape, pool, 8, &w, b, index).unwrap()
}

/// Conv, conv + pool, two dense layers on 1x4x4 inputs: 109 parameters.
fn gradient_model(seed: u64) -> QuantizedModel {
    let mut rng = SplitMix64::new(seed);
    let conv = |ci, co| LayerShape::Conv {
        kernel: 3,
        in_channels: ci,
        out_channels: co,
    };
    QuantizedModel::new(vec![
        random_layer(conv(1, 2), false, 0, &mut rng),
        random_layer(conv(2, 2), true, 1, &mut rng),
        random_layer(
            LayerShape::Dense {
                inputs: 8,
                outputs: 4,
            },
            false,
            2,
            &mut rng,
        ),
        random_layer(
            LayerShape::Dense {
                inputs: 4,
                outputs: 3,
            },
            false,
            3,
            &mut rng,
        ),
    ])
    .unwrap()
}

/// Central difference with step `eps` on one weight or bias.
fn central_difference(
    net: &Network,
    data: &Dataset,
    layer: usize,
    i: usize,
    bias: bool,
    eps: f64,
) -> f64 {
    let (mut plus, mut minus) = (net.clone(), net.clone());
    let (p, m) = if bias {
        (
            &mut plus.layers[layer].bias[i],
            &mut minus.layers[layer].bias[i],
        )
    } else {
        (
            &mut plus.layers[layer].weights[i],
            &mut minus.layers[layer].weights[i],
        )
    };
    *p += eps;
    *m -= eps;
    (plus.loss(data).unwrap() - minus.loss(data).unwrap()) / (2.0 * eps)
}

struct GradientCheck {
    params: usize,
    /// Worst relative error at the base step.
    worst_at_base: f64,
    /// Worst relative error after refining the step where the base step
    /// straddled a ReLU or pooling switch.
    worst: f64,
    refined: usize,
}

/// Relative error of every backward entry against central differences at
/// step 1e-4. An entry that misses the tolerance is retried at 1e-5 and
/// 1e-6: a kink inside the interval spoils the difference quotient, while a
/// wrong gradient stays wrong at every step.
fn gradient_check(model: &QuantizedModel, data: &Dataset, tol: f64) -> GradientCheck {
    let net = model.dequantized();
    let grads = net.gradients(data).unwrap();
    let rel = |g: f64, fd: f64| (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
    let mut check = GradientCheck {
        params: 0,
        worst_at_base: 0.0,
        worst: 0.0,
        refined: 0,
    };
    for l in 0..net.layers.len() {
        for bias in [false, true] {
            let g = if bias {
                &grads.bias[l]
            } else {
                &grads.weights[l]
            };
            for (i, &g) in g.iter().enumerate() {
                check.params += 1;
                let mut err = rel(g, central_difference(&net, data, l, i, bias, 1e-4));
                check.worst_at_base = check.worst_at_base.max(err);
                if err >= tol {
                    check.refined += 1;
                    for eps in [1e-5, 1e-6] {
                        err = err.min(rel(g, central_difference(&net, data, l, i, bias, eps)));
                    }
                }
                check.worst = check.worst.max(err);
            }
        }
    }
    check
}

fn top_elements(scores: &[Vec<f64>], n: usize) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize, f64)> = scores
        .iter()
        .enumerate()
        .flat_map(|(l, s)| s.iter().enumerate().map(move |(e, &v)| (l, e, v)))
        .collect();
    all.sort_by(|a, b| b.2.total_cmp(&a.2));
    all.into_iter().take(n).map(|(l, e, _)| (l, e)).collect()
}

/// Eight dense layers, so bundles of every k up to 8 exist.
fn eight_layer_model() -> QuantizedModel {
    let mut rng = SplitMix64::new(8);
    let widths = [12, 16, 16, 12, 12, 10, 8, 6, 3];
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            random_layer(
                LayerShape::Dense {
                    inputs: w[0],
                    outputs: w[1],
                },
                false,
                i,
                &mut rng,
            )
        })
        .collect();
    QuantizedModel::new(layers).unwrap()
}

#[test]
fn acceptance() {
    let mut rep = Report { failed: Vec::new() };
    let start = Instant::now();
    let desks: Vec<Desk> = BITWIDTHS
        .iter()
        .map(|&bitwidth| {
            let (model, data) = desk_model(bitwidth).unwrap();
            Desk {
                bitwidth,
                model,
                data,
            }
        })
        .collect();
    println!(
        "desk models: six-layer CNN, {} weights, trained at bitwidths {:?} in {:.1?}",
        desks[0].model.weight_count(),
        BITWIDTHS,
        start.elapsed()
    );
    let primary = desks.iter().position(|d| d.bitwidth == 8).unwrap();

    // 1 (and its bitwidth sweep for 12)
    let exhaustive: Vec<Exhaustive> = desks.iter().map(exhaustive_flips).collect();
    let e = &exhaustive[primary];
    rep.line(
        1,
        e.pass(),
        "every single-bit flip in the checkpoint layers is detected",
        format!(
            "b=8, checkpoints {:?}, {}/{} positions detected in {:.1?}",
            e.checkpoints, e.detected, e.positions, e.elapsed
        ),
    );

    // 2
    let t = Instant::now();
    let mut rates = Vec::new();
    for (i, k) in [2usize, 3, 6, 8, 12, 16].into_iter().enumerate() {
        let stats = collision_rate(1000, k, 1_000_000, 100 + i as u64).unwrap();
        rates.push((k, stats.rate()));
    }
    let elapsed = t.elapsed();
    let in_band = rates.iter().all(|&(_, r)| (0.0033..=0.0047).contains(&r));
    rep.line(
        2,
        in_band && elapsed < Duration::from_secs(120),
        "multi-alteration collision rate within [0.0033, 0.0047]",
        format!(
            "len 1000, 1e6 trials each: {} in {elapsed:.1?}",
            rates
                .iter()
                .map(|(k, r)| format!("k={k}: {r:.5}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );

    // 3
    let t = Instant::now();
    let mut exact = true;
    let mut counts = Vec::new();
    for (seed, len) in [(1u64, 4usize), (2, 5), (3, 6)] {
        let table = SmallTable::generate(2, seed).unwrap();
        let (collisions, cases) = exhaustive_collision_count(&table, len, 2).unwrap();
        exact &= collisions * 4 == cases;
        counts.push(format!("len {len}: {collisions}/{cases}"));
    }
    let elapsed = t.elapsed();
    rep.line(
        3,
        exact && elapsed < Duration::from_secs(1),
        "4-symbol exhaustive 2-alteration collision rate is exactly 1/4",
        format!("{} in {elapsed:.1?}", counts.join(", ")),
    );

    // 4
    let t = Instant::now();
    let extra: Vec<QuantizedModel> = (0..3)
        .map(|s| {
            quantize_network(
                &Architecture::toy_cnn(1, 3).init(100 + s).unwrap(),
                5 + s as u8,
            )
            .unwrap()
        })
        .collect();
    let pool: Vec<&QuantizedModel> = desks.iter().map(|d| &d.model).chain(&extra).collect();
    let mut alarms = 0;
    let verifies = 10_000u64;
    for i in 0..verifies {
        let model = pool[i as usize % pool.len()];
        let k = 1 + (i as usize / pool.len()) % model.num_layers();
        let layers: Vec<usize> = (0..k)
            .map(|j| (j + i as usize) % model.num_layers())
            .collect();
        let traversal = if i % 2 == 0 {
            Traversal::KeyedPermutation
        } else {
            Traversal::ChannelMajor
        };
        let bundle = build_bundle(
            model,
            &layers,
            round_secret(i),
            1 + (i % 3) as usize,
            traversal,
        )
        .unwrap();
        alarms += !verify(model, &bundle).unwrap().is_clean() as usize;
    }
    let elapsed = t.elapsed();
    rep.line(
        4,
        alarms == 0 && elapsed < Duration::from_secs(60),
        "no false alarms on unmodified models",
        format!(
            "{alarms} alarms in {verifies} verifications over {} models, {elapsed:.1?}",
            pool.len()
        ),
    );

    // 5 (and its bitwidth sweep for 12)
    let runs: Vec<(EvalReport, Vec<AttackTrace>, Duration)> =
        desks.iter().map(end_to_end).collect();
    let (r, traces, elapsed) = &runs[primary];
    let row = r.minimal_k.map(|k| &r.per_k[k - 1]);
    rep.line(
        5,
        e2e_pass(r, *elapsed),
        "some k <= 3 detects every attack round with no false alarm",
        format!(
            "b=8, {} rounds, minimal k {} (checkpoints {:?}, DR {:?}, FPR {:?}), mean flips {:.2}, {elapsed:.1?}",
            r.rounds,
            r.minimal_k.map_or("none".into(), |k| k.to_string()),
            row.map(|r| &r.checkpoints),
            row.and_then(|r| r.detection_rate),
            row.map(|r| r.false_positive_rate),
            r.mean_flips
        ),
    );

    // 6
    let rho = r.sensitivity_hit_spearman;
    rep.line(
        6,
        rho.is_some_and(|x| x > 0.0),
        "sensitivity correlates positively with attack hits",
        format!(
            "spearman {:?}, normalized sensitivity {:?}, hits {:?}",
            rho.map(|x| (x * 1000.0).round() / 1000.0),
            r.normalized_sensitivity
                .iter()
                .map(|x| (x * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            r.per_layer_hits
        ),
    );

    // 7
    rep.line(
        7,
        r.sign_change_pct > 0.5,
        "most attack flips change the weight's sign",
        format!(
            "{:.1}% of {} flips",
            100.0 * r.sign_change_pct,
            traces.iter().map(|t| t.flips()).sum::<usize>()
        ),
    );

    // 8
    let d = &desks[primary];
    let budgets: Vec<(u64, usize)> = traces.iter().map(|t| (t.seed, t.flips())).collect();
    let random_acc = random_baseline_accuracy(&d.model, &d.data.attack, &budgets).unwrap();
    let progressive_acc =
        traces.iter().map(|t| t.terminal_accuracy).sum::<f64>() / traces.len() as f64;
    rep.line(
        8,
        traces.len() == ROUNDS as usize && random_acc >= progressive_acc + 0.20,
        "random flips at the same budget leave accuracy at least 20 points higher",
        format!(
            "random {:.3} vs progressive {:.3} (gap {:.3}) over {} paired seeds",
            random_acc,
            progressive_acc,
            random_acc - progressive_acc,
            traces.len()
        ),
    );

    // 9
    let data = random_data(12, &[1, 4, 4], 3, 5);
    let g = gradient_check(&gradient_model(11), &data, 1e-4);
    rep.line(
        9,
        g.params <= 200 && g.worst < 1e-4,
        "backward matches central finite differences on every parameter",
        format!(
            "{} parameters, worst relative error {:.2e} ({:.2e} at step 1e-4; {} entries refined past a kink)",
            g.params, g.worst, g.worst_at_base, g.refined
        ),
    );

    // 10
    let mut rhos = Vec::new();
    let mut params = 0;
    for seed in 0..5 {
        let (m, data) = smooth_mlp(seed).unwrap();
        params = m
            .layers()
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum();
        let report = taylor_sensitivity(&m, &data.validation).unwrap();
        let top = top_elements(&report.per_element, 20);
        let taylor: Vec<f64> = top.iter().map(|&(l, e)| report.per_element[l][e]).collect();
        let exact: Vec<f64> = top
            .iter()
            .map(|&(l, e)| exact_sensitivity(&m, &data.validation, l, e).unwrap())
            .collect();
        rhos.push(spearman(&taylor, &exact).unwrap_or(f64::NAN));
    }
    rep.line(
        10,
        params <= 500 && rhos.iter().all(|&x| x >= 0.8),
        "Taylor scores rank the top-20 elements like the exact oracle",
        format!(
            "{params} parameters, spearman per seed {:?}",
            rhos.iter()
                .map(|x| (x * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        ),
    );

    // 11
    let m8 = eight_layer_model();
    let mut sizes = Vec::new();
    let mut fits = true;
    for k in 1..=8 {
        let layers: Vec<usize> = (0..k).collect();
        let b = build_bundle(&m8, &layers, 5, 1, Traversal::KeyedPermutation).unwrap();
        let n = formats::encode_bundle(&b).unwrap().len();
        fits &= n <= 257 * k + BUNDLE_FIXED_HEADER;
        sizes.push(n);
    }
    rep.line(
        11,
        fits,
        "serialized bundle is at most 257 bytes per checkpoint plus the header",
        format!("bytes for k=1..8: {sizes:?}, header {BUNDLE_FIXED_HEADER}"),
    );

    // 12
    let per_bw: Vec<String> = desks
        .iter()
        .zip(&exhaustive)
        .zip(&runs)
        .map(|((d, e), (r, _, t))| {
            format!(
                "b={}: {}/{} flips detected, minimal k {} ({t:.1?})",
                d.bitwidth,
                e.detected,
                e.positions,
                r.minimal_k.map_or("none".into(), |k| k.to_string())
            )
        })
        .collect();
    let all =
        exhaustive.iter().all(Exhaustive::pass) && runs.iter().all(|(r, _, t)| e2e_pass(r, *t));
    rep.line(
        12,
        all,
        "criteria 1 and 5 hold at bitwidths 4, 6 and 8",
        per_bw.join("; "),
    );

    println!("acceptance finished in {:.1?}", start.elapsed());
    assert!(rep.failed.is_empty(), "failed criteria: {:?}", rep.failed);
}
