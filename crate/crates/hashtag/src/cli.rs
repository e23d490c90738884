//! Command-line front end. Exit codes: 0 clean / success, 2 compromised,
//! 1 usage or I/O error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hashtag_core::attack::{progressive_bfa, random_flip_baseline, AttackConfig};
use hashtag_core::detector::verify;
use hashtag_core::net::{
    gaussian_blobs, train_toy, Architecture, BlobConfig, Dataset, Split, TrainConfig,
};
use hashtag_core::sensitivity::{select_checkpoints, taylor_sensitivity};
use hashtag_core::signature::{build_bundle, Traversal};

use crate::bench::{self, collision_rate, evaluate_model, overhead_report, verify_scaling};
use crate::formats;
use crate::report::{RunRecord, SensitivityRecord, VerifyRecord};
use crate::trace::save_trace;

pub const EXIT_CLEAN: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_COMPROMISED: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hashtag",
    version,
    about = "Bit-flip attack detection for quantized networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate Gaussian-blob train/validation/attack splits.
    Gendata(GendataArgs),
    /// Train and quantize a toy network.
    Train(TrainArgs),
    /// Rank layers by sensitivity and sign the top-k as checkpoints.
    Calibrate(CalibrateArgs),
    /// Run the progressive bit-flip attack (or a random-flip baseline).
    Attack(AttackArgs),
    /// Check a model against its signature bundle.
    Verify(VerifyArgs),
    /// Seeded attack rounds scored for every checkpoint count.
    Eval(EvalArgs),
    /// Monte-Carlo multi-alteration collision rate.
    Collision(CollisionArgs),
    /// Signature size and verification overhead.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GendataArgs {
    /// Output directory for train.dsb, validation.dsb and attack.dsb.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = bench::DESK_DATA_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Sample shape, e.g. `1x8x8` or `16`.
    #[arg(long, default_value = "1x8x8")]
    pub dims: String,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory written by `gendata`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = bench::DESK_TRAIN_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub bitwidth: u8,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    /// Hidden width when the inputs are flat vectors.
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraversalArg {
    ChannelMajor,
    Keyed,
}

impl From<TraversalArg> for Traversal {
    fn from(t: TraversalArg) -> Self {
        match t {
            TraversalArg::ChannelMajor => Traversal::ChannelMajor,
            TraversalArg::Keyed => Traversal::KeyedPermutation,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the signature bundle (never the model file).
    #[arg(long)]
    pub bundle: PathBuf,
    /// Master secret the per-layer table seeds and ordering keys derive from.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub checkpoints: usize,
    #[arg(long, default_value_t = 1)]
    pub width: usize,
    #[arg(long, value_enum, default_value_t = TraversalArg::Keyed)]
    pub traversal: TraversalArg,
    /// Sensitivity report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Attacked model output.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop once attack-split accuracy is at or below this (default 1/classes).
    #[arg(long)]
    pub stop_acc: Option<f64>,
    #[arg(long, default_value_t = AttackConfig::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    /// Flip this many uniformly random bits instead of attacking.
    #[arg(long)]
    pub random_flips: Option<usize>,
    /// Trace output (defaults to `<out>.trace`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub rounds: usize,
    /// Seed of the first round; round i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub stop_acc: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub width: usize,
    /// Report only this checkpoint count (default: every k).
    #[arg(long)]
    pub checkpoints: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CollisionArgs {
    #[arg(long, default_value_t = 1000)]
    pub len: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    /// Dataset directory; the validation split is the inference batch.
    #[arg(long)]
    pub data: PathBuf,
    /// Timing repetitions (at least 10).
    #[arg(long, default_value_t = 11)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Result of a successful command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Clean,
    Compromised,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Compromised => EXIT_COMPROMISED,
            _ => EXIT_CLEAN,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_ERROR
            } else {
                EXIT_CLEAN
            });
        }
    };
    match run(&cli.command) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

pub fn run(command: &Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Gendata(a) => gendata(a),
        Command::Train(a) => train(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Attack(a) => attack(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Collision(a) => collision(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(match split {
        Split::Train => "train.dsb",
        Split::Validation => "validation.dsb",
        Split::Attack => "attack.dsb",
    })
}

pub fn load_split(dir: &Path, split: Split) -> anyhow::Result<Dataset> {
    let path = split_path(dir, split);
    formats::load_dataset(&path, split).context("loading dataset")
}

fn load_model(path: &Path) -> anyhow::Result<hashtag_core::net::QuantizedModel> {
    formats::load_model(path).context("loading model")
}

fn parse_dims(s: &str) -> anyhow::Result<Vec<usize>> {
    let dims = s
        .split(['x', 'X', ','])
        .map(|d| {
            d.trim()
                .parse::<usize>()
                .with_context(|| format!("bad dimension {d:?} in {s:?}"))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    ensure!(
        matches!(dims.len(), 1 | 3),
        "dims must be `n` or `c x h x w`, got {s:?}"
    );
    Ok(dims)
}

fn config_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".config.json");
    out.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_record<A: Serialize>(path: &Path, command: &'static str, args: &A) -> anyhow::Result<()> {
    write_json(path, &RunRecord::new(command, args)?)
}

/// True when `a` and `b` name the same file, whether or not `b` exists yet.
fn same_file(a: &Path, b: &Path) -> bool {
    let canon = |p: &Path| {
        p.canonicalize().ok().or_else(|| {
            let parent = p
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            Some(parent.canonicalize().ok()?.join(p.file_name()?))
        })
    };
    match (canon(a), canon(b)) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

fn classes_of(data: &Dataset) -> usize {
    data.labels()
        .iter()
        .copied()
        .max()
        .map_or(0, |m| m as usize + 1)
}

fn gendata(a: &GendataArgs) -> anyhow::Result<Outcome> {
    let cfg = BlobConfig {
        classes: a.classes,
        per_class: a.per_class,
        input_dims: parse_dims(&a.dims)?,
        noise: a.noise,
        seed: a.seed,
    };
    let splits = gaussian_blobs(&cfg)?;
    if splits.validation_short {
        eprintln!(
            "warning: {} samples per class is below the validation quota; all of them go to validation",
            a.per_class
        );
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (split, data) in [
        (Split::Train, &splits.train),
        (Split::Validation, &splits.validation),
        (Split::Attack, &splits.attack),
    ] {
        formats::save_dataset(data, &split_path(&a.out, split))?;
    }
    write_record(&a.out.join("config.json"), "gendata", a)?;
    println!(
        "wrote {} train, {} validation, {} attack samples to {}",
        splits.train.len(),
        splits.validation.len(),
        splits.attack.len(),
        a.out.display()
    );
    Ok(Outcome::Done)
}

fn train(a: &TrainArgs) -> anyhow::Result<Outcome> {
    let train = load_split(&a.data, Split::Train)?;
    let validation = load_split(&a.data, Split::Validation)?;
    let classes = classes_of(&train).max(classes_of(&validation));
    ensure!(classes >= 2, "training data needs at least two classes");
    let arch = match *train.input_dims() {
        [c, 8, 8] => Architecture::toy_cnn(c, classes),
        [n] => Architecture::mlp(n, a.hidden, classes),
        ref d => bail!("no toy architecture for inputs {d:?} (expected c x 8 x 8 or flat)"),
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        bitwidth: a.bitwidth,
        learning_rate: a.learning_rate,
        ..TrainConfig::default()
    };
    let model = train_toy(&arch, &train, &cfg)?;
    formats::save_model(&model, &a.out)?;
    write_record(&config_path(&a.out), "train", a)?;
    println!(
        "trained {} layers, {} weights at {} bits; validation accuracy {:.4}",
        model.num_layers(),
        model.weight_count(),
        a.bitwidth,
        model.accuracy(&validation)?
    );
    Ok(Outcome::Done)
}

fn calibrate(a: &CalibrateArgs) -> anyhow::Result<Outcome> {
    ensure!(
        !same_file(&a.model, &a.bundle),
        "refusing to write the signature bundle over the model file {}",
        a.model.display()
    );
    let model = load_model(&a.model)?;
    let validation = load_split(&a.data, Split::Validation)?;
    let report = taylor_sensitivity(&model, &validation)?;
    let checkpoints = select_checkpoints(&report, a.checkpoints)?;
    let bundle = build_bundle(&model, &checkpoints, a.seed, a.width, a.traversal.into())?;
    formats::save_bundle(&bundle, &a.bundle)?;
    write_record(&config_path(&a.bundle), "calibrate", a)?;
    let record = SensitivityRecord::new(&report, &checkpoints);
    if let Some(path) = &a.report {
        write_json(path, &record)?;
    }
    println!(
        "ranking {:?}; checkpoints {:?}",
        report.ranking, checkpoints
    );
    println!(
        "bundle {} ({} bytes, {} weights covered)",
        a.bundle.display(),
        formats::bundle_size(bundle.checkpoints.len(), bundle.width),
        bundle.covered_elements()
    );
    Ok(Outcome::Done)
}

fn attack(a: &AttackArgs) -> anyhow::Result<Outcome> {
    let model = load_model(&a.model)?;
    let data = load_split(&a.data, Split::Attack)?;
    let (attacked, trace) = match a.random_flips {
        Some(n) => random_flip_baseline(&model, &data, n, a.seed)?,
        None => {
            let cfg = AttackConfig {
                stop_acc: a.stop_acc.unwrap_or(1.0 / model.num_classes() as f64),
                max_iters: a.max_iters,
                ..AttackConfig::random_guess(model.num_classes(), a.seed)
            };
            progressive_bfa(&model, &data, &cfg)?
        }
    };
    formats::save_model(&attacked, &a.out)?;
    let trace_path = a.report.clone().unwrap_or_else(|| {
        let mut name = a.out.file_name().map(OsString::from).unwrap_or_default();
        name.push(".trace");
        a.out.with_file_name(name)
    });
    save_trace(&trace, &trace_path)?;
    write_record(&config_path(&a.out), "attack", a)?;
    println!(
        "{} flips; accuracy {:.4} -> {:.4}; {}",
        trace.flips(),
        trace.initial_accuracy,
        trace.terminal_accuracy,
        match (a.random_flips, trace.reached_threshold) {
            (Some(_), _) => "random baseline",
            (None, true) => "threshold reached",
            (None, false) => "iteration cap hit",
        }
    );
    Ok(Outcome::Done)
}

fn verify_cmd(a: &VerifyArgs) -> anyhow::Result<Outcome> {
    let model = load_model(&a.model)?;
    let bundle = formats::load_bundle(&a.bundle).context("loading bundle")?;
    let result = verify(&model, &bundle)?;
    if let Some(path) = &a.report {
        write_json(path, &VerifyRecord::new(&result, a)?)?;
    }
    if result.is_clean() {
        println!(
            "clean: {} checkpoint layers match",
            result.checked_layers.len()
        );
        Ok(Outcome::Clean)
    } else {
        println!(
            "compromised: mismatched layers {:?}",
            result.mismatched_layers
        );
        Ok(Outcome::Compromised)
    }
}

fn eval(a: &EvalArgs) -> anyhow::Result<Outcome> {
    ensure!(a.rounds > 0, "eval needs at least one round");
    let model = load_model(&a.model)?;
    let validation = load_split(&a.data, Split::Validation)?;
    let attack = load_split(&a.data, Split::Attack)?;
    let seeds: Vec<u64> = (0..a.rounds as u64)
        .map(|i| a.seed.wrapping_add(i))
        .collect();
    let stop = a.stop_acc.unwrap_or(1.0 / model.num_classes() as f64);
    let (mut report, _) = evaluate_model(&model, &validation, &attack, &seeds, stop, a.width)?;
    if let Some(k) = a.checkpoints {
        ensure!(
            (1..=model.num_layers()).contains(&k),
            "--checkpoints {k} outside 1..={}",
            model.num_layers()
        );
        report.per_k.retain(|r| r.k == k);
    }
    print!("{}", bench::render_eval(&report));
    if let Some(path) = &a.report {
        write_json(
            path,
            &serde_json::json!({ "config": RunRecord::new("eval", a)?, "result": report }),
        )?;
    }
    Ok(Outcome::Done)
}

fn collision(a: &CollisionArgs) -> anyhow::Result<Outcome> {
    let stats = collision_rate(a.len, a.k, a.trials, a.seed)?;
    println!(
        "len {} k {}: {} collisions in {} trials, rate {:.6} (1/256 = {:.6})",
        a.len,
        a.k,
        stats.collisions,
        stats.trials,
        stats.rate(),
        1.0 / 256.0
    );
    if let Some(path) = &a.report {
        let result = serde_json::json!({
            "collisions": stats.collisions,
            "trials": stats.trials,
            "rate": stats.rate(),
        });
        write_json(
            path,
            &serde_json::json!({ "config": RunRecord::new("collision", a)?, "result": result }),
        )?;
    }
    Ok(Outcome::Done)
}

fn bench_cmd(a: &BenchArgs) -> anyhow::Result<Outcome> {
    let model = load_model(&a.model)?;
    let bundle = formats::load_bundle(&a.bundle).context("loading bundle")?;
    let batch = load_split(&a.data, Split::Validation)?;
    let overhead = overhead_report(&model, &bundle, &batch, a.trials)?;
    let scaling = verify_scaling(&[16_384, 32_768, 49_152, 65_536, 81_920], a.trials, a.seed)?;
    println!(
        "signature {} bytes (materialized tables {} bytes) for {} checkpoints",
        overhead.signature_bytes, overhead.materialized_bytes, overhead.checkpoints
    );
    println!(
        "verify {:.3e} s, inference {:.3e} s over {} samples, ratio {:.4} (median of {})",
        overhead.hash_seconds,
        overhead.inference_seconds,
        batch.len(),
        overhead.hash_over_inference,
        overhead.repetitions
    );
    println!(
        "verify scaling (fastest of each): {:.3e} s per weight, R^2 {:.4} over {:?}",
        scaling.slope, scaling.r_squared, scaling.elements
    );
    if let Some(path) = &a.report {
        write_json(
            path,
            &serde_json::json!({
                "config": RunRecord::new("bench", a)?,
                "result": { "overhead": overhead, "scaling": scaling },
            }),
        )?;
    }
    Ok(Outcome::Done)
}
