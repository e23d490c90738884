//! Plain-text attack traces: one `key=value` header line, then one
//! whitespace-separated record per flip. Floats use Rust's shortest
//! round-trip formatting, so a trace survives a write/parse cycle exactly.

use std::fmt::Write as _;
use std::path::Path;

use hashtag_core::attack::{AttackTrace, FlipRecord};

use crate::formats::FormatError;

pub const TRACE_COLUMNS: &str =
    "step layer element bit old new sign_changed loss_after accuracy_after";

pub fn render_trace(t: &AttackTrace) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "# trace seed={} batch_size={} stop_acc={} max_iters={} initial_loss={} initial_accuracy={} terminal_accuracy={} reached_threshold={}",
        t.seed, t.batch_size, t.stop_acc, t.max_iters, t.initial_loss, t.initial_accuracy, t.terminal_accuracy, t.reached_threshold
    )
    .unwrap();
    writeln!(s, "# {TRACE_COLUMNS}").unwrap();
    for r in &t.records {
        writeln!(
            s,
            "{} {} {} {} {} {} {} {} {}",
            r.step,
            r.layer,
            r.element,
            r.bit,
            r.old_value,
            r.new_value,
            r.sign_changed as u8,
            r.loss_after,
            r.accuracy_after
        )
        .unwrap();
    }
    s
}

fn bad(line: usize, msg: impl std::fmt::Display) -> FormatError {
    FormatError::Invalid(format!("trace line {line}: {msg}"))
}

fn field<T: std::str::FromStr>(line: usize, name: &str, v: Option<&str>) -> Result<T, FormatError> {
    v.ok_or_else(|| bad(line, format!("missing {name}")))?
        .parse()
        .map_err(|_| bad(line, format!("bad {name}")))
}

pub fn parse_trace(text: &str) -> Result<AttackTrace, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, header) = lines.next().ok_or_else(|| bad(1, "empty trace"))?;
    let header = header
        .strip_prefix("# trace ")
        .ok_or_else(|| bad(n, "missing trace header"))?;
    let kv: Vec<(&str, &str)> = header
        .split_whitespace()
        .filter_map(|p| p.split_once('='))
        .collect();
    let get = |k: &str| kv.iter().find(|(key, _)| *key == k).map(|&(_, v)| v);
    let mut trace = AttackTrace {
        records: Vec::new(),
        seed: field(n, "seed", get("seed"))?,
        batch_size: field(n, "batch_size", get("batch_size"))?,
        stop_acc: field(n, "stop_acc", get("stop_acc"))?,
        max_iters: field(n, "max_iters", get("max_iters"))?,
        initial_loss: field(n, "initial_loss", get("initial_loss"))?,
        initial_accuracy: field(n, "initial_accuracy", get("initial_accuracy"))?,
        terminal_accuracy: field(n, "terminal_accuracy", get("terminal_accuracy"))?,
        reached_threshold: field(n, "reached_threshold", get("reached_threshold"))?,
    };
    for (n, line) in lines {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let mut f = line.split_whitespace();
        let step = field(n, "step", f.next())?;
        let layer = field(n, "layer", f.next())?;
        let element = field(n, "element", f.next())?;
        let bit = field(n, "bit", f.next())?;
        let old_value = field(n, "old", f.next())?;
        let new_value = field(n, "new", f.next())?;
        let sign_changed = match field::<u8>(n, "sign_changed", f.next())? {
            0 => false,
            1 => true,
            _ => return Err(bad(n, "sign_changed must be 0 or 1")),
        };
        let loss_after = field(n, "loss_after", f.next())?;
        let accuracy_after = field(n, "accuracy_after", f.next())?;
        if f.next().is_some() {
            return Err(bad(n, "extra fields"));
        }
        trace.records.push(FlipRecord {
            step,
            layer,
            element,
            bit,
            old_value,
            new_value,
            sign_changed,
            loss_after,
            accuracy_after,
        });
    }
    Ok(trace)
}

pub fn save_trace(t: &AttackTrace, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, render_trace(t)).map_err(|err| FormatError::Io {
        path: path.display().to_string(),
        err,
    })
}

pub fn load_trace(path: &Path) -> Result<AttackTrace, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|err| FormatError::Io {
        path: path.display().to_string(),
        err,
    })?;
    parse_trace(&text)
}
