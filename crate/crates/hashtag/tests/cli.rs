use std::path::Path;
use std::process::{Command, Output};

fn hashtag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hashtag"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// gendata + train into `dir`; returns (data dir, model path).
fn prepared(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data");
    let model = dir.join("m.qnn");
    let out = hashtag(&["gendata", "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{out:?}");
    let out = hashtag(&["train", "--data", s(&data), "--out", s(&model)]);
    assert_eq!(code(&out), 0, "{out:?}");
    (data, model)
}

#[test]
fn full_pipeline_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = prepared(dir.path());
    let bundle = dir.path().join("b.htag");
    let out = hashtag(&[
        "calibrate",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--bundle",
        s(&bundle),
        "--seed",
        "42",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(dir.path().join("b.htag.config.json").exists());

    let out = hashtag(&["verify", "--model", s(&model), "--bundle", s(&bundle)]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(stdout(&out).starts_with("clean"));

    let attacked = dir.path().join("a.qnn");
    let out = hashtag(&[
        "attack",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--out",
        s(&attacked),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let trace = hashtag::trace::load_trace(&dir.path().join("a.qnn.trace")).unwrap();
    assert!(trace.reached_threshold && trace.flips() > 0);

    let report = dir.path().join("v.json");
    let out = hashtag(&[
        "verify",
        "--model",
        s(&attacked),
        "--bundle",
        s(&bundle),
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 2, "{out:?}");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["verdict"], "compromised");
    assert!(!v["mismatched_layers"].as_array().unwrap().is_empty());
}

#[test]
fn gendata_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(
            code(&hashtag(&[
                "gendata",
                "--out",
                s(d),
                "--seed",
                "5",
                "--dims",
                "16"
            ])),
            0
        );
    }
    for f in ["train.dsb", "validation.dsb", "attack.dsb"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn refuses_to_write_the_bundle_over_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = prepared(dir.path());
    let before = std::fs::read(&model).unwrap();
    let out = hashtag(&[
        "calibrate",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--bundle",
        s(&model),
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(std::fs::read(&model).unwrap(), before);
}

#[test]
fn errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.qnn");
    let out = hashtag(&["verify", "--model", s(&missing), "--bundle", s(&missing)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.qnn"));
    assert_eq!(code(&hashtag(&["verify", "--frobnicate"])), 1);
    assert_eq!(code(&hashtag(&[])), 1);
    assert_eq!(code(&hashtag(&["--help"])), 0);
    assert_eq!(code(&hashtag(&["collision", "--k", "0"])), 1);
}

#[test]
fn structural_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = prepared(dir.path());
    let flat = dir.path().join("flat");
    assert_eq!(
        code(&hashtag(&["gendata", "--out", s(&flat), "--dims", "12"])),
        0
    );
    let mlp = dir.path().join("mlp.qnn");
    assert_eq!(
        code(&hashtag(&[
            "train",
            "--data",
            s(&flat),
            "--out",
            s(&mlp),
            "--epochs",
            "3"
        ])),
        0
    );
    let bundle = dir.path().join("b.htag");
    let out = hashtag(&[
        "calibrate",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--bundle",
        s(&bundle),
        "--seed",
        "3",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        code(&hashtag(&[
            "verify",
            "--model",
            s(&mlp),
            "--bundle",
            s(&bundle)
        ])),
        1
    );
}

#[test]
fn collision_rate_is_near_one_in_256() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("c.json");
    let out = hashtag(&[
        "collision",
        "--k",
        "3",
        "--trials",
        "1000000",
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let rate = v["result"]["rate"].as_f64().unwrap();
    assert!((0.003..=0.005).contains(&rate), "rate {rate}");
    assert_eq!(v["config"]["command"], "collision");
}

#[test]
fn eval_and_bench_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = prepared(dir.path());
    let report = dir.path().join("e.json");
    let out = hashtag(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--rounds",
        "4",
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["result"]["rounds"], 4);
    assert_eq!(v["result"]["per_k"].as_array().unwrap().len(), 6);

    let bundle = dir.path().join("b.htag");
    let out = hashtag(&[
        "calibrate",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--bundle",
        s(&bundle),
        "--seed",
        "9",
    ]);
    assert_eq!(code(&out), 0);
    let report = dir.path().join("bench.json");
    let out = hashtag(&[
        "bench",
        "--model",
        s(&model),
        "--bundle",
        s(&bundle),
        "--data",
        s(&data),
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["result"]["overhead"]["checkpoints"], 3);
    assert!(v["result"]["overhead"]["hash_seconds"].as_f64().unwrap() > 0.0);
}
