use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[synth]
n_normal = 60
n_ponzi = 20
n_background = 150
n_services = 5
investors_per_scheme = 6
seed = 3

[sampler]
alpha = 100
beta = 5
seed = 3

[experiment]
channels = ["hyper", "hyper-homo"]
repeats = 2
seed = 3

[experiment.model]
hidden_dim = 8
epochs = 15
"#;

fn hyperdet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperdet"))
        .current_dir(dir)
        .env("HYPERDET_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn small_workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn synth(dir: &Path) {
    let out = hyperdet(dir, &["--config", "small.toml", "--out", "corpus", "synth"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyperdet(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_transactions_exit_3_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyperdet(dir.path(), &["--transactions", "nope.jsonl", "--out", "o", "ingest"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "missing_input");
    assert_eq!(err["exit_code"], 3);
    assert!(err["message"].as_str().unwrap().contains("nope.jsonl"));
}

#[test]
fn bad_config_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[sampler]\ngamma = 2\n").unwrap();
    let out = hyperdet(dir.path(), &["--config", "bad.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "config");

    let out = hyperdet(dir.path(), &["--alpha", "0", "sample"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn malformed_report_input_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("x.json"), "[1, 2]").unwrap();
    let out = hyperdet(dir.path(), &["--out", "r", "report", "--input", "x.json"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn sample_is_reproducible() {
    let ws = small_workspace();
    let dir = ws.path();
    synth(dir);
    let args = |out: &'static str| {
        vec![
            "--transactions", "corpus/transactions.jsonl", "--labels", "corpus/labels.csv",
            "--alpha", "100", "--beta", "5", "--seed", "7", "--out", out, "sample",
        ]
    };
    for out in ["s1", "s2"] {
        let o = hyperdet(dir, &args(out));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["sampled_hypergraph.json", "sampled_homogeneous.json", "table1.json"] {
        let a = fs::read(dir.join("s1").join(f)).unwrap();
        let b = fs::read(dir.join("s2").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn resolved_config_echo_reflects_overrides() {
    let ws = small_workspace();
    let dir = ws.path();
    synth(dir);
    let o = hyperdet(
        dir,
        &["--config", "small.toml", "--transactions", "corpus/transactions.jsonl", "--beta", "4", "--out", "ing", "ingest"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let echo: toml::Value = toml::from_str(&fs::read_to_string(dir.join("ing/resolved_config.toml")).unwrap()).unwrap();
    assert_eq!(echo["sampler"]["beta"].as_integer(), Some(4));
    assert_eq!(echo["sampler"]["alpha"].as_integer(), Some(100));
    assert_eq!(echo["synth"]["n_ponzi"].as_integer(), Some(20));
    let tx = echo["paths"]["transactions"].as_str().unwrap();
    assert!(Path::new(tx).is_absolute());

    // the echo is itself a valid config
    let o = hyperdet(dir, &["--config", "ing/resolved_config.toml", "--out", "ing2", "ingest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(dir.join("ing/hypergraph.json")).unwrap(),
        fs::read(dir.join("ing2/hypergraph.json")).unwrap()
    );
}

#[test]
fn pipeline_writes_every_stage() {
    let ws = small_workspace();
    let dir = ws.path();
    let o = hyperdet(dir, &["--config", "small.toml", "--out", "run", "pipeline"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.join("run");
    for f in [
        "resolved_config.toml",
        "synth/transactions.jsonl",
        "ingest/ingest_report.json",
        "ingest/hypergraph.json",
        "sample/sampled_hypergraph.json",
        "sample/table1.json",
        "features/features.csv",
        "features/features.bin",
        "convert/hyper_homo.triplets",
        "evaluate/experiment.json",
        "report/table.csv",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let table = fs::read_to_string(run.join("report/table.csv")).unwrap();
    assert!(table.contains("Hypergraph"), "{table}");
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("AUC"), "{stdout}");
}
