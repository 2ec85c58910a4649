use std::path::Path;
use std::process::{Command, Output};

use fovlab::factors::Sigma;
use fovlab::runner::ExperimentConfig;

fn fovlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fovlab")).current_dir(dir).env("RUST_LOG", "warn").args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig {
        sigmas: vec![Sigma::Finite(0.2)],
        seeds: vec![1, 2],
        eval_samples: 300,
        adaptation_labels: vec![50],
        ..Default::default()
    };
    cfg.train.steps = 30;
    cfg.train.hidden = 16;
    cfg.train.log_every = 10;
    let path = dir.join("tiny.json");
    std::fs::write(&path, cfg.to_json_pretty()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn theory_demo_prints_the_gap() {
    let dir = tempfile::tempdir().unwrap();
    let o = fovlab(dir.path(), &["theory-demo", "--rho", "0.8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    // -0.5 ln(1 - 0.64)
    assert!(stdout(&o).contains("gap 0.5108"), "{}", stdout(&o));
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = fovlab(dir.path(), &["--config", "missing.json", "sweep"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));

    let o = fovlab(dir.path(), &["sweep", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.json"), "{\"version\": 1, \"sigmas\": ").unwrap();
    let o = fovlab(dir.path(), &["--config", "bad.json", "sweep"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json"), "{}", stderr(&o));
}

#[test]
fn default_config_round_trips_through_the_loader() {
    let dir = tempfile::tempdir().unwrap();
    let o = fovlab(dir.path(), &["default-config"]);
    assert!(o.status.success());
    assert_eq!(ExperimentConfig::from_json(&stdout(&o)).unwrap(), ExperimentConfig::default());
}

#[test]
fn sweep_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = fovlab(dir.path(), &["--config", &cfg, "--jobs", "2", "sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("2 cells trained, 0 skipped"));

    let o = fovlab(dir.path(), &["--config", &cfg, "sweep"]);
    assert!(stdout(&o).contains("0 cells trained, 2 skipped"));

    let o = fovlab(dir.path(), &["summarize"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.trim_start().starts_with("models") && l.contains("2/2")));
    assert!(dir.path().join("out/summary.csv").exists());
    assert!(dir.path().join("out/summary.txt").exists());
}

#[test]
fn single_model_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = |args: &[&str]| {
        let mut full = vec!["--config", cfg.as_str(), "--seed", "3"];
        full.extend_from_slice(args);
        let o = fovlab(dir.path(), &full);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        stdout(&o)
    };

    run(&["--out", "data", "generate-dataset", "--samples", "20", "--pgm", "2"]);
    let lines = std::fs::read_to_string(dir.path().join("data/dataset.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 21);
    assert!(dir.path().join("data/images/00001.pgm").exists());

    let text = run(&["--out", "m", "train", "--objective", "ada_gvae"]);
    assert!(text.contains("ada_gvae-b4-s0.2-seed3"), "{text}");
    assert!(dir.path().join("m/trace.csv").exists());

    let text = run(&["--out", "eval", "evaluate", "--model", "m/model.json"]);
    assert!(text.contains("correlated unfairness"), "{text}");
    assert!(dir.path().join("eval/report.json").exists());

    let text = run(&["--out", "adapt", "adapt", "--model", "m/model.json", "--labels", "40"]);
    assert!(text.contains("substituted latent dims") && text.contains("after:"), "{text}");

    let text = run(&["--out", "tr", "traverse", "--model", "m/model.json", "--dim", "1", "--steps", "5", "--base", "0,1,2,3,1"]);
    assert!(text.contains("traversal-dim1.pgm"));
    let strip = std::fs::read(dir.path().join("tr/traversal-dim1.pgm")).unwrap();
    assert!(strip.starts_with(b"P5"));

    let o = fovlab(dir.path(), &["--config", &cfg, "adapt", "--model", "m/model.json", "--labels", "1"]);
    assert!(!o.status.success());
}
