use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dcs_core::config::DistillationConfig;
use dcs_core::data::{GeneratorKind, TaskSpec};
use dcs_core::model::ArchitectureDescriptor;

fn dcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcs")).args(args).output().unwrap()
}

fn write_config(dir: &Path) -> String {
    let mut c = DistillationConfig::new(
        TaskSpec {
            generator: GeneratorKind::GaussianMixture {
                dim: 3,
                separation: 3.0,
            },
            n_train: 40,
            n_dev: 40,
            n_classes: 2,
            label_noise: 0.1,
            seed: 2,
        },
        ArchitectureDescriptor::Linear {
            input_dim: 3,
            n_classes: 2,
        },
        2,
    );
    c.seeds = vec![1, 2];
    let path = dir.join("config.json");
    fs::write(&path, c.to_json().unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_without_teacher_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("runs");
    let o = dcs(&["run", "--config", &cfg, "--strategy", "dcs", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train-teacher"));
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"epochs": 3}"#).unwrap();
    let o = dcs(&["train-teacher", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_text_data_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.jsonl");
    fs::write(&data, "{\"text\": \"good\", \"label\": \"pos\"}\nnot json\n").unwrap();
    let mut c: DistillationConfig =
        serde_json::from_str(&fs::read_to_string(write_config(dir.path())).unwrap()).unwrap();
    c.task.generator = GeneratorKind::TextFile {
        path: data,
        hash_dim: 3,
    };
    let cfg = dir.path().join("text.json");
    fs::write(&cfg, c.to_json().unwrap()).unwrap();
    let o = dcs(&["train-teacher", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_config_file_exits_with_persistence_code() {
    let o = dcs(&["train-teacher", "--config", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn teacher_run_sweep_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("runs");
    let out_s = out.to_str().unwrap();

    assert!(dcs(&["train-teacher", "--config", &cfg, "--out", out_s]).status.success());
    assert!(out.join("teacher.json").exists());

    let o = dcs(&["run", "--config", &cfg, "--strategy", "dcs", "--seeds", "4,5,6", "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for s in [4, 5, 6] {
        assert!(out.join(format!("dcs/seed{s}/metrics.csv")).exists());
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("3 seeds"));

    let o = dcs(&["sweep", "--config", &cfg, "--param", "lambda", "--grid", "2,3", "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("sweep_lambda.csv").exists());

    let o = dcs(&["report", "--run-dir", out_s]);
    assert!(o.status.success());
    assert!(out.join("report.txt").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn unknown_strategy_is_a_usage_error() {
    let o = dcs(&["run", "--config", "x.json", "--strategy", "boosting"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("boosting"));
}
