//! Run artifacts on disk.
//!
//! ```text
//! <out>/manifest.json                 schema version, command, config
//! <out>/teacher.json                  teacher checkpoint
//! <out>/compare.csv                   one row per strategy
//! <out>/sweep_<param>.csv             one row per grid point
//! <out>/<experiment>/summary.csv      aggregate over seeds
//! <out>/<experiment>/seeds.csv        best-epoch metrics per seed
//! <out>/<experiment>/seed<k>/metrics.csv
//! <out>/<experiment>/seed<k>/weights_epoch<N>.csv
//! <out>/<experiment>/seed<k>/student.json
//! ```
//!
//! Column sets are fixed for a given [`CSV_SCHEMA_VERSION`].

use std::fs;
use std::path::{Path, PathBuf};

use dcs_core::checkpoint::{Checkpoint, TrainingMetadata};
use dcs_core::config::DistillationConfig;
use dcs_core::engine::EpochMetrics;
use dcs_core::{Error, Result};

use crate::experiment::{Aggregate, Experiment, Sweep};

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const METRICS_COLUMNS: [&str; 10] = [
    "seed",
    "epoch",
    "total_loss",
    "ce_loss",
    "kd_loss",
    "train_accuracy",
    "dev_accuracy",
    "dev_mcc",
    "disagreements",
    "emphasized",
];
pub const WEIGHTS_COLUMNS: [&str; 2] = ["sample_id", "weight"];
pub const SEEDS_COLUMNS: [&str; 4] = ["seed", "best_epoch", "dev_accuracy", "dev_mcc"];
pub const SUMMARY_COLUMNS: [&str; 6] = [
    "experiment",
    "n_seeds",
    "mean_dev_accuracy",
    "stdev_dev_accuracy",
    "mean_dev_mcc",
    "stdev_dev_mcc",
];
pub const SWEEP_COLUMNS: [&str; 4] = ["param_value", "mean", "stdev", "n_seeds"];

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::persistence(dir, e))
}

/// Writes a CSV file with a header row.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let err = |e: csv::Error| Error::persistence(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(err)?;
    }
    w.flush().map_err(|e| Error::persistence(path, e))
}

/// Reads a CSV file into its header and string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let err = |e: csv::Error| Error::persistence(path, e);
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let header = r.headers().map_err(err)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(err)?;
    Ok((header, rows))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn metrics_row(seed: u64, m: &EpochMetrics) -> Vec<String> {
    vec![
        seed.to_string(),
        m.epoch.to_string(),
        m.total_loss.to_string(),
        m.ce_loss.to_string(),
        m.kd_loss.to_string(),
        m.train_accuracy.to_string(),
        opt(m.dev_accuracy),
        opt(m.dev_mcc),
        opt(m.disagreements),
        m.emphasized.to_string(),
    ]
}

fn aggregate_row(label: &str, a: &Aggregate) -> Vec<String> {
    vec![
        label.to_string(),
        a.n_seeds.to_string(),
        a.mean_accuracy.to_string(),
        a.stdev_accuracy.to_string(),
        a.mean_mcc.to_string(),
        a.stdev_mcc.to_string(),
    ]
}

pub fn seed_dir(experiment_dir: &Path, seed: u64) -> PathBuf {
    experiment_dir.join(format!("seed{seed}"))
}

/// Writes every artifact of one experiment under `dir`.
pub fn write_experiment(dir: &Path, exp: &Experiment) -> Result<()> {
    for run in &exp.runs {
        let sd = seed_dir(dir, run.seed);
        write_csv(
            &sd.join("metrics.csv"),
            &METRICS_COLUMNS,
            run.outcome.history.iter().map(|r| metrics_row(run.seed, &r.metrics)),
        )?;
        for (epoch, rec) in run.outcome.history.iter().enumerate() {
            write_csv(
                &sd.join(format!("weights_epoch{epoch}.csv")),
                &WEIGHTS_COLUMNS,
                rec.weights
                    .weights()
                    .iter()
                    .enumerate()
                    .map(|(i, w)| vec![i.to_string(), w.to_string()]),
            )?;
        }
        let meta = TrainingMetadata {
            epochs: exp.config.epochs,
            seed: run.seed,
            task_id: exp.config.task.id(),
        };
        Checkpoint::from_model(&run.outcome.student, meta).save(&sd.join("student.json"))?;
    }
    write_csv(
        &dir.join("seeds.csv"),
        &SEEDS_COLUMNS,
        exp.runs.iter().map(|r| {
            let b = r.best();
            vec![
                r.seed.to_string(),
                b.epoch.to_string(),
                opt(b.dev_accuracy),
                opt(b.dev_mcc),
            ]
        }),
    )?;
    write_csv(
        &dir.join("summary.csv"),
        &SUMMARY_COLUMNS,
        [aggregate_row(&exp.label, &exp.aggregate)],
    )
}

/// `compare.csv` plus one directory per strategy.
pub fn write_comparison(out: &Path, experiments: &[Experiment]) -> Result<()> {
    for e in experiments {
        write_experiment(&out.join(&e.label), e)?;
    }
    write_csv(
        &out.join("compare.csv"),
        &SUMMARY_COLUMNS,
        experiments.iter().map(|e| aggregate_row(&e.label, &e.aggregate)),
    )
}

/// `sweep_<param>.csv` plus one directory per grid point.
pub fn write_sweep(out: &Path, sweep: &Sweep) -> Result<()> {
    let root = out.join(format!("sweep_{}", sweep.param));
    for e in &sweep.experiments {
        write_experiment(&root.join(&e.label), e)?;
    }
    write_csv(
        &out.join(format!("sweep_{}.csv", sweep.param)),
        &SWEEP_COLUMNS,
        sweep.rows.iter().map(|r| {
            vec![
                r.param_value.to_string(),
                r.mean.to_string(),
                r.stdev.to_string(),
                r.n_seeds.to_string(),
            ]
        }),
    )
}

/// Records what produced a run directory.
pub fn write_manifest(out: &Path, command: &str, config: &DistillationConfig) -> Result<()> {
    create_dir(out)?;
    let manifest = serde_json::json!({
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "command": command,
        "config": config,
    });
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::persistence(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::persistence(&path, e))
}
