//! Text summaries and gnuplot data from a run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dcs_core::{Error, Result};

use crate::output::{read_csv, METRICS_COLUMNS, SUMMARY_COLUMNS, SWEEP_COLUMNS};

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

fn fmt_num(s: &str) -> String {
    match s.parse::<f64>() {
        Ok(v) if s.contains('.') || s.contains('e') => format!("{v:.4}"),
        _ => s.to_string(),
    }
}

fn check_header(path: &Path, header: &[String], expected: &[&str]) -> Result<()> {
    if header.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(Error::data(format!(
            "{} has columns {header:?}, expected {expected:?}",
            path.display()
        )));
    }
    Ok(())
}

fn mean_pm_stdev(rows: &[Vec<String>]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r[0].clone(),
                r[1].clone(),
                format!("{} ± {}", fmt_num(&r[2]), fmt_num(&r[3])),
                format!("{} ± {}", fmt_num(&r[4]), fmt_num(&r[5])),
            ]
        })
        .collect()
}

fn summary_header() -> Vec<String> {
    ["experiment", "seeds", "dev accuracy", "dev MCC"]
        .map(String::from)
        .to_vec()
}

fn write_dat(path: &Path, comment: &str, lines: &[String]) -> Result<()> {
    let mut s = format!("# {comment}\n");
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::persistence(path, e))
}

/// Experiment directories (those holding a `summary.csv`) under `root`.
fn experiment_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("summary.csv").is_file() {
            found.push(dir.clone());
        }
        let entries = fs::read_dir(&dir).map_err(|e| Error::persistence(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::persistence(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Mean dev accuracy per epoch across the seeds of one experiment.
fn learning_curve(dir: &Path) -> Result<Vec<(usize, f64)>> {
    let mut by_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::persistence(dir, e))?;
    let mut seed_dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.csv").is_file())
        .collect();
    seed_dirs.sort();
    for sd in seed_dirs {
        let path = sd.join("metrics.csv");
        let (header, rows) = read_csv(&path)?;
        check_header(&path, &header, &METRICS_COLUMNS)?;
        for r in rows {
            let (Ok(epoch), Ok(acc)) = (r[1].parse::<usize>(), r[6].parse::<f64>()) else {
                continue;
            };
            by_epoch.entry(epoch).or_default().push(acc);
        }
    }
    Ok(by_epoch
        .into_iter()
        .map(|(e, v)| (e, v.iter().sum::<f64>() / v.len() as f64))
        .collect())
}

/// Renders every table found under `run_dir`, writes `report.txt` and
/// gnuplot-ready `.dat` files next to the CSVs, and returns the text.
pub fn report(run_dir: &Path) -> Result<String> {
    if !run_dir.is_dir() {
        return Err(Error::persistence(run_dir, "not a directory"));
    }
    let mut out = String::new();
    let _ = writeln!(out, "Run directory: {}\n", run_dir.display());

    let compare = run_dir.join("compare.csv");
    if compare.is_file() {
        let (header, rows) = read_csv(&compare)?;
        check_header(&compare, &header, &SUMMARY_COLUMNS)?;
        let _ = writeln!(out, "Strategy comparison (best-epoch dev metrics, mean ± stdev)");
        out.push_str(&table(&summary_header(), &mean_pm_stdev(&rows)));
        out.push('\n');
        let lines: Vec<String> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{i} {} {} {}", r[0], r[2], r[3]))
            .collect();
        write_dat(
            &run_dir.join("compare.dat"),
            "index strategy mean_dev_accuracy stdev_dev_accuracy",
            &lines,
        )?;
    }

    for param in ["alpha", "lambda"] {
        let path = run_dir.join(format!("sweep_{param}.csv"));
        if !path.is_file() {
            continue;
        }
        let (header, rows) = read_csv(&path)?;
        check_header(&path, &header, &SWEEP_COLUMNS)?;
        let _ = writeln!(out, "Sweep over {param} (best-epoch dev accuracy)");
        let shown: Vec<Vec<String>> = rows
            .iter()
            .map(|r| vec![r[0].clone(), fmt_num(&r[1]), fmt_num(&r[2]), r[3].clone()])
            .collect();
        out.push_str(&table(&header, &shown));
        out.push('\n');
        let lines: Vec<String> = rows.iter().map(|r| format!("{} {} {}", r[0], r[1], r[2])).collect();
        write_dat(
            &run_dir.join(format!("sweep_{param}.dat")),
            &format!("{param} mean stdev"),
            &lines,
        )?;
    }

    let dirs = experiment_dirs(run_dir)?;
    if !dirs.is_empty() {
        let mut rows = Vec::new();
        for dir in &dirs {
            let path = dir.join("summary.csv");
            let (header, r) = read_csv(&path)?;
            check_header(&path, &header, &SUMMARY_COLUMNS)?;
            let rel = dir.strip_prefix(run_dir).unwrap_or(dir);
            for mut row in r {
                row[0] = rel.display().to_string();
                rows.push(row);
            }
            let curve = learning_curve(dir)?;
            let lines: Vec<String> = curve.iter().map(|(e, a)| format!("{e} {a}")).collect();
            write_dat(&dir.join("curve.dat"), "epoch mean_dev_accuracy", &lines)?;
        }
        let _ = writeln!(out, "Experiments");
        out.push_str(&table(&summary_header(), &mean_pm_stdev(&rows)));
    }

    if out.lines().count() <= 2 {
        return Err(Error::data(format!(
            "{} holds no results (expected compare.csv, sweep_*.csv or summary.csv)",
            run_dir.display()
        )));
    }
    let path = run_dir.join("report.txt");
    fs::write(&path, &out).map_err(|e| Error::persistence(&path, e))?;
    Ok(out)
}
