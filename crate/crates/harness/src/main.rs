use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dcs_core::config::DistillationConfig;
use dcs_core::engine::WeightingStrategy;
use dcs_core::{Error, Result};
use dcs_harness::experiment::{
    self, exit_code, load_or_train_teacher, load_teacher, parse_list, SweepParam, Task,
};
use dcs_harness::output;
use dcs_harness::report::report;

#[derive(Parser, Debug)]
#[command(name = "dcs", version, about = "Dynamic corrective self-distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fine-tune a teacher and write <out>/teacher.json
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Distill one strategy over several seeds
    Run {
        #[arg(long)]
        config: PathBuf,
        /// dcs, dcs-reverse, dcs-random, no-weighting, kd or vanilla
        #[arg(long)]
        strategy: WeightingStrategy,
        /// Comma-separated seeds, overriding the config
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Teacher checkpoint (default <out>/teacher.json)
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Compare vanilla, kd, dcs, dcs-reverse and dcs-random
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Sweep alpha or lambda
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated grid (defaults to 0.1..0.9 for alpha, 2..6 for lambda)
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Print tables for a run directory and write gnuplot data
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<DistillationConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::persistence(path, e))?;
    DistillationConfig::from_json(&text)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainTeacher { config, out } => {
            let config = load_config(&config)?;
            let task = Task::load(&config)?;
            let teacher = experiment::train_teacher(&config, &task)?;
            let path = out.join("teacher.json");
            teacher.checkpoint(&config).save(&path)?;
            output::write_manifest(&out, "train-teacher", &config)?;
            let best = teacher.outcome.best_epoch().and_then(|m| m.dev_accuracy);
            println!(
                "teacher written to {} (final dev accuracy {:.4}, best {:.4})",
                path.display(),
                teacher.outcome.history.last().and_then(|r| r.metrics.dev_accuracy).unwrap_or(f64::NAN),
                best.unwrap_or(f64::NAN)
            );
        }
        Command::Run {
            config,
            strategy,
            seeds,
            out,
            teacher,
        } => {
            let mut config = load_config(&config)?;
            if let Some(s) = seeds {
                config.seeds = parse_list(&s)?;
            }
            config.strategy = strategy;
            config.validate()?;
            let task = Task::load(&config)?;
            let teacher = if strategy.uses_teacher() {
                let path = teacher.unwrap_or_else(|| out.join("teacher.json"));
                if !path.exists() {
                    return Err(Error::config(format!(
                        "strategy {strategy} needs a teacher but {} does not exist; run train-teacher first",
                        path.display()
                    )));
                }
                Some(load_teacher(&path, &config)?)
            } else {
                None
            };
            let exp = experiment::run_experiment(&config, strategy, teacher.as_ref(), &task)?;
            output::write_manifest(&out, "run", &config)?;
            output::write_experiment(&out.join(&exp.label), &exp)?;
            let a = &exp.aggregate;
            println!(
                "{}: dev accuracy {:.4} ± {:.4}, MCC {:.4} ± {:.4} over {} seeds",
                exp.label, a.mean_accuracy, a.stdev_accuracy, a.mean_mcc, a.stdev_mcc, a.n_seeds
            );
        }
        Command::Compare { config, out } => {
            let config = load_config(&config)?;
            let task = Task::load(&config)?;
            let teacher = load_or_train_teacher(&out.join("teacher.json"), &config, &task)?;
            let exps = experiment::compare_strategies(&config, &teacher, &task)?;
            output::write_manifest(&out, "compare", &config)?;
            output::write_comparison(&out, &exps)?;
            print!("{}", report(&out)?);
        }
        Command::Sweep {
            config,
            param,
            grid,
            out,
        } => {
            let config = load_config(&config)?;
            let grid = match grid {
                Some(g) => parse_list(&g)?,
                None => param.default_grid(),
            };
            let task = Task::load(&config)?;
            let teacher = if config.strategy.uses_teacher() {
                Some(load_or_train_teacher(&out.join("teacher.json"), &config, &task)?)
            } else {
                None
            };
            let sweep = experiment::sweep(&config, param, &grid, teacher.as_ref(), &task)?;
            output::write_manifest(&out, "sweep", &config)?;
            output::write_sweep(&out, &sweep)?;
            for r in &sweep.rows {
                println!(
                    "{param}={}: {:.4} ± {:.4} ({} seeds)",
                    r.param_value, r.mean, r.stdev, r.n_seeds
                );
            }
        }
        Command::Report { run_dir } => print!("{}", report(&run_dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
