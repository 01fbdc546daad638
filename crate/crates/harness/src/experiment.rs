//! Teacher training, multi-seed runs, strategy comparisons and sweeps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use dcs_core::checkpoint::{Checkpoint, TrainingMetadata};
use dcs_core::config::{DistillationConfig, DEFAULT_ALPHA_GRID, DEFAULT_LAMBDA_GRID};
use dcs_core::data::{build_task, transfer_pair, LabeledDataset};
use dcs_core::engine::{run_dcs, EpochMetrics, RunOutcome, WeightingStrategy};
use dcs_core::metrics::mean_stdev;
use dcs_core::model::{build_model, ClassifierModel};
use dcs_core::{Error, Result};
use rayon::prelude::*;

/// Strategies of a comparison, in report order.
pub const COMPARED_STRATEGIES: [WeightingStrategy; 5] = [
    WeightingStrategy::VanillaFt,
    WeightingStrategy::PureKd,
    WeightingStrategy::Dcs,
    WeightingStrategy::DcsReverse,
    WeightingStrategy::DcsRandom,
];

/// Train/dev data for a config, plus the pre-training source when configured.
#[derive(Clone, Debug)]
pub struct Task {
    pub train: LabeledDataset,
    pub dev: LabeledDataset,
    pub source: Option<LabeledDataset>,
}

impl Task {
    pub fn load(config: &DistillationConfig) -> Result<Task> {
        config.validate()?;
        match &config.pretrain {
            Some(p) => {
                let pair = transfer_pair(&config.task, p.n_source, p.shift)?;
                Ok(Task {
                    train: pair.target_train,
                    dev: pair.target_dev,
                    source: Some(pair.source),
                })
            }
            None => {
                let (train, dev) = build_task(&config.task)?;
                Ok(Task {
                    train,
                    dev,
                    source: None,
                })
            }
        }
    }
}

fn vanilla(config: &DistillationConfig, epochs: usize) -> DistillationConfig {
    let mut c = config.clone();
    c.strategy = WeightingStrategy::VanillaFt;
    c.alpha = 1.0;
    c.epochs = epochs;
    c
}

/// Fresh weights for `seed`, pre-trained on the source task when configured.
pub fn initial_model(config: &DistillationConfig, task: &Task, seed: u64) -> Result<ClassifierModel> {
    let model = build_model(&config.architecture, seed)?;
    match (&config.pretrain, &task.source) {
        (Some(p), Some(source)) if p.epochs > 0 => {
            let pc = vanilla(config, p.epochs);
            Ok(run_dcs(None, &model, source, None, &pc, seed)?.student)
        }
        _ => Ok(model),
    }
}

/// A fine-tuned teacher and the run that produced it.
pub struct TrainedTeacher {
    pub model: ClassifierModel,
    pub outcome: RunOutcome,
}

impl TrainedTeacher {
    pub fn checkpoint(&self, config: &DistillationConfig) -> Checkpoint {
        Checkpoint::from_model(&self.model, teacher_metadata(config))
    }
}

fn teacher_metadata(config: &DistillationConfig) -> TrainingMetadata {
    TrainingMetadata {
        epochs: config.teacher_epochs,
        seed: config.teacher_seed,
        task_id: config.task.id(),
    }
}

/// Plain fine-tuning (no teacher, alpha = 1) for `teacher_epochs` epochs.
pub fn train_teacher(config: &DistillationConfig, task: &Task) -> Result<TrainedTeacher> {
    if config.teacher_epochs == 0 {
        return Err(Error::config("teacher_epochs must be positive"));
    }
    let seed = config.teacher_seed;
    let init = initial_model(config, task, seed)?;
    let tc = vanilla(config, config.teacher_epochs);
    let outcome = run_dcs(None, &init, &task.train, Some(&task.dev), &tc, seed)?;
    Ok(TrainedTeacher {
        model: outcome.student.clone(),
        outcome,
    })
}

/// Loads a teacher checkpoint and checks it was trained for this config.
pub fn load_teacher(path: &Path, config: &DistillationConfig) -> Result<ClassifierModel> {
    let ck = Checkpoint::load(path)?;
    if ck.architecture != config.architecture {
        return Err(Error::config(format!(
            "teacher at {} has architecture {} but the config asks for {}",
            path.display(),
            ck.architecture.name(),
            config.architecture.name()
        )));
    }
    let expected = teacher_metadata(config);
    if ck.metadata.task_id != expected.task_id {
        return Err(Error::config(format!(
            "teacher at {} was trained on task {} but the config describes {}",
            path.display(),
            ck.metadata.task_id,
            expected.task_id
        )));
    }
    ck.to_model()
}

/// Loads the teacher at `path`, or trains and saves one if the file is absent.
pub fn load_or_train_teacher(
    path: &Path,
    config: &DistillationConfig,
    task: &Task,
) -> Result<ClassifierModel> {
    if path.exists() {
        return load_teacher(path, config);
    }
    let t = train_teacher(config, task)?;
    t.checkpoint(config).save(path)?;
    Ok(t.model)
}

/// One seed of one configuration.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: RunOutcome,
}

impl SeedRun {
    /// Best-epoch dev metrics.
    pub fn best(&self) -> &EpochMetrics {
        self.outcome
            .best_epoch()
            .expect("runs always evaluate on the dev set")
    }
}

/// Mean and sample standard deviation over seeds of best-epoch dev metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub n_seeds: usize,
    pub mean_accuracy: f64,
    pub stdev_accuracy: f64,
    pub mean_mcc: f64,
    pub stdev_mcc: f64,
}

impl Aggregate {
    pub fn from_runs(runs: &[SeedRun]) -> Aggregate {
        let acc: Vec<f64> = runs.iter().map(|r| r.best().dev_accuracy.unwrap()).collect();
        let mcc: Vec<f64> = runs.iter().map(|r| r.best().dev_mcc.unwrap()).collect();
        let (mean_accuracy, stdev_accuracy) = mean_stdev(&acc);
        let (mean_mcc, stdev_mcc) = mean_stdev(&mcc);
        Aggregate {
            n_seeds: runs.len(),
            mean_accuracy,
            stdev_accuracy,
            mean_mcc,
            stdev_mcc,
        }
    }
}

/// All seeds of one configuration.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub label: String,
    pub config: DistillationConfig,
    pub runs: Vec<SeedRun>,
    pub aggregate: Aggregate,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))
}

/// Runs every (configuration, seed) pair concurrently and groups the results
/// by configuration, seeds in config order, whatever the completion order.
pub fn run_points(
    points: &[(String, DistillationConfig)],
    teacher: Option<&ClassifierModel>,
    task: &Task,
) -> Result<Vec<Experiment>> {
    let Some((_, first)) = points.first() else {
        return Ok(Vec::new());
    };
    for (_, c) in points {
        c.validate()?;
        if c.strategy.uses_teacher() && teacher.is_none() {
            return Err(Error::config(format!(
                "strategy {} needs a teacher; run train-teacher first",
                c.strategy
            )));
        }
    }
    let jobs: Vec<(usize, u64)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, (_, c))| c.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<SeedRun> = pool(first.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| {
                let c = &points[i].1;
                let init = initial_model(c, task, seed)?;
                let t = if c.strategy.uses_teacher() { teacher } else { None };
                let outcome = run_dcs(t, &init, &task.train, Some(&task.dev), c, seed)?;
                Ok(SeedRun { seed, outcome })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut results = results.into_iter();
    Ok(points
        .iter()
        .map(|(label, c)| {
            let runs: Vec<SeedRun> = results.by_ref().take(c.seeds.len()).collect();
            Experiment {
                label: label.clone(),
                config: c.clone(),
                aggregate: Aggregate::from_runs(&runs),
                runs,
            }
        })
        .collect())
}

/// Runs `strategy` under `config` for every configured seed.
pub fn run_experiment(
    config: &DistillationConfig,
    strategy: WeightingStrategy,
    teacher: Option<&ClassifierModel>,
    task: &Task,
) -> Result<Experiment> {
    let mut c = config.clone();
    c.strategy = strategy;
    let mut out = run_points(&[(strategy.name().to_string(), c)], teacher, task)?;
    Ok(out.remove(0))
}

/// The five-way comparison, one experiment per strategy.
pub fn compare_strategies(
    config: &DistillationConfig,
    teacher: &ClassifierModel,
    task: &Task,
) -> Result<Vec<Experiment>> {
    let points: Vec<(String, DistillationConfig)> = COMPARED_STRATEGIES
        .iter()
        .map(|&s| {
            let mut c = config.clone();
            c.strategy = s;
            (s.name().to_string(), c)
        })
        .collect();
    run_points(&points, Some(teacher), task)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Lambda,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Lambda => "lambda",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepParam::Alpha => DEFAULT_ALPHA_GRID.to_vec(),
            SweepParam::Lambda => DEFAULT_LAMBDA_GRID.to_vec(),
        }
    }

    fn apply(self, config: &DistillationConfig, value: f64) -> DistillationConfig {
        let mut c = config.clone();
        match self {
            SweepParam::Alpha => c.alpha = value,
            SweepParam::Lambda => c.lambda = value,
        }
        c
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "lambda" => Ok(SweepParam::Lambda),
            other => Err(Error::config(format!(
                "unknown sweep parameter {other:?} (expected alpha or lambda)"
            ))),
        }
    }
}

/// One aggregated point of a sweep curve.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param_value: f64,
    pub mean: f64,
    pub stdev: f64,
    pub n_seeds: usize,
}

pub struct Sweep {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    pub experiments: Vec<Experiment>,
}

/// Sweeps one hyper-parameter over `grid` with `config.strategy`; each row
/// aggregates best-epoch dev accuracy over seeds.
pub fn sweep(
    config: &DistillationConfig,
    param: SweepParam,
    grid: &[f64],
    teacher: Option<&ClassifierModel>,
    task: &Task,
) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    let points: Vec<(String, DistillationConfig)> = grid
        .iter()
        .map(|&v| (format!("{param}={v}"), param.apply(config, v)))
        .collect();
    let experiments = run_points(&points, teacher, task)?;
    let rows = grid
        .iter()
        .zip(&experiments)
        .map(|(&v, e)| SweepRow {
            param_value: v,
            mean: e.aggregate.mean_accuracy,
            stdev: e.aggregate.stdev_accuracy,
            n_seeds: e.aggregate.n_seeds,
        })
        .collect();
    Ok(Sweep {
        param,
        rows,
        experiments,
    })
}

/// Parses a comma-separated list such as `1,2,3` or `0.1, 0.5`.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<T>()
                .map_err(|e| Error::config(format!("bad list item {t:?}: {e}")))
        })
        .collect()
}

/// Process exit code for an error: 2 configuration, 3 data, 4 numerical
/// abort, 1 for I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Dimension(_) => 2,
        Error::Data(_) => 3,
        Error::NonFinite { .. } => 4,
        Error::Persistence { .. } => 1,
    }
}
