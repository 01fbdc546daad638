//! Experiment front-end: teacher training, multi-seed runs, strategy
//! comparisons, hyper-parameter sweeps, CSV artifacts and reports.

pub mod experiment;
pub mod output;
pub mod report;

pub use experiment::{
    compare_strategies, run_experiment, sweep, train_teacher, Aggregate, Experiment, SeedRun,
    Sweep, SweepParam, SweepRow, Task,
};
