use serde::{Deserialize, Serialize};

use crate::data::TaskSpec;
use crate::engine::WeightingStrategy;
use crate::error::{Error, Result};
use crate::losses::{check_alpha, check_lambda};
use crate::model::ArchitectureDescriptor;
use crate::optim::OptimizerKind;

/// Grid of convex mixing weights swept by default.
pub const DEFAULT_ALPHA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
/// Grid of discordance weights swept by default.
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [2.0, 3.0, 4.0, 5.0, 6.0];
/// Batch sizes in the search space.
pub const BATCH_SIZE_GRID: [usize; 2] = [8, 16];
/// Learning rates in the search space, scaled up by 1000 for small models
/// trained from scratch.
pub const LEARNING_RATE_GRID: [f64; 4] = [1e-2, 2e-2, 1e-3, 2e-3];

/// Pre-train on a large clean source task before fine-tuning on the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub n_source: usize,
    pub epochs: usize,
    /// Domain shift between source and target (see `data::transfer_pair`).
    pub shift: f64,
}

/// Complete recipe for a run; reproducible from this plus a seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillationConfig {
    pub task: TaskSpec,
    pub architecture: ArchitectureDescriptor,
    #[serde(default = "default_strategy")]
    pub strategy: WeightingStrategy,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    pub epochs: usize,
    #[serde(default = "default_teacher_epochs")]
    pub teacher_epochs: usize,
    #[serde(default)]
    pub teacher_seed: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Worker threads for multi-seed runs; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub pretrain: Option<PretrainConfig>,
}

fn default_strategy() -> WeightingStrategy {
    WeightingStrategy::Dcs
}
fn default_alpha() -> f64 {
    0.5
}
fn default_lambda() -> f64 {
    2.0
}
fn default_temperature() -> f64 {
    1.0
}
fn default_teacher_epochs() -> usize {
    2
}
fn default_batch_size() -> usize {
    16
}
fn default_learning_rate() -> f64 {
    1e-2
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

impl DistillationConfig {
    /// A config with every optional field at its default.
    pub fn new(task: TaskSpec, architecture: ArchitectureDescriptor, epochs: usize) -> Self {
        DistillationConfig {
            task,
            architecture,
            strategy: default_strategy(),
            alpha: default_alpha(),
            lambda: default_lambda(),
            temperature: default_temperature(),
            epochs,
            teacher_epochs: default_teacher_epochs(),
            teacher_seed: 0,
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            optimizer: OptimizerKind::Adam,
            seeds: default_seeds(),
            workers: 0,
            pretrain: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.architecture.validate()?;
        check_alpha(self.alpha)?;
        check_lambda(self.lambda)?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if self.architecture.n_classes() != self.task.n_classes {
            return Err(Error::config(format!(
                "architecture has {} classes but the task has {}",
                self.architecture.n_classes(),
                self.task.n_classes
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Parses and validates a JSON config; unknown keys are rejected.
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: DistillationConfig =
            serde_json::from_str(s).map_err(|e| Error::config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GeneratorKind;

    fn base() -> DistillationConfig {
        DistillationConfig::new(
            TaskSpec {
                generator: GeneratorKind::GaussianMixture {
                    dim: 4,
                    separation: 3.0,
                },
                n_train: 40,
                n_dev: 40,
                n_classes: 2,
                label_noise: 0.1,
                seed: 0,
            },
            ArchitectureDescriptor::Linear {
                input_dim: 4,
                n_classes: 2,
            },
            3,
        )
    }

    #[test]
    fn defaults_follow_search_space() {
        let c = base();
        assert_eq!(c.temperature, 1.0);
        assert_eq!(c.lambda, 2.0);
        assert_eq!(c.teacher_epochs, 2);
        assert!(BATCH_SIZE_GRID.contains(&c.batch_size));
        assert!(LEARNING_RATE_GRID.contains(&c.learning_rate));
        assert!(DEFAULT_ALPHA_GRID.contains(&c.alpha));
    }

    #[test]
    fn json_fixed_point() {
        let s1 = base().to_json().unwrap();
        let s2 = DistillationConfig::from_json(&s1).unwrap().to_json().unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn minimal_json_gets_defaults() {
        let json = r#"{
            "task": {"generator": {"kind": "gaussian_mixture", "dim": 4, "separation": 3.0},
                     "n_train": 40, "n_dev": 40, "n_classes": 2, "label_noise": 0.1, "seed": 0},
            "architecture": {"kind": "linear", "input_dim": 4, "n_classes": 2},
            "epochs": 3
        }"#;
        assert_eq!(DistillationConfig::from_json(json).unwrap(), base());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = base();
        c.lambda = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = base();
        c.alpha = 1.2;
        assert!(c.validate().is_err());
        let mut c = base();
        c.temperature = 0.0;
        assert!(c.validate().is_err());
        let mut c = base();
        c.architecture = ArchitectureDescriptor::Linear {
            input_dim: 4,
            n_classes: 3,
        };
        assert!(c.validate().is_err());
        let mut v: serde_json::Value = serde_json::from_str(&base().to_json().unwrap()).unwrap();
        v["surprise"] = serde_json::json!(true);
        assert!(DistillationConfig::from_json(&v.to_string()).is_err());
    }
}
