//! Versioned JSON checkpoints.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "architecture": { "kind": "mlp", "input_dim": 4, "hidden": [8], "n_classes": 2 },
//!   "parameters": [ { "name": "hidden0.bias", "shape": [8], "data": [0.1, ...] }, ... ],
//!   "metadata": { "epochs": 2, "seed": 0, "task_id": "..." }
//! }
//! ```
//!
//! Floats are written in shortest round-trip decimal form, so loading
//! restores every parameter bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchitectureDescriptor, ClassifierModel};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub seed: u64,
    pub task_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: ArchitectureDescriptor,
    pub parameters: Vec<ParameterEntry>,
    pub metadata: TrainingMetadata,
}

impl Checkpoint {
    pub fn from_model(model: &ClassifierModel, metadata: TrainingMetadata) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            architecture: model.descriptor().clone(),
            parameters: model
                .parameters()
                .iter()
                .map(|(name, t)| ParameterEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            metadata,
        }
    }

    pub fn to_model(&self) -> Result<ClassifierModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut params = BTreeMap::new();
        for p in &self.parameters {
            let t = Tensor::new(p.shape.clone(), p.data.clone())?;
            if params.insert(p.name.clone(), t).is_some() {
                return Err(Error::config(format!("duplicate parameter {}", p.name)));
            }
        }
        ClassifierModel::from_parameters(self.architecture.clone(), params)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::config(format!("bad checkpoint: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::persistence(dir, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::persistence(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::persistence(path, e))?;
        Checkpoint::from_json(&s).map_err(|e| Error::persistence(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    fn meta() -> TrainingMetadata {
        TrainingMetadata {
            epochs: 2,
            seed: 5,
            task_id: "t".into(),
        }
    }

    #[test]
    fn json_round_trip_is_bitwise() {
        let d = ArchitectureDescriptor::Mlp {
            input_dim: 5,
            hidden: vec![7, 3],
            n_classes: 3,
        };
        let m = build_model(&d, 11).unwrap();
        let ck = Checkpoint::from_model(&m, meta());
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let m2 = back.to_model().unwrap();
        assert_eq!(m2.parameter_hash(), m.parameter_hash());
    }

    #[test]
    fn wrong_version_and_unknown_keys_rejected() {
        let d = ArchitectureDescriptor::Linear {
            input_dim: 2,
            n_classes: 2,
        };
        let mut ck = Checkpoint::from_model(&build_model(&d, 0).unwrap(), meta());
        ck.format_version = 99;
        assert!(ck.to_model().is_err());
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn missing_file_is_persistence_error() {
        let err = Checkpoint::load(Path::new("/nonexistent/dir/ck.json")).unwrap_err();
        assert!(matches!(err, Error::Persistence { .. }));
    }
}
