use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::ClassifierModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Adam (β1 = 0.9, β2 = 0.999, ε = 1e-8) or plain SGD over a model's
/// parameters, with state keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated grads, then clears them.
    /// Parameters without a grad are left untouched.
    pub fn step(&mut self, model: &mut ClassifierModel) {
        self.step += 1;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (name, p) in model.parameters_mut() {
            let Some(g) = p.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, gi) in p.data_mut().iter_mut().zip(&g) {
                        *w -= self.lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = self
                        .moments
                        .entry(name.clone())
                        .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
                    for (((w, gi), mi), vi) in
                        p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                        *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *w -= self.lr * mhat / (vhat.sqrt() + EPS);
                    }
                }
            }
            p.zero_grad();
        }
    }
}
