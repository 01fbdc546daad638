//! Cross-entropy, distillation and weighted-distillation losses.
//!
//! The distillation term for one sample is the cross-entropy between the
//! teacher distribution `p = softmax(teacher / T)` and the student
//! distribution `q = softmax(student / T)`, i.e. `-Σ_c p_c log q_c`. Batch
//! losses are means over samples. Teacher logits enter as plain [`Tensor`]s,
//! so no gradient can ever flow back to the teacher.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{softmax, Tape, Tensor, Var};

/// Scalar values of one evaluation of the combined objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub kd: f64,
    pub alpha: f64,
    pub per_sample_kd: Vec<f64>,
}

/// Per-sample loss weights for the distillation term.
///
/// Each weight is either 1 or the active `lambda`. A vector with no `lambda`
/// is all ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleWeightVector {
    weights: Vec<f64>,
    lambda: Option<f64>,
    epoch_assigned: usize,
}

impl SampleWeightVector {
    pub fn uniform(n: usize, epoch: usize) -> Self {
        SampleWeightVector {
            weights: vec![1.0; n],
            lambda: None,
            epoch_assigned: epoch,
        }
    }

    /// `lambda` where `emphasized[i]`, 1 elsewhere. Requires `lambda > 1`.
    pub fn from_mask(emphasized: &[bool], lambda: f64, epoch: usize) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(SampleWeightVector {
            weights: emphasized
                .iter()
                .map(|&e| if e { lambda } else { 1.0 })
                .collect(),
            lambda: Some(lambda),
            epoch_assigned: epoch,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn epoch_assigned(&self) -> usize {
        self.epoch_assigned
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.iter().all(|&w| w == 1.0)
    }

    /// Number of samples carrying the emphasized weight.
    pub fn emphasized_count(&self) -> usize {
        match self.lambda {
            Some(l) => self.weights.iter().filter(|&&w| w == l).count(),
            None => 0,
        }
    }

    /// Weights for the given positions, in order.
    pub fn gather(&self, positions: &[usize]) -> Vec<f64> {
        positions.iter().map(|&i| self.weights[i]).collect()
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 1.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("lambda must be > 1, got {lambda}")))
    }
}

/// A distillation term on the tape along with its per-sample values.
#[derive(Clone, Debug)]
pub struct KdLoss {
    pub value: Var,
    pub per_sample: Vec<f64>,
}

fn logits_dims(tape: &Tape, logits: Var) -> Result<(usize, usize)> {
    match tape.shape(logits)[..] {
        [b, c] => Ok((b, c)),
        ref s => Err(Error::dim(format!("logits must be [batch, classes], got {s:?}"))),
    }
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(tape: &Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, c) = logits_dims(tape, logits)?;
    if labels.len() != b {
        return Err(Error::dim(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    let mut onehot = vec![0.0; b * c];
    for (row, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::data(format!(
                "label {label} of batch sample {row} is outside [0, {c})"
            )));
        }
        onehot[row * c + label] = 1.0;
    }
    let onehot = tape.constant(Tensor::new(vec![b, c], onehot)?);
    let logp = tape.log_softmax(logits, 1.0)?;
    let picked = tape.sum_last(tape.mul(onehot, logp)?)?;
    Ok(tape.scale(tape.mean(picked), -1.0))
}

fn per_sample_kd(
    tape: &Tape,
    teacher_logits: &Tensor,
    student_logits: Var,
    temperature: f64,
) -> Result<Var> {
    let shape = tape.shape(student_logits);
    if teacher_logits.shape() != shape.as_slice() || shape.len() != 2 {
        return Err(Error::dim(format!(
            "teacher logits {:?} vs student logits {shape:?}",
            teacher_logits.shape()
        )));
    }
    let p = tape.constant(softmax(teacher_logits, temperature)?);
    let logq = tape.log_softmax(student_logits, temperature)?;
    let cross = tape.sum_last(tape.mul(p, logq)?)?;
    Ok(tape.scale(cross, -1.0))
}

/// Batch mean of `-Σ_c p_c log q_c`.
pub fn kd_loss(
    tape: &Tape,
    teacher_logits: &Tensor,
    student_logits: Var,
    temperature: f64,
) -> Result<KdLoss> {
    let ps = per_sample_kd(tape, teacher_logits, student_logits, temperature)?;
    Ok(KdLoss {
        value: tape.mean(ps),
        per_sample: tape.value(ps).data().to_vec(),
    })
}

/// Batch mean of `w_i · kd_i`. Weights are absolute, never renormalized.
pub fn weighted_kd_loss(
    tape: &Tape,
    teacher_logits: &Tensor,
    student_logits: Var,
    weights: &[f64],
    temperature: f64,
) -> Result<KdLoss> {
    let ps = per_sample_kd(tape, teacher_logits, student_logits, temperature)?;
    let b = tape.shape(ps)[0];
    if weights.len() != b {
        return Err(Error::config(format!(
            "{} weights for a batch of {b}",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|&&w| !(w >= 1.0 && w.is_finite())) {
        return Err(Error::config(format!("sample weight {w} is below 1")));
    }
    let w = tape.constant(Tensor::new(vec![b], weights.to_vec())?);
    Ok(KdLoss {
        value: tape.mean(tape.mul(w, ps)?),
        per_sample: tape.value(ps).data().to_vec(),
    })
}

/// `alpha * ce + (1 - alpha) * kd` on plain numbers.
pub fn combine(ce: f64, kd: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(if alpha == 1.0 {
        ce
    } else if alpha == 0.0 {
        kd
    } else {
        alpha * ce + (1.0 - alpha) * kd
    })
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// Convex combination of the two terms on the tape.
///
/// At `alpha == 1` the result is the cross-entropy node itself, and at
/// `alpha == 0` the distillation node itself, so both boundaries are exact.
pub fn total_loss(tape: &Tape, ce: Var, kd: &KdLoss, alpha: f64) -> Result<(Var, LossBreakdown)> {
    check_alpha(alpha)?;
    let total = if alpha == 1.0 {
        ce
    } else if alpha == 0.0 {
        kd.value
    } else {
        tape.add(tape.scale(ce, alpha), tape.scale(kd.value, 1.0 - alpha))?
    };
    let breakdown = LossBreakdown {
        total: tape.value(total).item(),
        ce: tape.value(ce).item(),
        kd: tape.value(kd.value).item(),
        alpha,
        per_sample_kd: kd.per_sample.clone(),
    };
    Ok((total, breakdown))
}
