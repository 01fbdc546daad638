//! The dynamic corrective self-distillation loop.
//!
//! Epoch 0 trains the student on `α·CE + (1−α)·KD` with every sample weight
//! at 1. Every later epoch first compares teacher and student argmax
//! predictions over the whole training set (student parameters as left by the
//! previous epoch), rebuilds the weight vector from that agreement map under
//! the chosen [`WeightingStrategy`], and then trains one pass with the
//! weighted distillation term. The teacher is borrowed immutably for the
//! whole run, and its logits are computed once up front.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::DistillationConfig;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{
    check_lambda, cross_entropy, total_loss, weighted_kd_loss, KdLoss, SampleWeightVector,
};
use crate::metrics::{accuracy, mcc};
use crate::model::{argmax_rows, ClassifierModel};
use crate::optim::Optimizer;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeightingStrategy {
    /// λ on teacher–student discordant samples.
    #[serde(rename = "dcs")]
    Dcs,
    /// λ on concordant samples.
    #[serde(rename = "dcs-reverse")]
    DcsReverse,
    /// λ on a random subset as large as the discordant set.
    #[serde(rename = "dcs-random")]
    DcsRandom,
    /// Distillation with all weights 1.
    #[serde(rename = "no-weighting")]
    NoWeighting,
    /// Cross-entropy only; the teacher is never consulted.
    #[serde(rename = "vanilla")]
    VanillaFt,
    /// Distillation with all weights 1 (the ablation without re-weighting).
    #[serde(rename = "kd")]
    PureKd,
}

impl WeightingStrategy {
    pub const ALL: [WeightingStrategy; 6] = [
        WeightingStrategy::Dcs,
        WeightingStrategy::DcsReverse,
        WeightingStrategy::DcsRandom,
        WeightingStrategy::NoWeighting,
        WeightingStrategy::VanillaFt,
        WeightingStrategy::PureKd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightingStrategy::Dcs => "dcs",
            WeightingStrategy::DcsReverse => "dcs-reverse",
            WeightingStrategy::DcsRandom => "dcs-random",
            WeightingStrategy::NoWeighting => "no-weighting",
            WeightingStrategy::VanillaFt => "vanilla",
            WeightingStrategy::PureKd => "kd",
        }
    }

    pub fn uses_teacher(self) -> bool {
        self != WeightingStrategy::VanillaFt
    }

    /// Whether weights other than 1 can ever be assigned.
    pub fn reweights(self) -> bool {
        matches!(
            self,
            WeightingStrategy::Dcs | WeightingStrategy::DcsReverse | WeightingStrategy::DcsRandom
        )
    }
}

impl fmt::Display for WeightingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightingStrategy::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::config(format!("unknown strategy {s:?}")))
    }
}

/// Teacher vs student predictions over a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementMap {
    pub agree: Vec<bool>,
    pub teacher_pred: Vec<usize>,
    pub student_pred: Vec<usize>,
    pub epoch: usize,
}

impl AgreementMap {
    pub fn from_predictions(teacher_pred: Vec<usize>, student_pred: Vec<usize>, epoch: usize) -> Self {
        let agree = teacher_pred
            .iter()
            .zip(&student_pred)
            .map(|(t, s)| t == s)
            .collect();
        AgreementMap {
            agree,
            teacher_pred,
            student_pred,
            epoch,
        }
    }

    pub fn len(&self) -> usize {
        self.agree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agree.is_empty()
    }

    pub fn disagreements(&self) -> usize {
        self.agree.iter().filter(|a| !**a).count()
    }
}

fn check_compatible(a: &ClassifierModel, b: &ClassifierModel) -> Result<()> {
    let (da, db) = (a.descriptor(), b.descriptor());
    if da.input_width() != db.input_width() || da.n_classes() != db.n_classes() {
        return Err(Error::config(format!(
            "teacher ({}, width {}, {} classes) and student ({}, width {}, {} classes) are incompatible",
            da.name(),
            da.input_width(),
            da.n_classes(),
            db.name(),
            db.input_width(),
            db.n_classes()
        )));
    }
    Ok(())
}

const EVAL_CHUNK: usize = 256;

/// Eval-mode logits over the whole dataset, in sample order.
pub fn dataset_logits(model: &ClassifierModel, ds: &LabeledDataset) -> Result<Tensor> {
    let mut data = Vec::with_capacity(ds.len() * model.n_classes());
    let positions: Vec<usize> = (0..ds.len()).collect();
    for chunk in positions.chunks(EVAL_CHUNK) {
        let (x, _) = ds.batch(chunk)?;
        data.extend_from_slice(model.forward(&x)?.data());
    }
    Tensor::new(vec![ds.len(), model.n_classes()], data)
}

/// Eval-mode argmax predictions over the whole dataset.
pub fn dataset_predictions(model: &ClassifierModel, ds: &LabeledDataset) -> Result<Vec<usize>> {
    Ok(argmax_rows(&dataset_logits(model, ds)?))
}

pub fn compute_agreement(
    teacher: &ClassifierModel,
    student: &ClassifierModel,
    ds: &LabeledDataset,
    epoch: usize,
) -> Result<AgreementMap> {
    check_compatible(teacher, student)?;
    Ok(AgreementMap::from_predictions(
        dataset_predictions(teacher, ds)?,
        dataset_predictions(student, ds)?,
        epoch,
    ))
}

/// Builds the weight vector for one epoch from an agreement map.
pub fn assign_weights(
    agreement: &AgreementMap,
    strategy: WeightingStrategy,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SampleWeightVector> {
    let n = agreement.len();
    let epoch = agreement.epoch;
    match strategy {
        WeightingStrategy::Dcs => {
            let discordant: Vec<bool> = agreement.agree.iter().map(|a| !a).collect();
            SampleWeightVector::from_mask(&discordant, lambda, epoch)
        }
        WeightingStrategy::DcsReverse => SampleWeightVector::from_mask(&agreement.agree, lambda, epoch),
        WeightingStrategy::DcsRandom => {
            check_lambda(lambda)?;
            let budget = agreement.disagreements();
            let mut mask = vec![false; n];
            for i in index::sample(rng, n, budget) {
                mask[i] = true;
            }
            SampleWeightVector::from_mask(&mask, lambda, epoch)
        }
        WeightingStrategy::NoWeighting | WeightingStrategy::PureKd | WeightingStrategy::VanillaFt => {
            Ok(SampleWeightVector::uniform(n, epoch))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub total_loss: f64,
    pub ce_loss: f64,
    pub kd_loss: f64,
    pub train_accuracy: f64,
    pub dev_accuracy: Option<f64>,
    pub dev_mcc: Option<f64>,
    /// Teacher–student disagreements at the start of the epoch.
    pub disagreements: Option<usize>,
    /// Samples carrying weight λ during the epoch.
    pub emphasized: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub metrics: EpochMetrics,
    pub weights: SampleWeightVector,
    pub agreement: Option<AgreementMap>,
}

/// Mutable state of one student run under a borrowed, frozen teacher.
pub struct DcsRunState<'t> {
    pub student: ClassifierModel,
    teacher: Option<&'t ClassifierModel>,
    teacher_logits: Option<Tensor>,
    teacher_hash: Option<String>,
    weights: SampleWeightVector,
    agreement: Option<AgreementMap>,
    epoch: usize,
    reweight_count: usize,
    optimizer: Optimizer,
    shuffle_rng: ChaCha8Rng,
    weight_rng: ChaCha8Rng,
    pub history: Vec<EpochRecord>,
}

const SHUFFLE_STREAM: u64 = 11;
const WEIGHT_STREAM: u64 = 12;

impl<'t> DcsRunState<'t> {
    /// `teacher` is ignored under [`WeightingStrategy::VanillaFt`] and
    /// required otherwise.
    pub fn new(
        teacher: Option<&'t ClassifierModel>,
        student_init: ClassifierModel,
        train: &LabeledDataset,
        config: &DistillationConfig,
        seed: u64,
    ) -> Result<Self> {
        let teacher = if config.strategy.uses_teacher() {
            let t = teacher.ok_or_else(|| {
                Error::config(format!(
                    "strategy {} needs a teacher; run train-teacher first",
                    config.strategy
                ))
            })?;
            check_compatible(t, &student_init)?;
            Some(t)
        } else {
            None
        };
        if train.is_empty() {
            return Err(Error::data("empty training set"));
        }
        let teacher_logits = teacher.map(|t| dataset_logits(t, train)).transpose()?;
        let rng = |stream| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            r
        };
        Ok(DcsRunState {
            student: student_init.clone_parameters(),
            teacher,
            teacher_hash: teacher.map(ClassifierModel::parameter_hash),
            teacher_logits,
            weights: SampleWeightVector::uniform(train.len(), 0),
            agreement: None,
            epoch: 0,
            reweight_count: 0,
            optimizer: Optimizer::new(config.optimizer, config.learning_rate),
            shuffle_rng: rng(SHUFFLE_STREAM),
            weight_rng: rng(WEIGHT_STREAM),
            history: Vec::new(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn weights(&self) -> &SampleWeightVector {
        &self.weights
    }

    /// How many times the weight vector has been rebuilt from agreement.
    pub fn reweight_count(&self) -> usize {
        self.reweight_count
    }

    pub fn teacher_hash(&self) -> Option<&str> {
        self.teacher_hash.as_deref()
    }

    /// Computes agreement for the coming epoch and, from epoch 1 on,
    /// rebuilds the weight vector. Epoch 0 keeps all weights at 1.
    pub fn prepare_epoch(&mut self, train: &LabeledDataset, config: &DistillationConfig) -> Result<()> {
        let Some(teacher_logits) = &self.teacher_logits else {
            self.agreement = None;
            self.weights = SampleWeightVector::uniform(train.len(), self.epoch);
            return Ok(());
        };
        let agreement = AgreementMap::from_predictions(
            argmax_rows(teacher_logits),
            dataset_predictions(&self.student, train)?,
            self.epoch,
        );
        self.weights = if self.epoch == 0 {
            SampleWeightVector::uniform(train.len(), 0)
        } else {
            self.reweight_count += 1;
            assign_weights(&agreement, config.strategy, config.lambda, &mut self.weight_rng)?
        };
        self.agreement = Some(agreement);
        Ok(())
    }

    /// Overrides the weights for the coming epoch.
    pub fn set_weights(&mut self, weights: SampleWeightVector) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::config(format!(
                "{} weights for {} samples",
                weights.len(),
                self.weights.len()
            )));
        }
        self.weights = weights;
        Ok(())
    }

    /// One shuffled pass of mini-batch updates with the current weights.
    pub fn train_epoch(
        &mut self,
        train: &LabeledDataset,
        dev: Option<&LabeledDataset>,
        config: &DistillationConfig,
    ) -> Result<&EpochRecord> {
        let n = train.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle_rng);

        let (mut sum_total, mut sum_ce, mut sum_kd) = (0.0, 0.0, 0.0);
        let mut correct = 0usize;
        for (b, positions) in order.chunks(config.batch_size).enumerate() {
            let (x, labels) = train.batch(positions)?;
            let tape = Tape::new();
            let bound = self.student.bind(&tape, true);
            let logits = self.student.forward_on(&tape, &bound, &x)?;
            let ce = cross_entropy(&tape, logits, &labels)?;

            let (loss, total, kd) = match &self.teacher_logits {
                None => {
                    let v = tape.value(ce).item();
                    (ce, v, 0.0)
                }
                Some(tl) => {
                    let rows: Vec<f64> = positions
                        .iter()
                        .flat_map(|&p| tl.row(p).iter().copied())
                        .collect();
                    let tl = Tensor::new(vec![positions.len(), tl.last_dim()], rows)?;
                    let w = self.weights.gather(positions);
                    let kd: KdLoss =
                        weighted_kd_loss(&tape, &tl, logits, &w, config.temperature)?;
                    let (loss, br) = total_loss(&tape, ce, &kd, config.alpha)?;
                    (loss, br.total, br.kd)
                }
            };
            let ce_v = tape.value(ce).item();
            if !(total.is_finite() && ce_v.is_finite() && kd.is_finite()) {
                return Err(Error::NonFinite {
                    epoch: self.epoch,
                    batch: b,
                    total,
                    ce: ce_v,
                    kd,
                });
            }
            let m = positions.len() as f64;
            sum_total += total * m;
            sum_ce += ce_v * m;
            sum_kd += kd * m;
            correct += argmax_rows(&tape.value(logits))
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();

            tape.backward(loss)?;
            self.student.accumulate_grads(&tape, &bound);
            self.optimizer.step(&mut self.student);
        }

        let (dev_accuracy, dev_mcc) = match dev {
            Some(d) => {
                let pred = dataset_predictions(&self.student, d)?;
                let truth = d.labels();
                (
                    Some(accuracy(&pred, &truth)),
                    Some(mcc(&pred, &truth, d.n_classes())),
                )
            }
            None => (None, None),
        };
        let nf = n as f64;
        let metrics = EpochMetrics {
            epoch: self.epoch,
            total_loss: sum_total / nf,
            ce_loss: sum_ce / nf,
            kd_loss: sum_kd / nf,
            train_accuracy: correct as f64 / nf,
            dev_accuracy,
            dev_mcc,
            disagreements: self.agreement.as_ref().map(AgreementMap::disagreements),
            emphasized: self.weights.emphasized_count(),
        };
        self.history.push(EpochRecord {
            metrics,
            weights: self.weights.clone(),
            agreement: self.agreement.take(),
        });
        self.epoch += 1;
        Ok(self.history.last().expect("just pushed"))
    }

    /// Re-weight (from epoch 1) then train.
    pub fn run_epoch(
        &mut self,
        train: &LabeledDataset,
        dev: Option<&LabeledDataset>,
        config: &DistillationConfig,
    ) -> Result<&EpochRecord> {
        self.prepare_epoch(train, config)?;
        self.train_epoch(train, dev, config)
    }

    /// Verifies the teacher is bit-identical to the start of the run.
    pub fn teacher_unchanged(&self) -> bool {
        match (self.teacher, &self.teacher_hash) {
            (Some(t), Some(h)) => t.parameter_hash() == *h,
            _ => true,
        }
    }

    pub fn finish(self) -> RunOutcome {
        RunOutcome {
            student: self.student,
            history: self.history,
            reweight_count: self.reweight_count,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub student: ClassifierModel,
    pub history: Vec<EpochRecord>,
    pub reweight_count: usize,
}

impl RunOutcome {
    pub fn metrics(&self) -> Vec<EpochMetrics> {
        self.history.iter().map(|r| r.metrics.clone()).collect()
    }

    /// Epoch with the best dev accuracy (earliest on ties).
    pub fn best_epoch(&self) -> Option<&EpochMetrics> {
        self.history
            .iter()
            .map(|r| &r.metrics)
            .filter(|m| m.dev_accuracy.is_some())
            .fold(None, |best: Option<&EpochMetrics>, m| match best {
                Some(b) if b.dev_accuracy >= m.dev_accuracy => Some(b),
                _ => Some(m),
            })
    }
}

/// Trains `student_init` for `config.epochs` epochs under `teacher`.
pub fn run_dcs(
    teacher: Option<&ClassifierModel>,
    student_init: &ClassifierModel,
    train: &LabeledDataset,
    dev: Option<&LabeledDataset>,
    config: &DistillationConfig,
    seed: u64,
) -> Result<RunOutcome> {
    let mut state = DcsRunState::new(teacher, student_init.clone(), train, config, seed)?;
    for _ in 0..config.epochs {
        state.run_epoch(train, dev, config)?;
    }
    debug_assert!(state.teacher_unchanged());
    Ok(state.finish())
}
