//! Desk-scale classification tasks.
//!
//! Synthetic generators stand in for small downstream tasks; the text loader
//! turns a JSONL file into hashed bag-of-words count vectors. Every dataset is
//! a pure function of its spec (or file) and seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Features {
    Dense(Vec<f64>),
    Tokens(Vec<u32>),
}

impl Features {
    pub fn width(&self) -> usize {
        match self {
            Features::Dense(v) => v.len(),
            Features::Tokens(t) => t.len(),
        }
    }

    fn push_row(&self, out: &mut Vec<f64>) {
        match self {
            Features::Dense(v) => out.extend_from_slice(v),
            Features::Tokens(t) => out.extend(t.iter().map(|&id| id as f64)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub features: Features,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
}

/// Ordered samples with ids `first_id, first_id + 1, ...`.
///
/// Train sets start at id 0; a dev set generated alongside continues after the
/// last train id so the two never share an id.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
    n_classes: usize,
    split: Split,
    first_id: usize,
    /// For subsamples: `id_map[i]` is the source id of the sample at position `i`.
    id_map: Option<Vec<usize>>,
    /// Train ids whose label was flipped by label noise.
    noisy_ids: Vec<usize>,
}

impl LabeledDataset {
    /// Renumbers the samples contiguously from `first_id` and validates labels.
    pub fn new(
        items: Vec<(Features, usize)>,
        n_classes: usize,
        split: Split,
        first_id: usize,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::config(format!("n_classes must be >= 2, got {n_classes}")));
        }
        let width = items.first().map(|(f, _)| f.width());
        let mut samples = Vec::with_capacity(items.len());
        for (i, (features, label)) in items.into_iter().enumerate() {
            let id = first_id + i;
            if label >= n_classes {
                return Err(Error::data(format!(
                    "sample {id} has label {label} outside [0, {n_classes})"
                )));
            }
            if Some(features.width()) != width {
                return Err(Error::data(format!("sample {id} has a different feature width")));
            }
            samples.push(Sample {
                id,
                features,
                label,
            });
        }
        Ok(LabeledDataset {
            samples,
            n_classes,
            split,
            first_id,
            id_map: None,
            noisy_ids: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn first_id(&self) -> usize {
        self.first_id
    }

    pub fn ids(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn feature_width(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.width())
    }

    pub fn id_map(&self) -> Option<&[usize]> {
        self.id_map.as_deref()
    }

    pub fn noisy_ids(&self) -> &[usize] {
        &self.noisy_ids
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Features of the samples at `positions` as a `[len, width]` tensor,
    /// together with their labels.
    pub fn batch(&self, positions: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let width = self.feature_width();
        let mut data = Vec::with_capacity(positions.len() * width);
        let mut labels = Vec::with_capacity(positions.len());
        for &p in positions {
            let s = self
                .samples
                .get(p)
                .ok_or_else(|| Error::dim(format!("position {p} outside dataset of {}", self.len())))?;
            s.features.push_row(&mut data);
            labels.push(s.label);
        }
        Ok((Tensor::new(vec![positions.len(), width], data)?, labels))
    }

    /// All samples, in order.
    pub fn full_batch(&self) -> Result<(Tensor, Vec<usize>)> {
        let positions: Vec<usize> = (0..self.len()).collect();
        self.batch(&positions)
    }

    /// Checks the id and label invariants.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.id != self.first_id + i {
                return Err(Error::data(format!("sample at position {i} has id {}", s.id)));
            }
            if s.label >= self.n_classes {
                return Err(Error::data(format!("sample {} has label {}", s.id, s.label)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorKind {
    /// Unit-variance Gaussian blobs whose means are pairwise `separation` apart.
    GaussianMixture { dim: usize, separation: f64 },
    /// Two interleaving half-circles in the first two coordinates; any extra
    /// coordinates are pure noise.
    XorMoons { dim: usize, noise: f64 },
    /// Token sequences where each class plants its own motif tokens.
    TokenMotif { vocab_size: usize, seq_len: usize },
    /// JSONL text file, hashed into `hash_dim` buckets.
    TextFile { path: PathBuf, hash_dim: usize },
}

/// Full description of a task. For `TextFile`, `n_train` / `n_dev` cap the
/// loaded splits (0 keeps everything).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub generator: GeneratorKind,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_classes: usize,
    pub label_noise: f64,
    pub seed: u64,
}

impl TaskSpec {
    pub fn id(&self) -> String {
        let kind = match &self.generator {
            GeneratorKind::GaussianMixture { .. } => "gaussian_mixture",
            GeneratorKind::XorMoons { .. } => "xor_moons",
            GeneratorKind::TokenMotif { .. } => "token_motif",
            GeneratorKind::TextFile { .. } => "text_file",
        };
        format!(
            "{kind}-c{}-n{}-noise{}-s{}",
            self.n_classes, self.n_train, self.label_noise, self.seed
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("n_classes must be >= 2"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::config(format!(
                "label_noise must lie in [0, 0.5), got {}",
                self.label_noise
            )));
        }
        match &self.generator {
            GeneratorKind::TextFile { hash_dim, .. } => {
                if *hash_dim == 0 {
                    return Err(Error::config("hash_dim must be positive"));
                }
                return Ok(());
            }
            GeneratorKind::GaussianMixture { dim, separation } => {
                if *dim < self.n_classes {
                    return Err(Error::config(format!(
                        "gaussian_mixture needs dim >= n_classes ({dim} < {})",
                        self.n_classes
                    )));
                }
                if !(*separation > 0.0 && separation.is_finite()) {
                    return Err(Error::config("separation must be positive"));
                }
            }
            GeneratorKind::XorMoons { dim, noise } => {
                if self.n_classes != 2 || *dim < 2 {
                    return Err(Error::config("xor_moons needs n_classes = 2 and dim >= 2"));
                }
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(Error::config("noise must be nonnegative"));
                }
            }
            GeneratorKind::TokenMotif {
                vocab_size,
                seq_len,
            } => {
                if *seq_len < 3 || *vocab_size < MOTIF_SIZE * self.n_classes + 2 {
                    return Err(Error::config(format!(
                        "token_motif needs seq_len >= 3 and vocab_size >= {}",
                        MOTIF_SIZE * self.n_classes + 2
                    )));
                }
            }
        }
        if self.n_train < 2 * self.n_classes {
            return Err(Error::config(format!(
                "n_train must be >= 2 * n_classes, got {}",
                self.n_train
            )));
        }
        if self.n_dev == 0 {
            return Err(Error::config("n_dev must be positive"));
        }
        Ok(())
    }
}

const MOTIF_SIZE: usize = 2;

// independent random streams derived from one seed
const STREAM_STRUCTURE: u64 = 1;
const STREAM_SAMPLES: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_SHIFT: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws train and dev sets for a synthetic generator.
pub fn generate_synthetic(spec: &TaskSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    generate_shifted(spec, 0.0)
}

/// Builds a task: synthetic generation, or loading (and capping) a text file.
pub fn build_task(spec: &TaskSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    match &spec.generator {
        GeneratorKind::TextFile { path, hash_dim } => {
            let task = load_text_task(path, *hash_dim, spec.n_classes)?;
            let mut train = task.train;
            let mut dev = task.dev;
            if spec.n_train > 0 && spec.n_train < train.len() {
                train = subsample(&train, spec.n_train, spec.seed)?;
            }
            if spec.n_dev > 0 && spec.n_dev < dev.len() {
                let first = train.len();
                let sub = subsample(&dev, spec.n_dev, spec.seed.wrapping_add(1))?;
                dev = renumber(sub, first);
            } else {
                dev = renumber(dev, train.len());
            }
            apply_label_noise(&mut train, spec.label_noise, spec.seed);
            Ok((train, dev))
        }
        _ => generate_synthetic(spec),
    }
}

fn renumber(mut ds: LabeledDataset, first_id: usize) -> LabeledDataset {
    for (i, s) in ds.samples.iter_mut().enumerate() {
        s.id = first_id + i;
    }
    ds.first_id = first_id;
    ds
}

fn generate_shifted(spec: &TaskSpec, shift: f64) -> Result<(LabeledDataset, LabeledDataset)> {
    generate_with(spec, shift, spec.seed)
}

/// Class structure comes from `spec.seed`, samples from `sample_seed`.
fn generate_with(
    spec: &TaskSpec,
    shift: f64,
    sample_seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let c = spec.n_classes;
    let total = spec.n_train + spec.n_dev;
    let mut structure = stream(spec.seed, STREAM_STRUCTURE);
    let mut rng = stream(sample_seed, STREAM_SAMPLES);

    // balanced labels in a seeded order
    let mut labels: Vec<usize> = (0..total).map(|i| i % c).collect();
    labels.shuffle(&mut rng);

    let features: Vec<Features> = match &spec.generator {
        GeneratorKind::GaussianMixture { dim, separation } => {
            let mut means = orthogonal_means(&mut structure, c, *dim, *separation);
            if shift != 0.0 {
                let mut srng = stream(spec.seed, STREAM_SHIFT);
                for m in &mut means {
                    let dir = random_unit(&mut srng, *dim);
                    m.iter_mut().zip(dir).for_each(|(a, d)| *a += shift * d);
                }
            }
            labels
                .iter()
                .map(|&y| {
                    Features::Dense(means[y].iter().map(|mu| mu + normal(&mut rng)).collect())
                })
                .collect()
        }
        GeneratorKind::XorMoons { dim, noise } => {
            let (sin, cos) = shift.sin_cos();
            labels
                .iter()
                .map(|&y| {
                    let theta = rng.random_range(0.0..std::f64::consts::PI);
                    let (x0, x1) = if y == 0 {
                        (theta.cos(), theta.sin())
                    } else {
                        (1.0 - theta.cos(), 0.5 - theta.sin())
                    };
                    let (x0, x1) = (x0 - 0.5, x1 - 0.25);
                    let mut v = vec![cos * x0 - sin * x1, sin * x0 + cos * x1];
                    v.iter_mut().for_each(|a| *a += noise * normal(&mut rng));
                    v.extend((2..*dim).map(|_| noise * normal(&mut rng)));
                    Features::Dense(v)
                })
                .collect()
        }
        GeneratorKind::TokenMotif {
            vocab_size,
            seq_len,
        } => {
            if shift != 0.0 {
                return Err(Error::config("domain shift is not defined for token_motif"));
            }
            let filler = (MOTIF_SIZE * c) as u32..*vocab_size as u32;
            labels
                .iter()
                .map(|&y| {
                    let mut seq: Vec<u32> =
                        (0..*seq_len).map(|_| rng.random_range(filler.clone())).collect();
                    let mut slots: Vec<usize> = (0..*seq_len).collect();
                    slots.shuffle(&mut rng);
                    let motif = |class: usize, rng: &mut ChaCha8Rng| {
                        (class * MOTIF_SIZE + rng.random_range(0..MOTIF_SIZE)) as u32
                    };
                    seq[slots[0]] = motif(y, &mut rng);
                    seq[slots[1]] = motif(y, &mut rng);
                    let other = (y + rng.random_range(1..c)) % c;
                    seq[slots[2]] = motif(other, &mut rng);
                    Features::Tokens(seq)
                })
                .collect()
        }
        GeneratorKind::TextFile { .. } => {
            return Err(Error::config("text_file tasks are loaded, not generated"))
        }
    };

    let mut items: Vec<(Features, usize)> = features.into_iter().zip(labels).collect();
    let dev_items = items.split_off(spec.n_train);
    let mut train = LabeledDataset::new(items, c, Split::Train, 0)?;
    let dev = LabeledDataset::new(dev_items, c, Split::Dev, spec.n_train)?;
    apply_label_noise(&mut train, spec.label_noise, spec.seed);
    Ok((train, dev))
}

/// Flips each label with probability `rate` to a uniformly chosen other class.
fn apply_label_noise(ds: &mut LabeledDataset, rate: f64, seed: u64) {
    let mut rng = stream(seed, STREAM_NOISE);
    let c = ds.n_classes;
    for s in &mut ds.samples {
        let u: f64 = rng.random();
        let r = rng.random_range(0..c - 1);
        if u < rate {
            s.label = if r < s.label { r } else { r + 1 };
            ds.noisy_ids.push(s.id);
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

/// `k` means on a random orthonormal frame, scaled to be pairwise
/// `separation` apart and centered on the origin.
fn orthogonal_means(rng: &mut ChaCha8Rng, k: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = random_unit(rng, dim);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    let scale = separation / std::f64::consts::SQRT_2;
    let mut means: Vec<Vec<f64>> = basis
        .into_iter()
        .map(|b| b.into_iter().map(|a| a * scale).collect())
        .collect();
    let centroid: Vec<f64> = (0..dim)
        .map(|j| means.iter().map(|m| m[j]).sum::<f64>() / k as f64)
        .collect();
    for m in &mut means {
        m.iter_mut().zip(&centroid).for_each(|(a, c)| *a -= c);
    }
    means
}

/// A large clean source task and a small, shifted target task from one spec.
#[derive(Clone, Debug)]
pub struct TransferTask {
    pub source: LabeledDataset,
    pub target_train: LabeledDataset,
    pub target_dev: LabeledDataset,
}

/// Builds a source task of `n_source` clean samples and a target task drawn
/// from `spec` after perturbing the class structure by `shift` (mean offset
/// for Gaussian mixtures, rotation angle in radians for moons). Both share
/// the class structure keyed by `spec.seed`; their samples are independent.
pub fn transfer_pair(spec: &TaskSpec, n_source: usize, shift: f64) -> Result<TransferTask> {
    let source_spec = TaskSpec {
        n_train: n_source,
        n_dev: 1,
        label_noise: 0.0,
        ..spec.clone()
    };
    let (source, _) = generate_with(&source_spec, 0.0, spec.seed ^ SOURCE_SAMPLE_SALT)?;
    let (target_train, target_dev) = generate_shifted(spec, shift)?;
    Ok(TransferTask {
        source,
        target_train,
        target_dev,
    })
}

const SOURCE_SAMPLE_SALT: u64 = 0x5eed_5eed_5eed_5eed;

/// Uniform subsample of `k` samples without replacement, keeping at least one
/// sample of every class present in `ds`. Ids are renumbered from
/// `ds.first_id()`; the source ids are kept in [`LabeledDataset::id_map`].
pub fn subsample(ds: &LabeledDataset, k: usize, seed: u64) -> Result<LabeledDataset> {
    if k > ds.len() {
        return Err(Error::config(format!("cannot take {k} of {} samples", ds.len())));
    }
    if k < ds.n_classes {
        return Err(Error::config(format!(
            "subsample size {k} is below n_classes {}",
            ds.n_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let (chosen, rest) = order.split_at_mut(k);

    // swap in one sample of every missing class, evicting from the most
    // represented class
    for class in 0..ds.n_classes {
        let has = |idx: &[usize]| idx.iter().any(|&i| ds.samples[i].label == class);
        if has(chosen) {
            continue;
        }
        let Some(donor) = rest.iter().position(|&i| ds.samples[i].label == class) else {
            continue;
        };
        let mut counts = vec![0usize; ds.n_classes];
        for &i in chosen.iter() {
            counts[ds.samples[i].label] += 1;
        }
        let victim = chosen
            .iter()
            .rposition(|&i| counts[ds.samples[i].label] > 1)
            .expect("k >= n_classes leaves a class with two samples");
        std::mem::swap(&mut chosen[victim], &mut rest[donor]);
    }

    let mut picked = chosen.to_vec();
    picked.sort_unstable();
    let items = picked
        .iter()
        .map(|&i| (ds.samples[i].features.clone(), ds.samples[i].label))
        .collect();
    let mut out = LabeledDataset::new(items, ds.n_classes, ds.split, ds.first_id)?;
    let source_ids: Vec<usize> = picked.iter().map(|&i| ds.samples[i].id).collect();
    let noisy: BTreeSet<usize> = ds.noisy_ids.iter().copied().collect();
    out.noisy_ids = source_ids
        .iter()
        .enumerate()
        .filter(|(_, id)| noisy.contains(id))
        .map(|(pos, _)| ds.first_id + pos)
        .collect();
    out.id_map = Some(source_ids);
    Ok(out)
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased whitespace tokens counted into `hash_dim` FNV-1a buckets.
pub fn hash_text(text: &str, hash_dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; hash_dim];
    for tok in text.split_whitespace() {
        let tok = tok.to_lowercase();
        v[(fnv1a64(tok.as_bytes()) % hash_dim as u64) as usize] += 1.0;
    }
    v
}

#[derive(Deserialize)]
struct TextLine {
    text: String,
    label: String,
    #[serde(default)]
    split: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TextTask {
    pub train: LabeledDataset,
    pub dev: LabeledDataset,
    /// Label strings by class index (sorted).
    pub label_names: Vec<String>,
}

/// Loads a JSONL text task.
///
/// Label strings map to class indices in sorted order, so the mapping does not
/// depend on line order. Train ids start at 0 and dev ids follow the train ids.
pub fn load_text_task(path: &Path, hash_dim: usize, n_classes: usize) -> Result<TextTask> {
    if hash_dim == 0 {
        return Err(Error::config("hash_dim must be positive"));
    }
    let raw = fs::read_to_string(path).map_err(|e| Error::persistence(path, e))?;
    let mut lines = Vec::new();
    for (no, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TextLine = serde_json::from_str(line)
            .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), no + 1)))?;
        let split = match parsed.split.as_deref() {
            None | Some("train") => Split::Train,
            Some("dev") => Split::Dev,
            Some(other) => {
                return Err(Error::data(format!(
                    "{}:{}: unknown split {other:?}",
                    path.display(),
                    no + 1
                )))
            }
        };
        lines.push((no + 1, parsed.text, parsed.label, split));
    }

    let distinct: BTreeSet<&str> = lines.iter().map(|(_, _, l, _)| l.as_str()).collect();
    let label_names: Vec<String> = distinct.iter().take(n_classes).map(|s| s.to_string()).collect();
    let index: BTreeMap<&str, usize> = label_names
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (no, text, label, split) in &lines {
        let class = *index.get(label.as_str()).ok_or_else(|| {
            Error::data(format!(
                "{}:{no}: unknown label {label:?} (only {n_classes} classes)",
                path.display()
            ))
        })?;
        let item = (Features::Dense(hash_text(text, hash_dim)), class);
        match split {
            Split::Train => train.push(item),
            Split::Dev => dev.push(item),
        }
    }
    let n_train = train.len();
    Ok(TextTask {
        train: LabeledDataset::new(train, n_classes, Split::Train, 0)?,
        dev: LabeledDataset::new(dev, n_classes, Split::Dev, n_train)?,
        label_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn gm(n_train: usize, noise: f64, seed: u64) -> TaskSpec {
        TaskSpec {
            generator: GeneratorKind::GaussianMixture {
                dim: 4,
                separation: 6.0,
            },
            n_train,
            n_dev: 50,
            n_classes: 2,
            label_noise: noise,
            seed,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&gm(40, 0.1, 3)).unwrap();
        let b = generate_synthetic(&gm(40, 0.1, 3)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&gm(40, 0.1, 4)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn ids_are_contiguous_and_disjoint() {
        let (train, dev) = generate_synthetic(&gm(40, 0.0, 1)).unwrap();
        train.validate().unwrap();
        dev.validate().unwrap();
        assert_eq!(train.ids(), (0..40).collect::<Vec<_>>());
        assert_eq!(dev.ids(), (40..90).collect::<Vec<_>>());
    }

    #[test]
    fn means_are_separated() {
        let mut rng = stream(9, STREAM_STRUCTURE);
        let means = orthogonal_means(&mut rng, 3, 5, 6.0);
        for i in 0..3 {
            for j in i + 1..3 {
                let d: f64 = means[i]
                    .iter()
                    .zip(&means[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!((d - 6.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(matches!(generate_synthetic(&gm(3, 0.0, 0)), Err(Error::Config(_))));
        assert!(matches!(generate_synthetic(&gm(40, 0.5, 0)), Err(Error::Config(_))));
        let mut s = gm(40, 0.0, 0);
        s.generator = GeneratorKind::XorMoons {
            dim: 2,
            noise: 0.1,
        };
        s.n_classes = 3;
        assert!(matches!(generate_synthetic(&s), Err(Error::Config(_))));
    }

    #[test]
    fn dev_labels_are_never_noised() {
        let (_, clean_dev) = generate_synthetic(&gm(100, 0.0, 5)).unwrap();
        let (noisy_train, noisy_dev) = generate_synthetic(&gm(100, 0.3, 5)).unwrap();
        assert_eq!(clean_dev, noisy_dev);
        assert!(!noisy_train.noisy_ids().is_empty());
    }

    #[test]
    fn token_motif_shapes() {
        let spec = TaskSpec {
            generator: GeneratorKind::TokenMotif {
                vocab_size: 32,
                seq_len: 6,
            },
            n_train: 20,
            n_dev: 10,
            n_classes: 2,
            label_noise: 0.0,
            seed: 2,
        };
        let (train, _) = generate_synthetic(&spec).unwrap();
        let (x, y) = train.full_batch().unwrap();
        assert_eq!(x.shape(), &[20, 6]);
        assert!(x.data().iter().all(|&v| (0.0..32.0).contains(&v) && v.fract() == 0.0));
        for (row, label) in (0..20).map(|i| x.row(i)).zip(y) {
            let own = row
                .iter()
                .filter(|&&t| (t as usize) / MOTIF_SIZE == label && (t as usize) < 2 * MOTIF_SIZE)
                .count();
            assert!(own >= 2);
        }
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn hashing_counts_tokens() {
        let v = hash_text("good good bad", 8);
        let g = (fnv1a64(b"good") % 8) as usize;
        let b = (fnv1a64(b"bad") % 8) as usize;
        assert_eq!(v[g], if g == b { 3.0 } else { 2.0 });
        assert_eq!(v.iter().sum::<f64>(), 3.0);
        if g != b {
            assert_eq!(v[b], 1.0);
        }
        assert_eq!(hash_text("GOOD", 8), hash_text("good", 8));
        assert!(hash_text("", 8).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn subsample_keeps_every_class() {
        let (train, _) = generate_synthetic(&gm(1000, 0.0, 1)).unwrap();
        for seed in 0..50 {
            let s = subsample(&train, 2, seed).unwrap();
            assert_eq!(s.class_counts(), vec![1, 1]);
            let s = subsample(&train, 10, seed).unwrap();
            assert!(s.class_counts().iter().all(|&c| c > 0));
            s.validate().unwrap();
        }
        assert!(matches!(subsample(&train, 1, 0), Err(Error::Config(_))));
        assert!(matches!(subsample(&train, 1001, 0), Err(Error::Config(_))));
    }

    #[test]
    fn subsample_determinism_and_identity() {
        let (train, _) = generate_synthetic(&gm(100, 0.2, 1)).unwrap();
        let a = subsample(&train, 10, 1).unwrap();
        assert_eq!(a, subsample(&train, 10, 1).unwrap());
        assert_ne!(a.id_map(), subsample(&train, 10, 2).unwrap().id_map());
        let full = subsample(&train, 100, 9).unwrap();
        assert_eq!(full.samples(), train.samples());
        assert_eq!(full.noisy_ids(), train.noisy_ids());
        let map = a.id_map().unwrap();
        for (s, &src) in a.samples().iter().zip(map) {
            assert_eq!(s.features, train.samples()[src].features);
            assert_eq!(s.label, train.samples()[src].label);
        }
    }

    #[test]
    fn transfer_pair_shapes() {
        let spec = gm(40, 0.2, 3);
        let t = transfer_pair(&spec, 500, 1.0).unwrap();
        assert_eq!(t.source.len(), 500);
        assert!(t.source.noisy_ids().is_empty());
        assert_eq!(t.target_train.len(), 40);
        assert_eq!(t.target_dev.len(), 50);
    }
}
