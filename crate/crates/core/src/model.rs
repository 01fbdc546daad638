//! Small classifiers used as both teacher and student.
//!
//! Every architecture maps a `[batch, features]` tensor to `[batch, n_classes]`
//! logits. For [`ArchitectureDescriptor::TinyTransformer`] the "features" are
//! token ids stored as integral floats, one row per sequence.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchitectureDescriptor {
    Linear {
        input_dim: usize,
        n_classes: usize,
    },
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        n_classes: usize,
    },
    /// One encoder block with a single attention head, mean-pooled.
    TinyTransformer {
        vocab_size: usize,
        seq_len: usize,
        dim: usize,
        ff_dim: usize,
        n_classes: usize,
    },
}

impl ArchitectureDescriptor {
    pub fn n_classes(&self) -> usize {
        match self {
            Self::Linear { n_classes, .. }
            | Self::Mlp { n_classes, .. }
            | Self::TinyTransformer { n_classes, .. } => *n_classes,
        }
    }

    /// Width of one input row.
    pub fn input_width(&self) -> usize {
        match self {
            Self::Linear { input_dim, .. } | Self::Mlp { input_dim, .. } => *input_dim,
            Self::TinyTransformer { seq_len, .. } => *seq_len,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear { .. } => "linear",
            Self::Mlp { .. } => "mlp",
            Self::TinyTransformer { .. } => "tiny_transformer",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n_classes = self.n_classes();
        if n_classes < 2 {
            return Err(Error::config(format!("n_classes must be >= 2, got {n_classes}")));
        }
        let dims: Vec<usize> = match self {
            Self::Linear { input_dim, .. } => vec![*input_dim],
            Self::Mlp {
                input_dim, hidden, ..
            } => std::iter::once(*input_dim).chain(hidden.iter().copied()).collect(),
            Self::TinyTransformer {
                vocab_size,
                seq_len,
                dim,
                ff_dim,
                ..
            } => vec![*vocab_size, *seq_len, *dim, *ff_dim],
        };
        if dims.contains(&0) {
            return Err(Error::config(format!(
                "{} descriptor has a zero dimension: {self:?}",
                self.name()
            )));
        }
        Ok(())
    }

    /// `(name, shape, fan_in)` for every parameter, in initialization order.
    fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        let dense = |out: &mut Vec<_>, prefix: &str, fan_in: usize, fan_out: usize| {
            out.push((format!("{prefix}.weight"), vec![fan_in, fan_out], fan_in));
            out.push((format!("{prefix}.bias"), vec![fan_out], fan_in));
        };
        match self {
            Self::Linear {
                input_dim,
                n_classes,
            } => dense(&mut out, "out", *input_dim, *n_classes),
            Self::Mlp {
                input_dim,
                hidden,
                n_classes,
            } => {
                let mut prev = *input_dim;
                for (i, &h) in hidden.iter().enumerate() {
                    dense(&mut out, &format!("hidden{i}"), prev, h);
                    prev = h;
                }
                dense(&mut out, "out", prev, *n_classes);
            }
            Self::TinyTransformer {
                vocab_size,
                seq_len,
                dim,
                ff_dim,
                n_classes,
            } => {
                out.push(("embed.token".into(), vec![*vocab_size, *dim], 1));
                out.push(("embed.position".into(), vec![*seq_len, *dim], 1));
                for proj in ["attn.query", "attn.key", "attn.value", "attn.output"] {
                    out.push((format!("{proj}.weight"), vec![*dim, *dim], *dim));
                }
                out.push(("ln1.gamma".into(), vec![*dim], 0));
                out.push(("ln1.beta".into(), vec![*dim], 0));
                dense(&mut out, "ffn.up", *dim, *ff_dim);
                dense(&mut out, "ffn.down", *ff_dim, *dim);
                out.push(("ln2.gamma".into(), vec![*dim], 0));
                out.push(("ln2.beta".into(), vec![*dim], 0));
                dense(&mut out, "head", *dim, *n_classes);
            }
        }
        out
    }

    /// Total scalar parameter count, from shape arithmetic alone.
    pub fn parameter_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    descriptor: ArchitectureDescriptor,
    params: BTreeMap<String, Tensor>,
}

/// Parameters of a model recorded on a tape for one forward pass.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Binds arbitrary tape vars as parameters, keyed by parameter name.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        BoundParams {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Initializes a model from `(desc, seed)`.
///
/// Weights and biases are uniform in `±1/sqrt(fan_in)`; embeddings are uniform
/// in `±1`; layer-norm gains start at 1 and shifts at 0.
pub fn build_model(desc: &ArchitectureDescriptor, seed: u64) -> Result<ClassifierModel> {
    desc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    for (name, shape, fan_in) in desc.layout() {
        let numel: usize = shape.iter().product();
        let data = if name.ends_with(".gamma") {
            vec![1.0; numel]
        } else if name.ends_with(".beta") {
            vec![0.0; numel]
        } else {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
        };
        params.insert(name, Tensor::new(shape, data)?.requiring_grad());
    }
    Ok(ClassifierModel {
        descriptor: desc.clone(),
        params,
    })
}

impl ClassifierModel {
    /// Assembles a model from explicit parameters, checking names and shapes
    /// against the descriptor.
    pub fn from_parameters(
        descriptor: ArchitectureDescriptor,
        params: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        descriptor.validate()?;
        let layout = descriptor.layout();
        if layout.len() != params.len() {
            return Err(Error::config(format!(
                "{} expects {} parameters, got {}",
                descriptor.name(),
                layout.len(),
                params.len()
            )));
        }
        let mut checked = BTreeMap::new();
        for (name, shape, _) in layout {
            let mut t = params
                .get(&name)
                .cloned()
                .ok_or_else(|| Error::config(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::dim(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            t.set_requires_grad(true);
            t.zero_grad();
            checked.insert(name, t);
        }
        Ok(ClassifierModel {
            descriptor,
            params: checked,
        })
    }

    pub fn descriptor(&self) -> &ArchitectureDescriptor {
        &self.descriptor
    }

    pub fn n_classes(&self) -> usize {
        self.descriptor.n_classes()
    }

    pub fn parameters(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Deep copy with gradients cleared.
    pub fn clone_parameters(&self) -> ClassifierModel {
        let mut m = self.clone();
        m.zero_grad();
        m
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// SHA-256 over parameter names, shapes and the little-endian bits of
    /// every value, hex-encoded.
    pub fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.descriptor.name().as_bytes());
        for (name, t) in &self.params {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Records every parameter on `tape`: as differentiable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    /// Copies the tape gradients of bound parameters into the model.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundParams) {
        for (name, var) in bound.iter() {
            if let (Some(g), Some(p)) = (tape.grad(*var), self.params.get_mut(name)) {
                p.accumulate_grad(&g);
            }
        }
    }

    fn check_input(&self, batch: &Tensor) -> Result<usize> {
        let width = self.descriptor.input_width();
        match batch.shape() {
            [b, w] if *w == width => Ok(*b),
            s => Err(Error::dim(format!(
                "{} expects input [batch, {width}], got {s:?}",
                self.descriptor.name()
            ))),
        }
    }

    /// Builds the forward graph on `tape` and returns the logits node.
    pub fn forward_on(&self, tape: &Tape, p: &BoundParams, batch: &Tensor) -> Result<Var> {
        let b = self.check_input(batch)?;
        match &self.descriptor {
            ArchitectureDescriptor::Linear { .. } => {
                let x = tape.constant(batch.clone());
                dense(tape, p, "out", x)
            }
            ArchitectureDescriptor::Mlp { hidden, .. } => {
                let mut h = tape.constant(batch.clone());
                for i in 0..hidden.len() {
                    h = tape.relu(dense(tape, p, &format!("hidden{i}"), h)?);
                }
                dense(tape, p, "out", h)
            }
            ArchitectureDescriptor::TinyTransformer {
                vocab_size,
                seq_len,
                dim,
                ..
            } => transformer_forward(tape, p, batch, b, *vocab_size, *seq_len, *dim),
        }
    }

    /// Eval-mode logits (no gradients recorded).
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let out = self.forward_on(&tape, &p, batch)?;
        let logits = tape.value(out);
        if !logits.all_finite() {
            return Err(Error::data("forward produced non-finite logits"));
        }
        Ok(logits)
    }

    /// Argmax class per row, ties resolved toward the lowest index.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(batch)?))
    }
}

fn dense(tape: &Tape, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let y = tape.matmul(x, p.get(&format!("{prefix}.weight")))?;
    tape.add_row(y, p.get(&format!("{prefix}.bias")))
}

fn token_ids(batch: &Tensor, vocab_size: usize) -> Result<Vec<usize>> {
    batch
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < vocab_size {
                Ok(v as usize)
            } else {
                Err(Error::dim(format!(
                    "token id {v} is not an integer in [0, {vocab_size})"
                )))
            }
        })
        .collect()
}

fn transformer_forward(
    tape: &Tape,
    p: &BoundParams,
    batch: &Tensor,
    b: usize,
    vocab_size: usize,
    seq_len: usize,
    dim: usize,
) -> Result<Var> {
    let ids = token_ids(batch, vocab_size)?;
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..seq_len).collect();
    let tok = tape.embedding(p.get("embed.token"), &ids)?;
    let pos = tape.embedding(p.get("embed.position"), &positions)?;
    let h = tape.add(tok, pos)?;

    let q = tape.matmul(h, p.get("attn.query.weight"))?;
    let k = tape.matmul(h, p.get("attn.key.weight"))?;
    let v = tape.matmul(h, p.get("attn.value.weight"))?;
    let scale = 1.0 / (dim as f64).sqrt();
    let mut heads = Vec::with_capacity(b);
    for s in 0..b {
        let qs = tape.slice_rows(q, s * seq_len, seq_len)?;
        let ks = tape.slice_rows(k, s * seq_len, seq_len)?;
        let vs = tape.slice_rows(v, s * seq_len, seq_len)?;
        let scores = tape.matmul(qs, tape.transpose(ks)?)?;
        let attn = tape.softmax(tape.scale(scores, scale), 1.0)?;
        heads.push(tape.matmul(attn, vs)?);
    }
    let mixed = tape.matmul(tape.concat(&heads)?, p.get("attn.output.weight"))?;
    let h1 = tape.layer_norm(
        tape.add(h, mixed)?,
        p.get("ln1.gamma"),
        p.get("ln1.beta"),
        LN_EPS,
    )?;

    let up = tape.relu(dense(tape, p, "ffn.up", h1)?);
    let down = dense(tape, p, "ffn.down", up)?;
    let h2 = tape.layer_norm(
        tape.add(h1, down)?,
        p.get("ln2.gamma"),
        p.get("ln2.beta"),
        LN_EPS,
    )?;

    // mean over each sequence as a [b, b * seq_len] averaging matrix
    let mut pool = vec![0.0; b * b * seq_len];
    for s in 0..b {
        for t in 0..seq_len {
            pool[s * b * seq_len + s * seq_len + t] = 1.0 / seq_len as f64;
        }
    }
    let pool = tape.constant(Tensor::new(vec![b, b * seq_len], pool)?);
    let pooled = tape.matmul(pool, h2)?;
    dense(tape, p, "head", pooled)
}

/// Row-wise argmax; the first maximal entry wins.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let n = logits.last_dim();
    logits
        .data()
        .chunks(n)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
