//! Finite-difference gradient checking.
//!
//! [`max_scaled_error`] compares tape gradients with central differences;
//! [`standard_suite`] runs it over every tape op, every loss, and whole
//! models on seeded random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::losses::{cross_entropy, kd_loss, total_loss, weighted_kd_loss};
use crate::model::{build_model, ArchitectureDescriptor, BoundParams};
use crate::tensor::{Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const RTOL: f64 = 1e-4;
/// Absolute floor so gradients that are zero up to rounding do not fail.
pub const ATOL: f64 = 1e-8;

/// Builds a scalar loss from input vars on a tape.
pub type LossBuilder<'a> = dyn Fn(&Tape, &[Var]) -> Var + 'a;

fn eval(build: &LossBuilder<'_>, inputs: &[Tensor]) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    tape.value(build(&tape, &vars)).item()
}

/// Worst `|analytic - numeric| / (RTOL·max(|analytic|, |numeric|) + ATOL)`
/// over every input element; at most 1 means the check passes.
pub fn max_scaled_error(build: &LossBuilder<'_>, inputs: &[Tensor]) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().requiring_grad()))
        .collect();
    let loss = build(&tape, &vars);
    tape.backward(loss).expect("gradient check needs a scalar loss");

    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (eval(build, &plus) - eval(build, &minus)) / (2.0 * STEP);
            let err = (a - numeric).abs() / (RTOL * a.abs().max(numeric.abs()) + ATOL);
            worst = worst.max(err);
        }
    }
    worst
}

/// Uniform entries in [-2, 2); with `avoid_zero`, entries within 1e-2 of zero
/// are redrawn (keeps relu away from its kink).
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], avoid_zero: bool) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-2.0..2.0);
            if !avoid_zero || v.abs() > 1e-2 {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Reduces an output to a scalar through a fixed random projection, so each
/// output element gets a distinct upstream gradient.
fn project(tape: &Tape, out: Var, seed: u64) -> Var {
    let shape = tape.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let r = tape.constant(random_tensor(&mut rng, &shape, false));
    tape.sum(tape.mul(out, r).expect("same shape"))
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub instances: u64,
    pub worst: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst <= 1.0
    }
}

type OpFn = Box<dyn Fn(&Tape, &[Var]) -> Var>;

fn op_catalogue() -> Vec<(String, Vec<Vec<usize>>, bool, OpFn)> {
    let mut ops: Vec<(String, Vec<Vec<usize>>, bool, OpFn)> = vec![
        ("matmul".into(), vec![vec![3, 4], vec![4, 2]], false, Box::new(|t, v| t.matmul(v[0], v[1]).unwrap())),
        ("add".into(), vec![vec![3, 4], vec![3, 4]], false, Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
        ("add_row".into(), vec![vec![3, 4], vec![4]], false, Box::new(|t, v| t.add_row(v[0], v[1]).unwrap())),
        ("mul".into(), vec![vec![2, 5], vec![2, 5]], false, Box::new(|t, v| t.mul(v[0], v[1]).unwrap())),
        ("scale".into(), vec![vec![2, 5]], false, Box::new(|t, v| t.scale(v[0], -1.7))),
        ("relu".into(), vec![vec![4, 3]], true, Box::new(|t, v| t.relu(v[0]))),
        ("sum".into(), vec![vec![3, 3]], false, Box::new(|t, v| t.sum(v[0]))),
        ("mean".into(), vec![vec![3, 3]], false, Box::new(|t, v| t.mean(v[0]))),
        ("sum_last".into(), vec![vec![3, 5]], false, Box::new(|t, v| t.sum_last(v[0]).unwrap())),
        ("transpose".into(), vec![vec![2, 5]], false, Box::new(|t, v| t.transpose(v[0]).unwrap())),
        ("slice_rows".into(), vec![vec![5, 3]], false, Box::new(|t, v| t.slice_rows(v[0], 1, 3).unwrap())),
        (
            "concat".into(),
            vec![vec![2, 3], vec![4, 3]],
            false,
            Box::new(|t, v| t.concat(&[v[0], v[1], v[0]]).unwrap()),
        ),
        (
            "embedding".into(),
            vec![vec![6, 3]],
            false,
            Box::new(|t, v| t.embedding(v[0], &[0, 5, 2, 2, 0]).unwrap()),
        ),
        (
            "layer_norm".into(),
            vec![vec![4, 5], vec![5], vec![5]],
            false,
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()),
        ),
    ];
    for temp in [1.0, 0.5, 3.0] {
        ops.push((
            format!("softmax(T={temp})"),
            vec![vec![3, 4]],
            false,
            Box::new(move |t, v| t.softmax(v[0], temp).unwrap()),
        ));
        ops.push((
            format!("log_softmax(T={temp})"),
            vec![vec![3, 4]],
            false,
            Box::new(move |t, v| t.log_softmax(v[0], temp).unwrap()),
        ));
    }
    ops
}

fn labels_for(seed: u64, b: usize, c: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    (0..b).map(|_| rng.random_range(0..c)).collect()
}

fn check_ops(instances: u64) -> Vec<CheckResult> {
    op_catalogue()
        .into_iter()
        .map(|(name, shapes, avoid_zero, op)| {
            let worst = (0..instances)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let inputs: Vec<Tensor> = shapes
                        .iter()
                        .map(|s| random_tensor(&mut rng, s, avoid_zero))
                        .collect();
                    let build = |tape: &Tape, v: &[Var]| project(tape, op(tape, v), seed);
                    max_scaled_error(&build, &inputs)
                })
                .fold(0.0, f64::max);
            CheckResult {
                name,
                instances,
                worst,
            }
        })
        .collect()
}

fn check_losses(instances: u64) -> Vec<CheckResult> {
    let names = ["cross_entropy", "kd_loss", "weighted_kd_loss", "total_loss"];
    let mut worst = [0.0f64; 4];
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let student = random_tensor(&mut rng, &[5, 3], false);
        let teacher = random_tensor(&mut rng, &[5, 3], false);
        let labels = labels_for(seed, 5, 3);
        let weights: Vec<f64> = (0..5).map(|i| if i % 2 == 0 { 1.0 } else { 2.5 }).collect();
        let temperature = [1.0, 2.0, 0.7][seed as usize % 3];
        let alpha = [0.0, 0.3, 1.0][seed as usize % 3];
        let inputs = [student];

        let ce = |t: &Tape, v: &[Var]| cross_entropy(t, v[0], &labels).unwrap();
        let kd = |t: &Tape, v: &[Var]| kd_loss(t, &teacher, v[0], temperature).unwrap().value;
        let wkd = |t: &Tape, v: &[Var]| {
            weighted_kd_loss(t, &teacher, v[0], &weights, temperature)
                .unwrap()
                .value
        };
        let total = |t: &Tape, v: &[Var]| {
            let c = cross_entropy(t, v[0], &labels).unwrap();
            let k = weighted_kd_loss(t, &teacher, v[0], &weights, temperature).unwrap();
            total_loss(t, c, &k, alpha).unwrap().0
        };
        let builders: [&LossBuilder<'_>; 4] = [&ce, &kd, &wkd, &total];
        for (w, b) in worst.iter_mut().zip(builders) {
            *w = w.max(max_scaled_error(b, &inputs));
        }
    }
    names
        .iter()
        .zip(worst)
        .map(|(n, worst)| CheckResult {
            name: n.to_string(),
            instances,
            worst,
        })
        .collect()
}

/// Whole-model check: cross-entropy of the logits w.r.t. every parameter.
fn check_model(desc: &ArchitectureDescriptor, instances: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let model = build_model(desc, seed).expect("valid descriptor");
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let rows = 3;
        let x = match desc {
            ArchitectureDescriptor::TinyTransformer { vocab_size, .. } => {
                let ids = (0..rows * desc.input_width())
                    .map(|_| rng.random_range(0..*vocab_size) as f64)
                    .collect();
                Tensor::new(vec![rows, desc.input_width()], ids).unwrap()
            }
            _ => random_tensor(&mut rng, &[rows, desc.input_width()], false),
        };
        let labels = labels_for(seed, rows, desc.n_classes());
        let names: Vec<String> = model.parameters().keys().cloned().collect();
        let params: Vec<Tensor> = model.parameters().values().cloned().collect();
        let build = |t: &Tape, v: &[Var]| {
            let bound = BoundParams::from_vars(names.iter().cloned().zip(v.iter().copied()));
            let logits = model.forward_on(t, &bound, &x).unwrap();
            cross_entropy(t, logits, &labels).unwrap()
        };
        worst = worst.max(max_scaled_error(&build, &params));
    }
    CheckResult {
        name: format!("{} end to end", desc.name()),
        instances,
        worst,
    }
}

/// Every tape op, every loss, and an MLP and a tiny transformer end to end,
/// each on `instances` seeded random instances.
pub fn standard_suite(instances: u64) -> Vec<CheckResult> {
    let mut out = check_ops(instances);
    out.extend(check_losses(instances));
    out.push(check_model(
        &ArchitectureDescriptor::Mlp {
            input_dim: 3,
            hidden: vec![4],
            n_classes: 3,
        },
        instances,
    ));
    out.push(check_model(
        &ArchitectureDescriptor::TinyTransformer {
            vocab_size: 7,
            seq_len: 3,
            dim: 4,
            ff_dim: 5,
            n_classes: 2,
        },
        instances,
    ));
    out
}
