use dcs_core::checkpoint::{Checkpoint, TrainingMetadata};
use dcs_core::config::DistillationConfig;
use dcs_core::data::{generate_synthetic, Features, GeneratorKind, LabeledDataset, Split, TaskSpec};
use dcs_core::engine::{
    compute_agreement, run_dcs, DcsRunState, RunOutcome, WeightingStrategy,
};
use dcs_core::losses::SampleWeightVector;
use dcs_core::model::{build_model, ArchitectureDescriptor, ClassifierModel};
use dcs_core::optim::OptimizerKind;
use dcs_core::Error;

fn config(strategy: WeightingStrategy, epochs: usize) -> DistillationConfig {
    let mut c = DistillationConfig::new(
        TaskSpec {
            generator: GeneratorKind::GaussianMixture {
                dim: 4,
                separation: 2.5,
            },
            n_train: 80,
            n_dev: 80,
            n_classes: 2,
            label_noise: 0.2,
            seed: 9,
        },
        ArchitectureDescriptor::Mlp {
            input_dim: 4,
            hidden: vec![8],
            n_classes: 2,
        },
        epochs,
    );
    c.strategy = strategy;
    c
}

fn teacher_for(c: &DistillationConfig, train: &LabeledDataset) -> ClassifierModel {
    let mut tc = c.clone();
    tc.strategy = WeightingStrategy::VanillaFt;
    tc.alpha = 1.0;
    let init = build_model(&c.architecture, 1000).unwrap();
    run_dcs(None, &init, train, None, &tc, 1000).unwrap().student
}

struct Fixture {
    train: LabeledDataset,
    dev: LabeledDataset,
    teacher: ClassifierModel,
    student_init: ClassifierModel,
}

fn fixture(c: &DistillationConfig) -> Fixture {
    let (train, dev) = generate_synthetic(&c.task).unwrap();
    let teacher = teacher_for(c, &train);
    let student_init = build_model(&c.architecture, 1).unwrap();
    Fixture {
        train,
        dev,
        teacher,
        student_init,
    }
}

fn run(f: &Fixture, c: &DistillationConfig, seed: u64) -> RunOutcome {
    run_dcs(Some(&f.teacher), &f.student_init, &f.train, Some(&f.dev), c, seed).unwrap()
}

/// A linear model whose logits ignore the input and always favor `class`.
fn constant_model(class: usize) -> ClassifierModel {
    let desc = ArchitectureDescriptor::Linear {
        input_dim: 4,
        n_classes: 2,
    };
    let mut m = build_model(&desc, 0).unwrap();
    m.parameter_mut("out.weight").unwrap().data_mut().fill(0.0);
    let bias = m.parameter_mut("out.bias").unwrap().data_mut();
    bias.fill(0.0);
    bias[class] = 1.0;
    m
}

#[test]
fn identical_models_agree_everywhere() {
    let c = config(WeightingStrategy::Dcs, 1);
    let f = fixture(&c);
    let map = compute_agreement(&f.teacher, &f.teacher.clone(), &f.train, 0).unwrap();
    assert_eq!(map.len(), f.train.len());
    assert!(map.agree.iter().all(|a| *a));
}

#[test]
fn opposite_constant_models_disagree_everywhere() {
    let c = config(WeightingStrategy::Dcs, 1);
    let (train, _) = generate_synthetic(&c.task).unwrap();
    let map = compute_agreement(&constant_model(0), &constant_model(1), &train, 0).unwrap();
    assert_eq!(map.disagreements(), train.len());
}

#[test]
fn disagreement_count_matches_per_sample_recount() {
    let c = config(WeightingStrategy::Dcs, 1);
    let f = fixture(&c);
    let map = compute_agreement(&f.teacher, &f.student_init, &f.train, 0).unwrap();
    let mut recount = 0;
    for i in 0..f.train.len() {
        let (x, _) = f.train.batch(&[i]).unwrap();
        if f.teacher.predict(&x).unwrap() != f.student_init.predict(&x).unwrap() {
            recount += 1;
        }
    }
    assert_eq!(map.disagreements(), recount);
}

#[test]
fn incompatible_models_are_a_config_error() {
    let c = config(WeightingStrategy::Dcs, 1);
    let (train, _) = generate_synthetic(&c.task).unwrap();
    let wide = build_model(
        &ArchitectureDescriptor::Linear {
            input_dim: 4,
            n_classes: 3,
        },
        0,
    )
    .unwrap();
    let err = compute_agreement(&constant_model(0), &wide, &train, 0).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn warm_up_weights_and_one_reweight_per_epoch() {
    for strategy in WeightingStrategy::ALL {
        let c = config(strategy, 4);
        let f = fixture(&c);
        let teacher_hash = f.teacher.parameter_hash();
        let out = run(&f, &c, 3);
        assert_eq!(f.teacher.parameter_hash(), teacher_hash, "{strategy}");
        assert_eq!(out.history.len(), 4);
        assert!(out.history[0].weights.weights().iter().all(|w| *w == 1.0), "{strategy}");
        let expected = if strategy.uses_teacher() { 3 } else { 0 };
        assert_eq!(out.reweight_count, expected, "{strategy}");
        for (e, r) in out.history.iter().enumerate() {
            assert_eq!(r.metrics.epoch, e);
            assert_eq!(r.weights.epoch_assigned(), e);
        }
    }
}

#[test]
fn weights_partition_by_agreement() {
    let lambda = 3.0;
    for strategy in [WeightingStrategy::Dcs, WeightingStrategy::DcsReverse] {
        let mut c = config(strategy, 4);
        c.lambda = lambda;
        let f = fixture(&c);
        let out = run(&f, &c, 5);
        for r in &out.history[1..] {
            let agreement = r.agreement.as_ref().unwrap();
            for (w, agree) in r.weights.weights().iter().zip(&agreement.agree) {
                let emphasized = match strategy {
                    WeightingStrategy::Dcs => !agree,
                    _ => *agree,
                };
                assert_eq!(*w, if emphasized { lambda } else { 1.0 });
            }
        }
    }
}

#[test]
fn random_strategy_matches_the_discordant_budget() {
    let c = config(WeightingStrategy::DcsRandom, 4);
    let f = fixture(&c);
    let out = run(&f, &c, 5);
    for r in &out.history[1..] {
        let budget = r.agreement.as_ref().unwrap().disagreements();
        assert_eq!(r.weights.emphasized_count(), budget);
        assert_eq!(r.metrics.disagreements, Some(budget));
    }
}

#[test]
fn unit_weights_every_epoch_equal_no_weighting() {
    let c = config(WeightingStrategy::Dcs, 4);
    let f = fixture(&c);

    let mut forced = DcsRunState::new(Some(&f.teacher), f.student_init.clone(), &f.train, &c, 7).unwrap();
    for e in 0..c.epochs {
        forced.prepare_epoch(&f.train, &c).unwrap();
        forced
            .set_weights(SampleWeightVector::uniform(f.train.len(), e))
            .unwrap();
        forced.train_epoch(&f.train, Some(&f.dev), &c).unwrap();
    }
    let forced = forced.finish();

    let mut nc = c.clone();
    nc.strategy = WeightingStrategy::NoWeighting;
    let plain = run(&f, &nc, 7);

    assert_eq!(forced.student.parameter_hash(), plain.student.parameter_hash());
    for (a, b) in forced.history.iter().zip(&plain.history) {
        assert_eq!(a.metrics.total_loss.to_bits(), b.metrics.total_loss.to_bits());
        assert_eq!(a.metrics.dev_accuracy, b.metrics.dev_accuracy);
    }
}

#[test]
fn alpha_one_matches_vanilla_fine_tuning_bitwise() {
    let mut c = config(WeightingStrategy::Dcs, 4);
    c.alpha = 1.0;
    let f = fixture(&c);
    let dcs = run(&f, &c, 11);

    let mut vc = c.clone();
    vc.strategy = WeightingStrategy::VanillaFt;
    let vanilla = run_dcs(None, &f.student_init, &f.train, Some(&f.dev), &vc, 11).unwrap();

    assert_eq!(dcs.student.parameter_hash(), vanilla.student.parameter_hash());
    for (a, b) in dcs.history.iter().zip(&vanilla.history) {
        assert_eq!(a.metrics.total_loss.to_bits(), b.metrics.total_loss.to_bits());
        assert_eq!(a.metrics.ce_loss.to_bits(), b.metrics.ce_loss.to_bits());
        assert_eq!(a.metrics.dev_accuracy, b.metrics.dev_accuracy);
        assert_eq!(a.metrics.dev_mcc, b.metrics.dev_mcc);
    }
}

#[test]
fn vanilla_needs_no_teacher_but_distillation_does() {
    let c = config(WeightingStrategy::VanillaFt, 2);
    let (train, dev) = generate_synthetic(&c.task).unwrap();
    let init = build_model(&c.architecture, 1).unwrap();
    let out = run_dcs(None, &init, &train, Some(&dev), &c, 1).unwrap();
    assert!(out.history.iter().all(|r| r.agreement.is_none()));

    let kd = config(WeightingStrategy::Dcs, 2);
    let err = run_dcs(None, &init, &train, Some(&dev), &kd, 1).unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("train-teacher")));
}

#[test]
fn single_epoch_is_plain_distillation() {
    let c = config(WeightingStrategy::Dcs, 1);
    let f = fixture(&c);
    let dcs = run(&f, &c, 2);
    let mut kc = c.clone();
    kc.strategy = WeightingStrategy::PureKd;
    let kd = run(&f, &kc, 2);
    assert_eq!(dcs.student.parameter_hash(), kd.student.parameter_hash());
    assert_eq!(dcs.metrics(), kd.metrics());
}

#[test]
fn repeated_runs_are_identical() {
    for strategy in [WeightingStrategy::Dcs, WeightingStrategy::DcsRandom] {
        let c = config(strategy, 3);
        let f = fixture(&c);
        let a = run(&f, &c, 4);
        let b = run(&f, &c, 4);
        assert_eq!(a.metrics(), b.metrics());
        assert_eq!(a.student.parameter_hash(), b.student.parameter_hash());
        let other = run(&f, &c, 5);
        assert_ne!(a.student.parameter_hash(), other.student.parameter_hash());
    }
}

#[test]
fn consensus_from_a_shared_perfect_fit_never_reweights() {
    let mut c = config(WeightingStrategy::Dcs, 4);
    c.task.label_noise = 0.0;
    c.task.generator = GeneratorKind::GaussianMixture {
        dim: 4,
        separation: 12.0,
    };
    c.architecture = ArchitectureDescriptor::Linear {
        input_dim: 4,
        n_classes: 2,
    };
    let (train, dev) = generate_synthetic(&c.task).unwrap();
    let mut tc = c.clone();
    tc.strategy = WeightingStrategy::VanillaFt;
    tc.epochs = 10;
    let teacher = run_dcs(None, &build_model(&c.architecture, 0).unwrap(), &train, None, &tc, 0)
        .unwrap()
        .student;
    let truth = train.labels();
    let fit = dcs_core::engine::dataset_predictions(&teacher, &train).unwrap();
    assert_eq!(fit, truth, "teacher must fit the separable set");

    let out = run_dcs(Some(&teacher), &teacher, &train, Some(&dev), &c, 0).unwrap();
    for r in &out.history {
        assert_eq!(r.metrics.disagreements, Some(0));
        assert!(r.weights.weights().iter().all(|w| *w == 1.0));
    }
}

#[test]
fn epoch_one_disagreements_replay_from_saved_checkpoints() {
    let c = config(WeightingStrategy::Dcs, 2);
    let f = fixture(&c);
    let dir = tempfile::tempdir().unwrap();
    let meta = TrainingMetadata {
        epochs: 1,
        seed: 6,
        task_id: c.task.id(),
    };

    let mut state = DcsRunState::new(Some(&f.teacher), f.student_init.clone(), &f.train, &c, 6).unwrap();
    state.run_epoch(&f.train, Some(&f.dev), &c).unwrap();
    let student_path = dir.path().join("student_epoch0.json");
    let teacher_path = dir.path().join("teacher.json");
    Checkpoint::from_model(&state.student, meta.clone()).save(&student_path).unwrap();
    Checkpoint::from_model(&f.teacher, meta).save(&teacher_path).unwrap();
    let recorded = state.run_epoch(&f.train, Some(&f.dev), &c).unwrap().metrics.disagreements;

    let student = Checkpoint::load(&student_path).unwrap().to_model().unwrap();
    let teacher = Checkpoint::load(&teacher_path).unwrap().to_model().unwrap();
    let mut recount = 0;
    for i in 0..f.train.len() {
        let (x, _) = f.train.batch(&[i]).unwrap();
        if teacher.predict(&x).unwrap() != student.predict(&x).unwrap() {
            recount += 1;
        }
    }
    assert_eq!(recorded, Some(recount));
}

#[test]
fn best_epoch_is_earliest_maximum() {
    let c = config(WeightingStrategy::Dcs, 5);
    let f = fixture(&c);
    let out = run(&f, &c, 8);
    let best = out.best_epoch().unwrap();
    let max = out
        .history
        .iter()
        .map(|r| r.metrics.dev_accuracy.unwrap())
        .fold(f64::MIN, f64::max);
    assert_eq!(best.dev_accuracy, Some(max));
    let first = out
        .history
        .iter()
        .position(|r| r.metrics.dev_accuracy == Some(max))
        .unwrap();
    assert_eq!(best.epoch, first);
}

#[test]
fn diverging_loss_aborts_with_diagnostics() {
    let items: Vec<(Features, usize)> = (0..8)
        .map(|i| (Features::Dense(vec![1e200 * (i as f64 + 1.0); 4]), i % 2))
        .collect();
    let train = LabeledDataset::new(items, 2, Split::Train, 0).unwrap();
    let mut c = config(WeightingStrategy::VanillaFt, 3);
    c.architecture = ArchitectureDescriptor::Linear {
        input_dim: 4,
        n_classes: 2,
    };
    c.optimizer = OptimizerKind::Sgd;
    c.learning_rate = 1e200;
    c.batch_size = 1;
    let init = build_model(&c.architecture, 0).unwrap();
    let err = run_dcs(None, &init, &train, None, &c, 0).unwrap_err();
    match err {
        Error::NonFinite { epoch, batch, .. } => {
            assert_eq!(epoch, 0);
            assert!(batch > 0);
        }
        other => panic!("expected a numerical abort, got {other}"),
    }
}
