use dcs_core::engine::{assign_weights, AgreementMap, WeightingStrategy};
use dcs_core::losses::{combine, cross_entropy, kd_loss, total_loss, weighted_kd_loss};
use dcs_core::model::argmax_rows;
use dcs_core::tensor::{log_softmax, softmax, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logits_strategy(max_abs: f64) -> impl Strategy<Value = Tensor> {
    (1usize..6, 2usize..6).prop_flat_map(move |(b, c)| {
        prop::collection::vec(-max_abs..max_abs, b * c)
            .prop_map(move |d| Tensor::new(vec![b, c], d).unwrap())
    })
}

fn pair_strategy() -> impl Strategy<Value = (Tensor, Tensor)> {
    (1usize..6, 2usize..6).prop_flat_map(|(b, c)| {
        (
            prop::collection::vec(-5.0..5.0f64, b * c),
            prop::collection::vec(-5.0..5.0f64, b * c),
        )
            .prop_map(move |(t, s)| {
                (
                    Tensor::new(vec![b, c], t).unwrap(),
                    Tensor::new(vec![b, c], s).unwrap(),
                )
            })
    })
}

fn kd_value(teacher: &Tensor, student: &Tensor, weights: Option<&[f64]>) -> (f64, Vec<f64>) {
    let tape = Tape::new();
    let s = tape.constant(student.clone());
    let kd = match weights {
        Some(w) => weighted_kd_loss(&tape, teacher, s, w, 1.0).unwrap(),
        None => kd_loss(&tape, teacher, s, 1.0).unwrap(),
    };
    (tape.value(kd.value).item(), kd.per_sample)
}

fn random_batch(rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let b = rng.random_range(1..12);
    let c = rng.random_range(2..6);
    let mut draw = || -> Tensor {
        let d = (0..b * c).map(|_| rng.random_range(-4.0..4.0)).collect();
        Tensor::new(vec![b, c], d).unwrap()
    };
    (draw(), draw())
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_even_for_extreme_logits(x in logits_strategy(500.0), t in 0.2..5.0f64) {
        let p = softmax(&x, t).unwrap();
        prop_assert!(p.all_finite());
        for r in 0..p.rows() {
            let s: f64 = p.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_log_softmax_is_softmax(x in logits_strategy(50.0), t in 0.2..5.0f64) {
        let p = softmax(&x, t).unwrap();
        let lp = log_softmax(&x, t).unwrap();
        for (a, b) in p.data().iter().zip(lp.data()) {
            prop_assert!((a - b.exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn all_ones_weights_reproduce_plain_kd((t, s) in pair_strategy()) {
        let ones = vec![1.0; t.rows()];
        let (plain, _) = kd_value(&t, &s, None);
        let (weighted, _) = kd_value(&t, &s, Some(&ones));
        prop_assert!((plain - weighted).abs() <= 1e-14);
    }

    #[test]
    fn concordant_batches_ignore_lambda((t, s) in pair_strategy(), lambda in 1.01..10.0f64) {
        // make the student agree with the teacher by copying the teacher's argmax pattern
        let tp = argmax_rows(&t);
        let mut s = s;
        let c = s.last_dim();
        for (r, &k) in tp.iter().enumerate() {
            s.data_mut()[r * c + k] = 100.0;
        }
        let map = AgreementMap::from_predictions(tp, argmax_rows(&s), 1);
        prop_assert_eq!(map.disagreements(), 0);
        let w = assign_weights(&map, WeightingStrategy::Dcs, lambda, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (plain, _) = kd_value(&t, &s, None);
        let (weighted, _) = kd_value(&t, &s, Some(w.weights()));
        prop_assert!((plain - weighted).abs() <= 1e-14);
    }

    #[test]
    fn weighted_kd_strictly_increases_with_lambda((t, s) in pair_strategy(), l1 in 1.01..5.0f64, dl in 0.01..5.0f64) {
        let map = AgreementMap::from_predictions(argmax_rows(&t), argmax_rows(&s), 1);
        prop_assume!(map.disagreements() > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w1 = assign_weights(&map, WeightingStrategy::Dcs, l1, &mut rng).unwrap();
        let w2 = assign_weights(&map, WeightingStrategy::Dcs, l1 + dl, &mut rng).unwrap();
        let (a, per) = kd_value(&t, &s, Some(w1.weights()));
        let nonzero = map.agree.iter().zip(&per).any(|(ag, k)| !ag && *k > 0.0);
        prop_assume!(nonzero);
        let (b, _) = kd_value(&t, &s, Some(w2.weights()));
        prop_assert!(b > a);
    }

    #[test]
    fn total_is_the_convex_combination(ce in 0.0..10.0f64, kd in 0.0..10.0f64) {
        for k in 0..=100 {
            let alpha = k as f64 / 100.0;
            let v = combine(ce, kd, alpha).unwrap();
            prop_assert!((v - (alpha * ce + (1.0 - alpha) * kd)).abs() <= 1e-12);
        }
        prop_assert_eq!(combine(ce, kd, 1.0).unwrap().to_bits(), ce.to_bits());
        prop_assert_eq!(combine(ce, kd, 0.0).unwrap().to_bits(), kd.to_bits());
    }
}

#[test]
fn kd_is_minimized_by_matching_the_teacher() {
    // cross-entropy of p against q is at least the entropy of p
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (t, s) = random_batch(&mut rng);
        let (_, per_q) = kd_value(&t, &s, None);
        let (_, per_p) = kd_value(&t, &t, None);
        for (q, p) in per_q.iter().zip(&per_p) {
            assert!(q >= &(p - 1e-12), "{q} < {p}");
        }
    }
}

#[test]
fn weighted_kd_decomposes_into_plain_plus_discordant_excess() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..100 {
        let (t, s) = random_batch(&mut rng);
        let lambda = rng.random_range(1.5..6.0);
        let map = AgreementMap::from_predictions(argmax_rows(&t), argmax_rows(&s), 1);
        let w = assign_weights(&map, WeightingStrategy::Dcs, lambda, &mut rng).unwrap();
        let (weighted, per) = kd_value(&t, &s, Some(w.weights()));
        let (plain, _) = kd_value(&t, &s, None);
        let b = t.rows() as f64;
        let discordant: f64 = map
            .agree
            .iter()
            .zip(&per)
            .filter(|(a, _)| !**a)
            .map(|(_, k)| k / b)
            .sum();
        let expected = plain + (lambda - 1.0) * discordant;
        assert!((weighted - expected).abs() <= 1e-10, "batch {i}: {weighted} vs {expected}");
    }
}

#[test]
fn total_loss_on_tape_matches_combination_and_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (t, s) = random_batch(&mut rng);
    let labels: Vec<usize> = (0..t.rows()).map(|_| rng.random_range(0..t.last_dim())).collect();
    for k in 0..=20 {
        let alpha = k as f64 / 20.0;
        let tape = Tape::new();
        let x = tape.constant(s.clone());
        let ce = cross_entropy(&tape, x, &labels).unwrap();
        let kd = kd_loss(&tape, &t, x, 1.0).unwrap();
        let (total, br) = total_loss(&tape, ce, &kd, alpha).unwrap();
        let v = tape.value(total).item();
        assert!((v - (alpha * br.ce + (1.0 - alpha) * br.kd)).abs() <= 1e-12);
        if alpha == 1.0 {
            assert_eq!(v.to_bits(), br.ce.to_bits());
        }
        if alpha == 0.0 {
            assert_eq!(v.to_bits(), br.kd.to_bits());
        }
    }
}

#[test]
fn out_of_range_alpha_and_lambda_are_rejected() {
    assert!(combine(1.0, 1.0, -0.1).is_err());
    assert!(combine(1.0, 1.0, 1.1).is_err());
    let map = AgreementMap::from_predictions(vec![0, 1], vec![1, 1], 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for strategy in [
        WeightingStrategy::Dcs,
        WeightingStrategy::DcsReverse,
        WeightingStrategy::DcsRandom,
    ] {
        assert!(assign_weights(&map, strategy, 1.0, &mut rng).is_err());
    }
}
