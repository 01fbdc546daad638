//! Classification metrics.

/// Fraction of positions where `pred == truth`. Empty input gives 0.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / pred.len() as f64
}

/// `counts[truth][pred]`.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], n_classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t][p] += 1;
    }
    m
}

/// Matthews correlation coefficient for any number of classes.
///
/// Uses the confusion-matrix form `(c·s − Σ p_k t_k) / sqrt((s² − Σ p_k²)(s² − Σ t_k²))`,
/// which reduces to the binary `(TP·TN − FP·FN) / sqrt(...)` for two classes.
/// A zero denominator yields 0.
pub fn mcc_from_confusion(m: &[Vec<u64>]) -> f64 {
    let k = m.len();
    let s: f64 = m.iter().flatten().map(|&v| v as f64).sum();
    let c: f64 = (0..k).map(|i| m[i][i] as f64).sum();
    let t: Vec<f64> = (0..k).map(|i| m[i].iter().map(|&v| v as f64).sum()).collect();
    let p: Vec<f64> = (0..k).map(|j| m.iter().map(|r| r[j] as f64).sum()).collect();
    let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|a| a * a).sum();
    let tt: f64 = t.iter().map(|a| a * a).sum();
    let denom = ((s * s - pp) * (s * s - tt)).sqrt();
    if denom == 0.0 || !denom.is_finite() {
        0.0
    } else {
        ((c * s - pt) / denom).clamp(-1.0, 1.0)
    }
}

pub fn mcc(pred: &[usize], truth: &[usize], n_classes: usize) -> f64 {
    mcc_from_confusion(&confusion_matrix(pred, truth, n_classes))
}

/// Mean and sample standard deviation (n − 1 denominator; 0 for n < 2).
pub fn mean_stdev(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_textbook(tp: f64, tn: f64, fp: f64, fn_: f64) -> f64 {
        let d = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        if d == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / d
        }
    }

    #[test]
    fn mcc_matches_binary_textbook() {
        // rows are truth, columns prediction; class 1 is "positive"
        for (tp, tn, fp, fn_) in [(5, 3, 2, 1), (10, 10, 0, 0), (0, 0, 4, 6), (7, 1, 3, 9)] {
            let m = vec![vec![tn, fp], vec![fn_, tp]];
            let got = mcc_from_confusion(&m);
            let want = binary_textbook(tp as f64, tn as f64, fp as f64, fn_ as f64);
            assert!((got - want).abs() < 1e-12, "{m:?}: {got} vs {want}");
        }
        assert!((mcc_from_confusion(&[vec![10, 0], vec![0, 10]]) - 1.0).abs() < 1e-15);
        assert!((mcc_from_confusion(&[vec![0, 10], vec![10, 0]]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn mcc_degenerate_is_zero() {
        // everything predicted as one class
        assert_eq!(mcc(&[0, 0, 0, 0], &[0, 1, 0, 1], 2), 0.0);
        // everything is one class and predicted so
        assert_eq!(mcc(&[1, 1, 1], &[1, 1, 1], 2), 0.0);
        assert_eq!(mcc(&[], &[], 3), 0.0);
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]), 0.75);
    }

    #[test]
    fn mean_stdev_values() {
        let (m, s) = mean_stdev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_stdev(&[3.0]), (3.0, 0.0));
    }
}
