//! Classification metrics: rank-based AUC with midrank tie handling, and
//! thresholded accuracy.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("AUC needs both classes present (got {n_pos} positives, {n_neg} negatives)")]
    SingleClass { n_pos: usize, n_neg: usize },
}

/// Midranks (average rank for ties, 1-based) of the given values.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(equal).
///
/// Labels are 1 for the positive class (normal) and 0 otherwise.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass { n_pos, n_neg });
    }
    let ranks = midranks(scores);
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fraction of correct decisions at the given threshold; scores at the
/// threshold exactly are classified as 1.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    assert_eq!(scores.len(), labels.len());
    if scores.is_empty() {
        return 0.0;
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| {
            let decision = if s >= threshold { 1 } else { 0 };
            decision == l
        })
        .count();
    correct as f64 / scores.len() as f64
}

/// Brute-force AUC over all positive/negative pairs; the oracle for [`auc`].
pub fn auc_bruteforce(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l != 1)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricError::SingleClass {
            n_pos: pos.len(),
            n_neg: neg.len(),
        });
    }
    let mut total = 0.0;
    for &p in &pos {
        for &q in &neg {
            total += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(total / (pos.len() * neg.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn perfect_ranking_scores_one() {
        let auc = auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn constant_scores_give_half() {
        let auc = auc(&[0.5, 0.5, 0.5, 0.5], &[0, 1, 0, 1]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn four_point_example() {
        let auc = auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert!((auc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn matches_bruteforce_with_ties() {
        let mut rng = StdRng::seed_from_u64(77);
        for trial in 0..500 {
            let n = rng.gen_range(2..=50);
            // Coarse grid provokes plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..7) as f64 / 6.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            match (auc(&scores, &labels), auc_bruteforce(&scores, &labels)) {
                (Ok(a), Ok(b)) => assert!((a - b).abs() < 1e-12, "trial {trial}: {a} vs {b}"),
                (Err(_), Err(_)) => {}
                (a, b) => panic!("trial {trial}: disagreement {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn auc_complement_sums_to_one_without_ties() {
        let mut rng = StdRng::seed_from_u64(78);
        let scores: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        let a = auc(&scores, &labels).unwrap();
        let b = auc(&scores, &flipped).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let mut rng = StdRng::seed_from_u64(79);
        let scores: Vec<f64> = (0..30).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let labels: Vec<u8> = (0..30).map(|_| rng.gen_range(0..2) as u8).collect();
        let base = auc(&scores, &labels);
        let warped: Vec<f64> = scores.iter().map(|&s| (s * 0.5).exp() + s.powi(3)).collect();
        let after = auc(&warped, &labels);
        match (base, after) {
            (Ok(a), Ok(b)) => assert!((a - b).abs() < 1e-12),
            _ => panic!("unexpected class degeneracy"),
        }
    }

    #[test]
    fn accuracy_boundary_goes_to_class_one() {
        // score exactly at the threshold classifies as 1.
        let acc = accuracy(&[0.5, 0.5], &[1, 0], 0.5);
        assert_eq!(acc, 0.5);
        let acc = accuracy(&[1.0, 0.0], &[1, 0], 0.5);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn random_scores_on_balanced_labels_near_half() {
        let mut rng = StdRng::seed_from_u64(80);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let acc = accuracy(&scores, &labels, 0.5);
        assert!((acc - 0.5).abs() < 0.02, "acc {acc}");
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            auc(&[0.4, 0.6], &[1, 1]),
            Err(MetricError::SingleClass { .. })
        ));
    }
}
