//! Partition agreement and estimation accuracy.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Result, WccError};
use crate::model::Partition;

/// Pair-count confusion between a reference and an estimated partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    /// Same group in both.
    pub tp: u64,
    /// Different groups in both.
    pub tn: u64,
    /// Different in the reference, merged in the estimate.
    pub fp: u64,
    /// Same in the reference, split in the estimate.
    pub fn_: u64,
}

impl PairCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn rand_index(&self) -> f64 {
        if self.total() == 0 {
            return 1.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

fn check_same_size(a: &Partition, b: &Partition) -> Result<()> {
    if a.m() != b.m() {
        return Err(WccError::Config(format!(
            "partitions cover {} and {} locations",
            a.m(),
            b.m()
        )));
    }
    Ok(())
}

/// Exhaustive pair counts; `truth` is the reference partition.
pub fn rand_index_counts(truth: &Partition, estimate: &Partition) -> Result<PairCounts> {
    check_same_size(truth, estimate)?;
    let (a, b) = (&truth.assignment, &estimate.assignment);
    let mut c = PairCounts { tp: 0, tn: 0, fp: 0, fn_: 0 };
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
            }
        }
    }
    Ok(c)
}

/// Adjusted Rand index with a flag for the degenerate case where the
/// maximum and expected index coincide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ari {
    pub value: f64,
    pub degenerate: bool,
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// ARI via the contingency table under the permutation model. Not clamped
/// to `[0, 1]`.
pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> Result<Ari> {
    check_same_size(a, b)?;
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    for (&ga, &gb) in a.assignment.iter().zip(&b.assignment) {
        *table.entry((ga, gb)).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = a.group_sizes.iter().map(|&n| choose2(n as u64)).sum();
    let sum_b: f64 = b.group_sizes.iter().map(|&n| choose2(n as u64)).sum();
    let total = choose2(a.m() as u64);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom.abs() <= 1e-12 * total.max(1.0) {
        let same = rand_index_counts(a, b)?;
        let identical = same.fp == 0 && same.fn_ == 0;
        return Ok(Ari {
            value: if identical { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    Ok(Ari {
        value: (index - expected) / denom,
        degenerate: false,
    })
}

/// `sqrt(mean |est - truth|²)`.
pub fn rmse_mu(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(WccError::Config("rmse inputs must be nonempty and of equal length".into()));
    }
    let ss: f64 = estimates.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum();
    Ok((ss / estimates.len() as f64).sqrt())
}

/// `sqrt((1/m) Σ_i ||β̂_i - β_i||²)`.
pub fn rmse_beta(beta_hat: &DMatrix<f64>, beta_true: &DMatrix<f64>) -> Result<f64> {
    if beta_hat.shape() != beta_true.shape() || beta_hat.nrows() == 0 {
        return Err(WccError::Config("rmse inputs must have equal nonempty shapes".into()));
    }
    Ok(((beta_hat - beta_true).norm_squared() / beta_hat.nrows() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn part(labels: &[usize]) -> Partition {
        Partition::from_labels(labels)
    }

    #[test]
    fn pair_counts() {
        let c = rand_index_counts(&part(&[0, 0, 1]), &part(&[0, 1, 2])).unwrap();
        assert_eq!(c, PairCounts { tp: 0, tn: 2, fp: 0, fn_: 1 });
        let same = rand_index_counts(&part(&[0, 1, 1, 2]), &part(&[5, 3, 3, 4])).unwrap();
        assert_eq!((same.fp, same.fn_), (0, 0));
        assert!(rand_index_counts(&part(&[0, 1]), &part(&[0])).is_err());
    }

    #[test]
    fn ari_reference_cases() {
        let a = part(&[0, 0, 0, 1, 1, 1]);
        assert_eq!(adjusted_rand_index(&a, &a).unwrap().value, 1.0);
        let one = Partition::single_group(5);
        let single = Partition::singletons(5);
        let ari = adjusted_rand_index(&one, &single).unwrap();
        assert_eq!(ari.value, 0.0);
        assert!(!ari.degenerate);
        let d = adjusted_rand_index(&one, &one).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.value, 1.0);
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse_mu(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse_mu(&[0.3, -0.4], &[0.0, 0.0]).unwrap() - 0.125f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse_mu(&[0.3], &[0.0]).unwrap(), rmse_mu(&[-0.3], &[0.0]).unwrap());
        let bh = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert_eq!(rmse_beta(&bh, &DMatrix::zeros(1, 2)).unwrap(), 5.0);
        let b1 = DMatrix::from_column_slice(2, 1, &[0.3, -0.4]);
        assert_eq!(
            rmse_beta(&b1, &DMatrix::zeros(2, 1)).unwrap(),
            rmse_mu(&[0.3, -0.4], &[0.0, 0.0]).unwrap()
        );
    }

    proptest! {
        #[test]
        fn ari_symmetric_and_relabel_invariant(
            labels in prop::collection::vec((0usize..4, 0usize..3), 2..20),
            shift in 1usize..7,
        ) {
            let a: Vec<usize> = labels.iter().map(|l| l.0).collect();
            let b: Vec<usize> = labels.iter().map(|l| l.1).collect();
            let pa = part(&a);
            let pb = part(&b);
            let ab = adjusted_rand_index(&pa, &pb).unwrap().value;
            let ba = adjusted_rand_index(&pb, &pa).unwrap().value;
            prop_assert!((ab - ba).abs() < 1e-12);
            let relabeled: Vec<usize> = b.iter().map(|l| (l + shift) * 13 % 17).collect();
            let pr = part(&relabeled);
            prop_assert!((adjusted_rand_index(&pa, &pr).unwrap().value - ab).abs() < 1e-12);
            let c = rand_index_counts(&pa, &pb).unwrap();
            prop_assert_eq!(c.total() as usize, a.len() * (a.len() - 1) / 2);
            prop_assert!((0.0..=1.0).contains(&c.rand_index()));
        }
    }
}
