//! Tied rankings and rank correlation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("rank vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 items, got {0}")]
    TooShort(usize),
}

/// Real-valued ranks, 1 = best, ties sharing their average rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankVector(pub Vec<f64>);

impl RankVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tied-ranking identity: ranks sum to n(n+1)/2 and lie in [1, n].
    pub fn is_valid(&self) -> bool {
        let n = self.0.len() as f64;
        let sum: f64 = self.0.iter().sum();
        self.0.iter().all(|&r| (1.0..=n).contains(&r)) && (sum - n * (n + 1.0) / 2.0).abs() < 1e-9
    }
}

/// Ranks `0..n` under `better`, where `Ordering::Less` means the first
/// argument ranks ahead. Equal items receive the mean of their positions.
pub fn average_ranks_by<F>(n: usize, mut better: F) -> RankVector
where
    F: FnMut(usize, usize) -> Ordering,
{
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| better(a, b));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && better(order[start], order[end]) == Ordering::Equal {
            end += 1;
        }
        // Positions start+1 ..= end share their mean.
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    RankVector(ranks)
}

/// Ranks values so that the largest is rank 1.
pub fn descending_ranks<T: Scalar>(values: &[T]) -> RankVector {
    average_ranks_by(values.len(), |a, b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal))
}

/// Pearson correlation of two rank vectors (tie-corrected Spearman).
/// Zero variance in either input gives 0.
pub fn spearman<T: Scalar>(a: &[T], b: &[T]) -> Result<T, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::TooShort(a.len()));
    }
    let n = T::from_usize_lossy(a.len());
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return Ok(T::zero());
    }
    let rho = sab / (saa.sqrt() * sbb.sqrt());
    Ok(rho.max(-T::one()).min(T::one()))
}

/// `spearman` over [`RankVector`]s.
pub fn rank_correlation(a: &RankVector, b: &RankVector) -> Result<f64, StatsError> {
    spearman(&a.0, &b.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_reversed() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let r = [4.0f64, 3.0, 2.0, 1.0];
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &r).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn textbook_value() {
        let rho = spearman(&[1.0f64, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-12);
    }

    #[test]
    fn constant_gives_zero() {
        assert_eq!(spearman(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert_eq!(spearman(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch(2, 1)));
        assert_eq!(spearman::<f64>(&[1.0], &[1.0]), Err(StatsError::TooShort(1)));
    }

    #[test]
    fn ties_get_average_ranks() {
        let r = descending_ranks(&[5.0, 7.0, 5.0, 1.0]);
        assert_eq!(r.0, vec![2.5, 1.0, 2.5, 4.0]);
        assert!(r.is_valid());
        let all = descending_ranks(&[0.0f32; 4]);
        assert_eq!(all.0, vec![2.5; 4]);
    }

    #[test]
    fn f32_agrees() {
        let a = [1.0f32, 2.0, 3.0, 4.0, 5.0];
        let b = [1.0f32, 3.0, 2.0, 5.0, 4.0];
        assert!((spearman(&a, &b).unwrap() - 0.8).abs() < 1e-6);
    }
}
