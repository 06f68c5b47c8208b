//! Rank statistics and small descriptive helpers, generic over [`Scalar`].

use std::cmp::Ordering;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("only one class present among labels")]
    SingleClass,
    #[error("series is constant")]
    ConstantSeries,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("percentile must lie in [0, 100], got {0}")]
    BadPercentile(String),
}

fn check_finite<T: Scalar>(xs: &[T]) -> Result<(), StatsError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(StatsError::NonFinite(i)),
        None => Ok(()),
    }
}

/// 1-based ranks with ties receiving the mean of the ranks they span.
pub fn average_ranks<T: Scalar>(xs: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![T::zero(); xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean((i+1)..=j)
        let rank = T::of((i + 1 + j) as f64 / 2.0);
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve via the Mann–Whitney U statistic; tied scores
/// between a positive and a negative count one half.
pub fn roc_auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<T, StatsError> {
    if scores.len() != labels.len() {
        return Err(StatsError::LengthMismatch(scores.len(), labels.len()));
    }
    check_finite(scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(StatsError::SingleClass);
    }
    let ranks = average_ranks(scores);
    let rank_sum = ranks.iter().zip(labels).filter(|(_, &l)| l).fold(T::zero(), |acc, (&r, _)| acc + r);
    let n_pos_t = T::of(n_pos as f64);
    let u = rank_sum - n_pos_t * (n_pos_t + T::one()) / T::of(2.0);
    Ok(u / (n_pos_t * T::of(n_neg as f64)))
}

pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Result<T, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: a.len() });
    }
    check_finite(a)?;
    check_finite(b)?;
    let n = T::of(a.len() as f64);
    let ma = a.iter().fold(T::zero(), |s, &x| s + x) / n;
    let mb = b.iter().fold(T::zero(), |s, &x| s + x) / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    if saa == T::zero() || sbb == T::zero() {
        return Err(StatsError::ConstantSeries);
    }
    let r = sab / (saa * sbb).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman<T: Scalar>(a: &[T], b: &[T]) -> Result<T, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 3 {
        return Err(StatsError::TooFew { needed: 3, got: a.len() });
    }
    check_finite(a)?;
    check_finite(b)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Linear-interpolation percentile (the "linear" method: rank
/// `p/100 * (n-1)` over the sorted sample).
pub fn percentile<T: Scalar>(xs: &[T], p: T) -> Result<T, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    check_finite(xs)?;
    if !(p >= T::zero() && p <= T::of(100.0)) {
        return Err(StatsError::BadPercentile(format!("{p}")));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let pos = p / T::of(100.0) * T::of((sorted.len() - 1) as f64);
    let lo = pos.floor();
    let lo_idx = lo.to_usize().unwrap_or(0);
    let hi_idx = (lo_idx + 1).min(sorted.len() - 1);
    let frac = pos - lo;
    Ok(sorted[lo_idx] + (sorted[hi_idx] - sorted[lo_idx]) * frac)
}

pub fn mean<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().fold(T::zero(), |s, &x| s + x) / T::of(xs.len() as f64))
}

/// Sample standard deviation (n − 1 denominator); zero for a single value.
pub fn sample_std<T: Scalar>(xs: &[T]) -> Option<T> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(T::zero());
    }
    let ss = xs.iter().fold(T::zero(), |s, &x| s + (x - m) * (x - m));
    Some((ss / T::of((xs.len() - 1) as f64)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5, 0.5, 0.2], &[true, false, false]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.5f32, 0.5, 0.2], &[true, false, false]).unwrap(), 0.75f32);
    }

    #[test]
    fn auc_errors() {
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), Err(StatsError::SingleClass));
        assert_eq!(roc_auc(&[0.1], &[true, false]), Err(StatsError::LengthMismatch(1, 2)));
        assert_eq!(roc_auc(&[f64::NAN, 0.2], &[true, false]), Err(StatsError::NonFinite(0)));
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0f64, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spearman_errors() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(StatsError::LengthMismatch(3, 2)));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), Err(StatsError::ConstantSeries));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooFew { needed: 3, got: 2 }));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn percentile_linear() {
        let xs: Vec<f64> = (1..=5).map(f64::from).collect();
        assert_eq!(percentile(&xs, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&xs, 100.0).unwrap(), 5.0);
        assert_eq!(percentile(&xs, 80.0).unwrap(), 4.2);
        assert!(percentile(&xs, 101.0).is_err());
    }

    #[test]
    fn std_of_single_value_is_zero() {
        assert_eq!(sample_std(&[3.0]), Some(0.0));
        assert_eq!(sample_std::<f64>(&[]), None);
        assert!((sample_std(&[1.0, 3.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }
}
