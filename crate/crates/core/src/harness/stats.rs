//! Summary statistics over per-seed values.

use crate::{Error, Result};

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Interquartile mean: the mean of the values within `[Q1, Q3]` inclusive.
/// Two values leave no sample inside the interpolated quartiles; the median
/// (their mean) is returned then.
pub fn compute_iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Usage("interquartile mean of an empty set".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("interquartile mean over non-finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let inner: Vec<f64> = sorted.iter().copied().filter(|v| *v >= q1 && *v <= q3).collect();
    Ok(mean(&inner).unwrap_or_else(|| quantile_sorted(&sorted, 0.5)))
}
