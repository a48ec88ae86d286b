use serde::{Deserialize, Serialize};

use super::otsu::{multi_otsu, OtsuResult};
use crate::error::Result;

/// Quantile of sorted data, interpolating linearly between order statistics
/// at rank `(n - 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqrFence {
    pub q1: f64,
    pub q3: f64,
    /// `q1 - (q3 - q1)`
    pub threshold: f64,
}

pub fn iqr_fence(scores: &[f64]) -> Option<IqrFence> {
    if scores.is_empty() {
        return None;
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&s, 0.25);
    let q3 = quantile_sorted(&s, 0.75);
    Some(IqrFence { q1, q3, threshold: q1 - (q3 - q1) })
}

/// Indices of one sentence's RI scores strictly below the lower IQR fence.
pub fn filter_ri(scores: &[f64]) -> (Vec<usize>, Option<IqrFence>) {
    let Some(f) = iqr_fence(scores) else {
        return (vec![], None);
    };
    let idx = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < f.threshold)
        .map(|(i, _)| i)
        .collect();
    (idx, Some(f))
}

/// Indices with `s_kn < cutoff`.
pub fn filter_kn(scores: &[f64], cutoff: f64) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < cutoff)
        .map(|(i, _)| i)
        .collect()
}

/// Dataset-wide TR filtering: Otsu over the pooled scores, then every token
/// in the class of second-smallest mean is flagged. Classes are contiguous
/// value ranges, so that is class index 1.
pub fn filter_tr(per_example: &[&[f64]], k: usize, bins: usize) -> Result<(Vec<Vec<usize>>, OtsuResult)> {
    let pooled: Vec<f64> = per_example.iter().flat_map(|s| s.iter().copied()).collect();
    if pooled.is_empty() {
        return Ok((vec![vec![]; per_example.len()], OtsuResult::NoPartition));
    }
    let otsu = multi_otsu(&pooled, k, bins)?;
    let sets = per_example
        .iter()
        .map(|s| {
            s.iter()
                .enumerate()
                .filter(|(_, &v)| otsu.class_of(v) == Some(1))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    Ok((sets, otsu))
}
