use serde::{Deserialize, Serialize};

use crate::error::{Result, XtfError};

/// Equal-width histogram of `values` over `[min, max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(XtfError::Input("histogram of an empty set".into()));
        }
        if bins == 0 {
            return Err(XtfError::Config("histogram needs at least one bin".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(XtfError::NonFinite(format!("histogram value {v}")));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut h = Histogram { min, max, counts: vec![0; bins] };
        for &v in values {
            let b = h.bin(v);
            h.counts[b] += 1;
        }
        Ok(h)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.bins() as f64
    }

    /// Bin index of `v`; the maximum lands in the last bin.
    pub fn bin(&self, v: f64) -> usize {
        if self.max == self.min {
            return 0;
        }
        let i = ((v - self.min) / (self.max - self.min) * self.bins() as f64).floor();
        (i.max(0.0) as usize).min(self.bins() - 1)
    }

    /// Left edge of bin `i`.
    pub fn edge(&self, i: usize) -> f64 {
        self.min + i as f64 * self.width()
    }
}

/// Between-class variance from exact per-class (count, Σ bin index) totals,
/// in squared value units. Empty classes contribute nothing.
pub fn between_class_variance(classes: &[(u64, u64)], width: f64) -> f64 {
    let n: u64 = classes.iter().map(|c| c.0).sum();
    let s: u64 = classes.iter().map(|c| c.1).sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let mu = s as f64 / n;
    let mut var = 0.0;
    for &(c, sum) in classes {
        if c == 0 {
            continue;
        }
        let m = sum as f64 / c as f64 - mu;
        var += c as f64 / n * m * m;
    }
    var * width * width
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OtsuResult {
    /// Every value is the same; there is nothing to separate.
    NoPartition,
    Partition {
        /// Bin indices `c_1 < … < c_{k-1}`; class `m` holds bins `[c_m, c_{m+1})`.
        cuts: Vec<usize>,
        /// Threshold values, the left edges of the cut bins.
        thresholds: Vec<f64>,
        sigma_b2: f64,
        #[serde(skip)]
        histogram: Option<Histogram>,
    },
}

impl OtsuResult {
    pub fn thresholds(&self) -> Option<&[f64]> {
        match self {
            OtsuResult::NoPartition => None,
            OtsuResult::Partition { thresholds, .. } => Some(thresholds),
        }
    }

    /// Class index of `v` in `0..k`, or `None` without a partition.
    pub fn class_of(&self, v: f64) -> Option<usize> {
        match self {
            OtsuResult::NoPartition => None,
            OtsuResult::Partition { cuts, histogram, .. } => {
                let h = histogram.as_ref()?;
                let b = h.bin(v);
                Some(cuts.iter().take_while(|&&c| b >= c).count())
            }
        }
    }
}

/// Multi-level Otsu: exhaustive search over every strictly increasing tuple of
/// `k - 1` cut bins, keeping the first (lexicographically smallest) maximum of
/// the between-class variance.
pub fn multi_otsu(values: &[f64], k: usize, bins: usize) -> Result<OtsuResult> {
    if k < 2 {
        return Err(XtfError::Config(format!("otsu needs k >= 2, got {k}")));
    }
    if bins < k {
        return Err(XtfError::Config(format!("otsu needs bins >= k, got {bins} < {k}")));
    }
    let h = Histogram::new(values, bins)?;
    if h.max == h.min {
        return Ok(OtsuResult::NoPartition);
    }
    // prefix totals: pc[i] = count of bins < i, ps[i] = Σ index·count
    let mut pc = vec![0u64; bins + 1];
    let mut ps = vec![0u64; bins + 1];
    for (i, &c) in h.counts.iter().enumerate() {
        pc[i + 1] = pc[i] + c;
        ps[i + 1] = ps[i] + c * i as u64;
    }
    let w = h.width();
    let mut cuts: Vec<usize> = (1..k).collect();
    let mut best_cuts = cuts.clone();
    let mut best = f64::NEG_INFINITY;
    let mut classes = vec![(0u64, 0u64); k];
    loop {
        let mut lo = 0;
        for (m, cl) in classes.iter_mut().enumerate() {
            let hi = if m + 1 < k { cuts[m] } else { bins };
            *cl = (pc[hi] - pc[lo], ps[hi] - ps[lo]);
            lo = hi;
        }
        let v = between_class_variance(&classes, w);
        if v > best {
            best = v;
            best_cuts.clone_from(&cuts);
        }
        if !next_combination(&mut cuts, bins) {
            break;
        }
    }
    let thresholds = best_cuts.iter().map(|&c| h.edge(c)).collect();
    Ok(OtsuResult::Partition {
        cuts: best_cuts,
        thresholds,
        sigma_b2: best,
        histogram: Some(h),
    })
}

/// Advances a strictly increasing tuple over `1..bins` in lexicographic order.
fn next_combination(c: &mut [usize], bins: usize) -> bool {
    let r = c.len();
    let mut i = r;
    while i > 0 {
        i -= 1;
        // largest value allowed at slot i
        if c[i] < bins - (r - i) {
            c[i] += 1;
            for j in i + 1..r {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_equal_is_degenerate() {
        assert_eq!(multi_otsu(&[0.3; 10], 3, 256).unwrap(), OtsuResult::NoPartition);
    }

    #[test]
    fn three_clusters_separate() {
        let mut v = vec![0.1; 100];
        v.extend(vec![0.5; 100]);
        v.extend(vec![0.9; 100]);
        let r = multi_otsu(&v, 3, 256).unwrap();
        let t = r.thresholds().unwrap();
        assert!(t[0] > 0.1 && t[0] < 0.5, "{t:?}");
        assert!(t[1] > 0.5 && t[1] < 0.9, "{t:?}");
        assert_eq!(r.class_of(0.1), Some(0));
        assert_eq!(r.class_of(0.5), Some(1));
        assert_eq!(r.class_of(0.9), Some(2));
    }

    #[test]
    fn combinations_enumerate_all() {
        let mut c = vec![1, 2];
        let mut n = 1;
        while next_combination(&mut c, 6) {
            assert!(c[0] < c[1] && c[1] <= 5);
            n += 1;
        }
        // choose(5, 2)
        assert_eq!(n, 10);
    }

    #[test]
    fn bad_arguments() {
        assert!(multi_otsu(&[1.0, 2.0], 1, 10).is_err());
        assert!(multi_otsu(&[1.0, 2.0], 3, 2).is_err());
        assert!(multi_otsu(&[], 2, 10).is_err());
        assert!(multi_otsu(&[f64::NAN, 1.0], 2, 10).is_err());
    }

    #[test]
    fn thresholds_strictly_increase() {
        let v: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 / 7.0).collect();
        for k in 2..=4 {
            let r = multi_otsu(&v, k, 32).unwrap();
            let t = r.thresholds().unwrap();
            assert_eq!(t.len(), k - 1);
            assert!(t.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
