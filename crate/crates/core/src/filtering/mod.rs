//! Score thresholds and the union noise mask.

mod mask;
mod otsu;
mod rules;

pub use mask::{
    complementarity_report, filter_quality, load_masks, masks_to_jsonl, save_masks, union_mask,
    Attribute, Complementarity, NoiseMask, PrecisionRecall, QualityReport,
};
pub use otsu::{between_class_variance, multi_otsu, Histogram, OtsuResult};
pub use rules::{filter_kn, filter_ri, filter_tr, iqr_fence, quantile_sorted, IqrFence};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, XtfError};
use crate::scoring::TokenScores;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub kn_cutoff: f64,
    pub otsu_classes: usize,
    pub otsu_bins: usize,
    pub use_ri: bool,
    pub use_kn: bool,
    pub use_tr: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            kn_cutoff: 0.05,
            otsu_classes: 3,
            otsu_bins: 256,
            use_ri: true,
            use_kn: true,
            use_tr: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kn_cutoff > 0.0 && self.kn_cutoff < 1.0) {
            return Err(XtfError::Config(format!("kn_cutoff must be in (0, 1), got {}", self.kn_cutoff)));
        }
        if self.otsu_classes < 2 {
            return Err(XtfError::Config("otsu_classes must be >= 2".into()));
        }
        if self.otsu_bins < self.otsu_classes {
            return Err(XtfError::Config("otsu_bins must be >= otsu_classes".into()));
        }
        Ok(())
    }

    pub fn enabled(&self, a: Attribute) -> bool {
        match a {
            Attribute::Ri => self.use_ri,
            Attribute::Kn => self.use_kn,
            Attribute::Tr => self.use_tr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceFence {
    pub id: String,
    pub q1: f64,
    pub q3: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub ri_fences: Vec<SentenceFence>,
    /// Empty when the pooled TR scores admit no partition.
    pub otsu_thresholds: Vec<f64>,
    pub per_attribute_counts: BTreeMap<String, usize>,
    pub total_tokens: usize,
    pub filtered_tokens: usize,
    pub overlap: Complementarity,
}

impl FilterStats {
    pub fn filtered_fraction(&self) -> f64 {
        if self.total_tokens == 0 {
            0.0
        } else {
            self.filtered_tokens as f64 / self.total_tokens as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub masks: Vec<NoiseMask>,
    pub stats: FilterStats,
}

/// Runs the enabled rules over every example's scores and unions them.
pub fn apply_filters(scores: &[TokenScores], cfg: &FilterConfig) -> Result<FilterOutput> {
    cfg.validate()?;
    for s in scores {
        s.validate()?;
    }
    let tr_pool: Vec<&[f64]> = scores.iter().map(|s| s.s_tr.as_slice()).collect();
    let (tr_sets, otsu) = filter_tr(&tr_pool, cfg.otsu_classes, cfg.otsu_bins)?;
    let mut masks = Vec::with_capacity(scores.len());
    let mut ri_fences = Vec::with_capacity(scores.len());
    for (s, tr) in scores.iter().zip(tr_sets) {
        let (ri, fence) = filter_ri(&s.s_ri);
        if let Some(f) = fence {
            ri_fences.push(SentenceFence { id: s.id.clone(), q1: f.q1, q3: f.q3, threshold: f.threshold });
        }
        let kn = filter_kn(&s.s_kn, cfg.kn_cutoff);
        let pick = |a: Attribute, set: Vec<usize>| if cfg.enabled(a) { set } else { vec![] };
        masks.push(union_mask(
            &s.id,
            s.len(),
            &pick(Attribute::Ri, ri),
            &pick(Attribute::Kn, kn),
            &pick(Attribute::Tr, tr),
        )?);
    }
    let overlap = complementarity_report(&masks);
    let mut per_attribute_counts = BTreeMap::new();
    for a in Attribute::ALL {
        let n = masks.iter().map(|m| m.sources.iter().filter(|s| s.contains(&a)).count()).sum();
        per_attribute_counts.insert(a.name().to_string(), n);
    }
    let total_tokens = masks.iter().map(|m| m.noise.len()).sum();
    let filtered_tokens = masks.iter().map(|m| m.noise.iter().filter(|&&n| n).count()).sum();
    Ok(FilterOutput {
        masks,
        stats: FilterStats {
            ri_fences,
            otsu_thresholds: otsu.thresholds().map(<[f64]>::to_vec).unwrap_or_default(),
            per_attribute_counts,
            total_tokens,
            filtered_tokens,
            overlap,
        },
    })
}
