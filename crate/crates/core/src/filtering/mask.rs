use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TokenizedExample;
use crate::error::{Result, XtfError};
use crate::io::{self, fmt_f64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Attribute {
    #[serde(rename = "RI")]
    Ri,
    #[serde(rename = "KN")]
    Kn,
    #[serde(rename = "TR")]
    Tr,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Ri, Attribute::Kn, Attribute::Tr];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Ri => "RI",
            Attribute::Kn => "KN",
            Attribute::Tr => "TR",
        }
    }
}

/// Per-label-token noise flags with the rules that raised them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseMask {
    pub id: String,
    pub noise: Vec<bool>,
    pub sources: Vec<Vec<Attribute>>,
}

impl NoiseMask {
    pub fn empty(id: impl Into<String>, len: usize) -> Self {
        NoiseMask { id: id.into(), noise: vec![false; len], sources: vec![vec![]; len] }
    }

    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }

    pub fn count(&self) -> usize {
        self.noise.iter().filter(|&&n| n).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise.len() != self.sources.len() {
            return Err(XtfError::Format(format!("mask {}: noise/sources length differ", self.id)));
        }
        if let Some(k) = (0..self.noise.len()).find(|&k| self.noise[k] == self.sources[k].is_empty()) {
            return Err(XtfError::Format(format!("mask {}: token {k} flag disagrees with its sources", self.id)));
        }
        Ok(())
    }

    /// Token indices flagged by `a`.
    pub fn indices_of(&self, a: Attribute) -> Vec<usize> {
        (0..self.sources.len()).filter(|&k| self.sources[k].contains(&a)).collect()
    }
}

pub fn union_mask(id: &str, len: usize, ri: &[usize], kn: &[usize], tr: &[usize]) -> Result<NoiseMask> {
    let mut m = NoiseMask::empty(id, len);
    for (a, set) in [(Attribute::Ri, ri), (Attribute::Kn, kn), (Attribute::Tr, tr)] {
        for &k in set {
            if k >= len {
                return Err(XtfError::Contract(format!("mask {id}: index {k} outside label of {len}")));
            }
            if !m.sources[k].contains(&a) {
                m.sources[k].push(a);
            }
            m.noise[k] = true;
        }
    }
    for s in &mut m.sources {
        s.sort();
    }
    Ok(m)
}

pub fn masks_to_jsonl(masks: &[NoiseMask]) -> String {
    let mut s = String::new();
    for m in masks {
        s.push_str(&serde_json::to_string(m).expect("mask serializes"));
        s.push('\n');
    }
    s
}

pub fn save_masks(masks: &[NoiseMask], path: impl AsRef<Path>) -> Result<()> {
    io::write_atomic(path, masks_to_jsonl(masks).as_bytes())
}

pub fn load_masks(path: impl AsRef<Path>) -> Result<Vec<NoiseMask>> {
    let masks: Vec<NoiseMask> = io::read_jsonl(path)?;
    for m in &masks {
        m.validate()?;
    }
    Ok(masks)
}

/// How the three rules overlap. `only[A]` is the share of all label tokens A
/// flags; `after[A][B]` the share A still flags once B's tokens are gone;
/// `overlap[A][B]` the fraction of A's tokens that B also flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Complementarity {
    pub total_tokens: usize,
    pub counts: BTreeMap<String, usize>,
    pub only: BTreeMap<String, f64>,
    pub exclusive: BTreeMap<String, f64>,
    pub after: BTreeMap<String, BTreeMap<String, f64>>,
    pub overlap: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Complementarity {
    /// CSV rows `a,b,overlap,after`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("a,b,overlap,after\n");
        for a in Attribute::ALL {
            for b in Attribute::ALL {
                let (a, b) = (a.name(), b.name());
                s.push_str(&format!(
                    "{a},{b},{},{}\n",
                    fmt_f64(self.overlap[a][b]),
                    fmt_f64(self.after[a][b])
                ));
            }
        }
        s
    }
}

pub fn complementarity_report(masks: &[NoiseMask]) -> Complementarity {
    let total: usize = masks.iter().map(NoiseMask::len).sum();
    let has = |s: &[Attribute], a: Attribute| s.contains(&a);
    let count = |pred: &dyn Fn(&[Attribute]) -> bool| -> usize {
        masks.iter().flat_map(|m| &m.sources).filter(|s| pred(s)).count()
    };
    let frac = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
    let mut c = Complementarity {
        total_tokens: total,
        counts: BTreeMap::new(),
        only: BTreeMap::new(),
        exclusive: BTreeMap::new(),
        after: BTreeMap::new(),
        overlap: BTreeMap::new(),
    };
    for a in Attribute::ALL {
        let na = count(&|s| has(s, a));
        c.counts.insert(a.name().into(), na);
        c.only.insert(a.name().into(), frac(na));
        c.exclusive.insert(a.name().into(), frac(count(&|s| s == [a])));
        let mut after = BTreeMap::new();
        let mut overlap = BTreeMap::new();
        for b in Attribute::ALL {
            let both = count(&|s| has(s, a) && has(s, b));
            after.insert(b.name().into(), frac(na - both));
            overlap.insert(b.name().into(), if na == 0 { 0.0 } else { both as f64 / na as f64 });
        }
        c.after.insert(a.name().into(), after);
        c.overlap.insert(a.name().into(), overlap);
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub predicted: usize,
    pub actual: usize,
    pub true_positive: usize,
}

impl PrecisionRecall {
    /// An empty prediction has precision 1; an empty truth has recall 1.
    fn from_counts(tp: usize, predicted: usize, actual: usize) -> Self {
        PrecisionRecall {
            precision: if predicted == 0 { 1.0 } else { tp as f64 / predicted as f64 },
            recall: if actual == 0 { 1.0 } else { tp as f64 / actual as f64 },
            predicted,
            actual,
            true_positive: tp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub overall: PrecisionRecall,
    pub per_attribute: BTreeMap<String, PrecisionRecall>,
}

/// Precision and recall of masks against the examples' ground-truth flags.
pub fn filter_quality(masks: &[NoiseMask], examples: &[TokenizedExample]) -> Result<QualityReport> {
    let truth: HashMap<&str, &TokenizedExample> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut pairs = Vec::with_capacity(masks.len());
    for m in masks {
        let ex = truth
            .get(m.id.as_str())
            .ok_or_else(|| XtfError::Consistency(format!("mask {} has no matching example", m.id)))?;
        let flags = ex.noise_truth.as_ref().ok_or_else(|| {
            XtfError::Unsupported(format!("example {} carries no ground-truth noise flags", ex.id))
        })?;
        if flags.len() != m.len() {
            return Err(XtfError::Consistency(format!(
                "mask {} covers {} tokens, truth has {}",
                m.id,
                m.len(),
                flags.len()
            )));
        }
        pairs.push((m, flags));
    }
    let tally = |pred: &dyn Fn(&NoiseMask, usize) -> bool| {
        let (mut tp, mut p, mut a) = (0, 0, 0);
        for (m, flags) in &pairs {
            for (k, &t) in flags.iter().enumerate() {
                let y = pred(m, k);
                p += usize::from(y);
                a += usize::from(t);
                tp += usize::from(y && t);
            }
        }
        PrecisionRecall::from_counts(tp, p, a)
    };
    let overall = tally(&|m, k| m.noise[k]);
    let per_attribute = Attribute::ALL
        .iter()
        .map(|&a| (a.name().to_string(), tally(&|m, k| m.sources[k].contains(&a))))
        .collect();
    Ok(QualityReport { overall, per_attribute })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn union_examples() {
        let m = union_mask("x", 4, &[], &[], &[]).unwrap();
        assert_eq!(m.noise, vec![false; 4]);
        let m = union_mask("x", 4, &[1], &[1, 2], &[]).unwrap();
        assert_eq!(m.noise, vec![false, true, true, false]);
        assert_eq!(m.sources[1], vec![Attribute::Ri, Attribute::Kn]);
        assert_eq!(m.sources[2], vec![Attribute::Kn]);
        assert!(union_mask("x", 2, &[2], &[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn union_is_lossless(
            ri in prop::collection::btree_set(0usize..30, 0..10),
            kn in prop::collection::btree_set(0usize..30, 0..10),
            tr in prop::collection::btree_set(0usize..30, 0..10),
        ) {
            let v = |s: &BTreeSet<usize>| s.iter().copied().collect::<Vec<_>>();
            let m = union_mask("p", 30, &v(&ri), &v(&kn), &v(&tr)).unwrap();
            let all: BTreeSet<usize> = ri.iter().chain(&kn).chain(&tr).copied().collect();
            prop_assert_eq!(m.count(), all.len());
            let back = |a| m.indices_of(a).into_iter().collect::<BTreeSet<_>>();
            prop_assert_eq!(back(Attribute::Ri), ri);
            prop_assert_eq!(back(Attribute::Kn), kn);
            prop_assert_eq!(back(Attribute::Tr), tr);
            m.validate().unwrap();
        }
    }

    #[test]
    fn complementarity_extremes() {
        let disjoint = vec![union_mask("d", 6, &[0, 1], &[2, 3], &[4]).unwrap()];
        let c = complementarity_report(&disjoint);
        for a in ["RI", "KN", "TR"] {
            for b in ["RI", "KN", "TR"] {
                let want = if a == b { 1.0 } else { 0.0 };
                assert_eq!(c.overlap[a][b], want);
            }
        }
        assert_eq!(c.only["RI"], 2.0 / 6.0);
        assert_eq!(c.after["RI"]["KN"], 2.0 / 6.0);
        let same = vec![union_mask("s", 5, &[0, 3], &[0, 3], &[0, 3]).unwrap()];
        let c = complementarity_report(&same);
        assert!(c.overlap.values().flat_map(|r| r.values()).all(|&v| v == 1.0));
        assert_eq!(c.after["KN"]["TR"], 0.0);
        assert_eq!(c.exclusive["KN"], 0.0);
        assert_eq!(c.to_csv().lines().count(), 10);
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("m.jsonl");
        let ms = vec![union_mask("a", 3, &[0], &[0, 2], &[]).unwrap(), NoiseMask::empty("b", 2)];
        save_masks(&ms, &f).unwrap();
        let text = std::fs::read_to_string(&f).unwrap();
        assert!(text.starts_with(r#"{"id":"a","noise":[true,false,true],"sources":[["RI","KN"],[],["KN"]]}"#));
        assert_eq!(load_masks(&f).unwrap(), ms);
        std::fs::write(&f, r#"{"id":"z","noise":[true],"sources":[[]]}"#).unwrap();
        assert!(load_masks(&f).is_err());
    }

    fn truth(id: &str, flags: Vec<bool>) -> TokenizedExample {
        let mut e = TokenizedExample::new(id, vec![1], vec![5; flags.len()]);
        e.noise_truth = Some(flags);
        e
    }

    #[test]
    fn quality_conventions() {
        let ex = vec![truth("a", vec![true, false, true])];
        let exact = union_mask("a", 3, &[0, 2], &[], &[]).unwrap();
        let q = filter_quality(&[exact], &ex).unwrap();
        assert_eq!((q.overall.precision, q.overall.recall), (1.0, 1.0));
        let q = filter_quality(&[NoiseMask::empty("a", 3)], &ex).unwrap();
        assert_eq!((q.overall.precision, q.overall.recall), (1.0, 0.0));
        let half = union_mask("a", 3, &[], &[0, 1], &[]).unwrap();
        let q = filter_quality(&[half], &ex).unwrap();
        assert_eq!((q.per_attribute["KN"].precision, q.per_attribute["KN"].recall), (0.5, 0.5));
        let plain = vec![TokenizedExample::new("a", vec![1], vec![5; 3])];
        assert!(matches!(
            filter_quality(&[NoiseMask::empty("a", 3)], &plain),
            Err(XtfError::Unsupported(_))
        ));
    }
}
