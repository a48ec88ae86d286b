//! Per-token reasoning importance (RI), knowledge novelty (KN) and task
//! relevance (TR) scores from a frozen base model.

mod domain;
mod token;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use domain::{compute_domain_vector, distance, score_tr, Distance, DomainSource, DomainVector};
pub use token::{kn_from_pcp, pcp_from_logits, ri_from_trace, score_kn, score_ri, RiAgg};

use crate::data::TokenizedExample;
use crate::error::{Result, XtfError};
use crate::io::{self, fmt_f64_array, json_string};
use crate::par;
use crate::tiny_lm::{forward, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub ri_agg: RiAgg,
    pub distance: Distance,
    pub domain_source: DomainSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScores {
    pub id: String,
    pub pcp: Vec<f64>,
    pub s_ri: Vec<f64>,
    pub s_kn: Vec<f64>,
    pub s_tr: Vec<f64>,
}

impl TokenScores {
    pub fn len(&self) -> usize {
        self.pcp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pcp.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pcp.len();
        if n == 0 || self.s_ri.len() != n || self.s_kn.len() != n || self.s_tr.len() != n {
            return Err(XtfError::Format(format!(
                "scores {}: array lengths pcp {} ri {} kn {} tr {}",
                self.id,
                n,
                self.s_ri.len(),
                self.s_kn.len(),
                self.s_tr.len()
            )));
        }
        let all = self.pcp.iter().chain(&self.s_ri).chain(&self.s_kn).chain(&self.s_tr);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(XtfError::Format(format!("scores {}: non-finite value", self.id)));
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        format!(
            "{{\"id\":{},\"pcp\":{},\"s_ri\":{},\"s_kn\":{},\"s_tr\":{}}}",
            json_string(&self.id),
            fmt_f64_array(&self.pcp),
            fmt_f64_array(&self.s_ri),
            fmt_f64_array(&self.s_kn),
            fmt_f64_array(&self.s_tr)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFailure {
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ScoredDataset {
    pub scores: Vec<TokenScores>,
    pub domain: DomainVector,
    /// Examples that could not be scored; the rest are still returned.
    pub failures: Vec<ScoreFailure>,
}

/// All three scores for one example from a single forward pass.
pub fn score_example(
    params: &ModelParams,
    domain: &DomainVector,
    ex: &TokenizedExample,
    agg: RiAgg,
) -> Result<TokenScores> {
    token::check_example(params, ex)?;
    let tr = forward(params, &ex.full_sequence())?;
    let s_ri = ri_from_trace(&tr, ex.input_len(), ex.label_len(), agg);
    let pcp = pcp_from_logits(&tr.logits, ex.input_len(), &ex.output_ids)?;
    let s_kn = kn_from_pcp(&pcp);
    let s_tr = score_tr(domain, ex)?;
    Ok(TokenScores { id: ex.id.clone(), pcp, s_ri, s_kn, s_tr })
}

/// Scores every example against the frozen base model. Bad examples are
/// reported in `failures` and skipped; the domain vector is built from the
/// good ones.
pub fn score_dataset(
    params: &ModelParams,
    dataset: &[TokenizedExample],
    cfg: &ScoringConfig,
) -> Result<ScoredDataset> {
    let mut failures = Vec::new();
    let mut good = Vec::with_capacity(dataset.len());
    for ex in dataset {
        match token::check_example(params, ex) {
            Ok(()) => good.push(ex.clone()),
            Err(e) => failures.push(ScoreFailure { id: ex.id.clone(), message: e.to_string() }),
        }
    }
    if good.is_empty() {
        return Err(XtfError::Input(format!(
            "no scorable examples ({} rejected)",
            failures.len()
        )));
    }
    let domain = compute_domain_vector(params, &good, cfg.distance, cfg.domain_source)?;
    let results = par::map(&good, |ex| score_example(params, &domain, ex, cfg.ri_agg));
    let mut scores = Vec::with_capacity(good.len());
    for (ex, r) in good.iter().zip(results) {
        match r {
            Ok(s) => scores.push(s),
            Err(e) => failures.push(ScoreFailure { id: ex.id.clone(), message: e.to_string() }),
        }
    }
    Ok(ScoredDataset { scores, domain, failures })
}

pub fn scores_to_jsonl(scores: &[TokenScores]) -> String {
    let mut s = String::new();
    for r in scores {
        s.push_str(&r.to_json_line());
        s.push('\n');
    }
    s
}

pub fn save_scores(scores: &[TokenScores], path: impl AsRef<Path>) -> Result<()> {
    io::write_atomic(path, scores_to_jsonl(scores).as_bytes())
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<TokenScores>> {
    let path = path.as_ref();
    let scores: Vec<TokenScores> = io::read_jsonl(path)?;
    for s in &scores {
        s.validate()
            .map_err(|e| XtfError::Format(format!("{}: {e}", path.display())))?;
    }
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width histogram over `[lo, hi]`; values outside are clamped into
/// the end bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<HistBin> {
    let bins = bins.max(1);
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = if w > 0.0 { ((v - lo) / w).floor() } else { 0.0 };
        counts[(i.max(0.0) as usize).min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistBin {
            left: lo + i as f64 * w,
            right: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * w },
            count,
        })
        .collect()
}

/// CSV `score,bin_left,bin_right,count` for each score type on [0, 1].
pub fn histogram_csv(scores: &[TokenScores], bins: usize) -> String {
    let mut out = String::from("score,bin_left,bin_right,count\n");
    let cols: [(&str, fn(&TokenScores) -> &Vec<f64>); 4] = [
        ("pcp", |s| &s.pcp),
        ("s_ri", |s| &s.s_ri),
        ("s_kn", |s| &s.s_kn),
        ("s_tr", |s| &s.s_tr),
    ];
    for (name, get) in cols {
        let vals: Vec<f64> = scores.iter().flat_map(|s| get(s).iter().copied()).collect();
        for b in histogram(&vals, bins, 0.0, 1.0) {
            out.push_str(&format!(
                "{name},{},{},{}\n",
                io::fmt_f64(b.left),
                io::fmt_f64(b.right),
                b.count
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiny_lm::ModelConfig;

    fn model() -> ModelParams {
        ModelParams::init(&ModelConfig {
            vocab_size: 24,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            max_seq: 10,
            seed: 1,
            tied: true,
        })
        .unwrap()
    }

    fn data() -> Vec<TokenizedExample> {
        vec![
            TokenizedExample::new("a", vec![1, 5, 6], vec![7, 8, 2]),
            TokenizedExample::new("b", vec![1, 9], vec![10, 2]),
            TokenizedExample::new("bad", vec![1; 8], vec![4; 4]),
            TokenizedExample::new("c", vec![1, 5], vec![11]),
        ]
    }

    #[test]
    fn dataset_scoring_reports_failures_and_keeps_going() {
        let p = model();
        let before = p.clone();
        let out = score_dataset(&p, &data(), &ScoringConfig::default()).unwrap();
        assert_eq!(out.scores.len(), 3);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].id, "bad");
        for (s, ex) in out.scores.iter().zip(data().iter().filter(|e| e.id != "bad")) {
            s.validate().unwrap();
            assert_eq!(s.len(), ex.label_len());
            for k in 0..s.len() {
                assert_eq!(s.s_kn[k], 1.0 - s.pcp[k]);
                assert!((0.0..=1.0).contains(&s.pcp[k]));
                assert!((0.0..=1.0).contains(&s.s_ri[k]));
                assert!((0.0..=1.0).contains(&s.s_tr[k]));
            }
        }
        assert_eq!(p.tensors(), before.tensors());
        let again = score_dataset(&p, &data(), &ScoringConfig::default()).unwrap();
        assert_eq!(out.scores, again.scores);
    }

    #[test]
    fn one_example_dataset() {
        let p = model();
        let ds = vec![data().remove(0)];
        let out = score_dataset(&p, &ds, &ScoringConfig::default()).unwrap();
        assert_eq!(out.scores.len(), 1);
        let s = &out.scores[0];
        assert_eq!((s.s_ri.len(), s.s_kn.len(), s.s_tr.len()), (3, 3, 3));
    }

    #[test]
    fn matches_individual_scorers() {
        let p = model();
        let ds = data();
        let out = score_dataset(&p, &ds, &ScoringConfig::default()).unwrap();
        let ri = score_ri(&p, &ds[0], RiAgg::Mean).unwrap();
        let (pcp, _) = score_kn(&p, &ds[0]).unwrap();
        assert_eq!(out.scores[0].s_ri, ri);
        assert_eq!(out.scores[0].pcp, pcp);
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let p = model();
        let out = score_dataset(&p, &data(), &ScoringConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("scores.jsonl");
        save_scores(&out.scores, &f).unwrap();
        let back = load_scores(&f).unwrap();
        assert_eq!(back, out.scores);
        let bytes = std::fs::read(&f).unwrap();
        save_scores(&back, &f).unwrap();
        assert_eq!(std::fs::read(&f).unwrap(), bytes);
    }

    #[test]
    fn malformed_scores_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("s.jsonl");
        std::fs::write(&f, "{\"id\":\"x\",\"pcp\":[0.5],\"s_ri\":[],\"s_kn\":[0.5],\"s_tr\":[1.0]}\n").unwrap();
        assert!(load_scores(&f).is_err());
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.1, 0.5, 0.99, 1.0], 4, 0.0, 1.0);
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 0, 1, 2]);
        assert_eq!(h[3].right, 1.0);
        let p = model();
        let out = score_dataset(&p, &data(), &ScoringConfig::default()).unwrap();
        let csv = histogram_csv(&out.scores, 10);
        assert_eq!(csv.lines().count(), 41);
    }
}
