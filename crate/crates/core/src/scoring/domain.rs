use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::TokenizedExample;
use crate::error::{Result, XtfError};
use crate::tiny_lm::{ModelParams, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Euclidean,
    /// `1 - cos`, with zero vectors at distance 1.
    Cosine,
}

/// Which population the centroid averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSource {
    /// Every token occurrence of every sample.
    #[default]
    AllTokens,
    /// Each distinct token id once.
    UniqueTokens,
}

impl std::str::FromStr for Distance {
    type Err = XtfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Distance::Euclidean),
            "cosine" => Ok(Distance::Cosine),
            other => Err(XtfError::Config(format!("unknown distance '{other}'"))),
        }
    }
}

impl std::str::FromStr for DomainSource {
    type Err = XtfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_tokens" => Ok(DomainSource::AllTokens),
            "unique_tokens" => Ok(DomainSource::UniqueTokens),
            other => Err(XtfError::Config(format!("unknown domain_source '{other}'"))),
        }
    }
}

pub fn distance(kind: Distance, a: &[f64], b: &[f64]) -> f64 {
    match kind {
        Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Distance::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - dot / (na * nb)
            }
        }
    }
}

/// Dataset centroid of context-free embeddings plus the distance table used
/// to normalize TR scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainVector {
    pub centroid: Vec<f64>,
    pub token_distances: BTreeMap<usize, f64>,
    pub d_min: f64,
    pub d_max: f64,
    pub distance: Distance,
}

impl DomainVector {
    /// `1 - (d - d_min) / (d_max - d_min)`, clamped; 1 when every distance
    /// is the same.
    pub fn relevance(&self, token: usize) -> Result<f64> {
        let d = *self.token_distances.get(&token).ok_or_else(|| {
            XtfError::Consistency(format!("token {token} not in the domain table"))
        })?;
        if self.d_max == self.d_min {
            return Ok(1.0);
        }
        Ok((1.0 - (d - self.d_min) / (self.d_max - self.d_min)).clamp(0.0, 1.0))
    }
}

pub fn compute_domain_vector(
    params: &ModelParams,
    dataset: &[TokenizedExample],
    distance_kind: Distance,
    source: DomainSource,
) -> Result<DomainVector> {
    if dataset.is_empty() {
        return Err(XtfError::Input("domain vector needs a non-empty dataset".into()));
    }
    let table = params.get(Slot::TokenEmbedding);
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for ex in dataset {
        for t in ex.input_ids.iter().chain(&ex.output_ids) {
            if *t >= table.rows() {
                return Err(XtfError::Input(format!(
                    "example {}: token id {t} outside vocabulary {}",
                    ex.id,
                    table.rows()
                )));
            }
            *counts.entry(*t).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(XtfError::Input("domain vector needs at least one token".into()));
    }
    let d = table.cols();
    let mut centroid = vec![0.0; d];
    let mut n = 0usize;
    match source {
        DomainSource::AllTokens => {
            for ex in dataset {
                for &t in ex.input_ids.iter().chain(&ex.output_ids) {
                    for (c, e) in centroid.iter_mut().zip(table.row(t)) {
                        *c += e;
                    }
                    n += 1;
                }
            }
        }
        DomainSource::UniqueTokens => {
            for &t in counts.keys() {
                for (c, e) in centroid.iter_mut().zip(table.row(t)) {
                    *c += e;
                }
                n += 1;
            }
        }
    }
    for c in &mut centroid {
        *c /= n as f64;
    }
    let token_distances: BTreeMap<usize, f64> = counts
        .keys()
        .map(|&t| (t, distance(distance_kind, table.row(t), &centroid)))
        .collect();
    let d_min = token_distances.values().copied().fold(f64::INFINITY, f64::min);
    let d_max = token_distances.values().copied().fold(f64::NEG_INFINITY, f64::max);
    if !centroid.iter().all(|x| x.is_finite()) || !d_max.is_finite() {
        return Err(XtfError::NonFinite("domain centroid or distances".into()));
    }
    Ok(DomainVector {
        centroid,
        token_distances,
        d_min,
        d_max,
        distance: distance_kind,
    })
}

pub fn score_tr(domain: &DomainVector, ex: &TokenizedExample) -> Result<Vec<f64>> {
    ex.output_ids
        .iter()
        .map(|&t| {
            domain
                .relevance(t)
                .map_err(|e| XtfError::Consistency(format!("example {}: {e}", ex.id)))
        })
        .collect()
}
