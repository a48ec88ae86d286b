use serde::{Deserialize, Serialize};

use crate::data::TokenizedExample;
use crate::error::{Result, XtfError};
use crate::numerics::{softmax_slice, Tensor};
use crate::tiny_lm::{forward, ForwardTrace, ModelParams};

/// How attention is pooled into one importance number per label token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiAgg {
    /// Mean over layers, heads and later queries.
    #[default]
    Mean,
    /// Sum over layers, heads and later queries.
    Sum,
    /// Mean over the heads of the last layer and later queries.
    LastLayerMean,
}

impl std::str::FromStr for RiAgg {
    type Err = XtfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(RiAgg::Mean),
            "sum" => Ok(RiAgg::Sum),
            "last_layer_mean" => Ok(RiAgg::LastLayerMean),
            other => Err(XtfError::Config(format!("unknown ri_agg '{other}'"))),
        }
    }
}

pub(crate) fn check_example(params: &ModelParams, ex: &TokenizedExample) -> Result<()> {
    let c = params.config();
    if ex.input_ids.is_empty() {
        return Err(XtfError::Input(format!("example {}: empty input", ex.id)));
    }
    if ex.output_ids.is_empty() {
        return Err(XtfError::Input(format!("example {}: empty label", ex.id)));
    }
    if ex.seq_len() > c.max_seq {
        return Err(XtfError::Input(format!(
            "example {}: {} tokens exceed max_seq {}",
            ex.id,
            ex.seq_len(),
            c.max_seq
        )));
    }
    if let Some(t) = ex.full_sequence().into_iter().find(|&t| t >= c.vocab_size) {
        return Err(XtfError::Input(format!(
            "example {}: token id {t} outside vocabulary {}",
            ex.id, c.vocab_size
        )));
    }
    Ok(())
}

/// RI scores from a trace of `I + O`. The last label token has no later
/// query, so it gets its pooled self-attention instead.
pub fn ri_from_trace(trace: &ForwardTrace, input_len: usize, label_len: usize, agg: RiAgg) -> Vec<f64> {
    let seq = input_len + label_len;
    let layers: Vec<&Vec<Tensor>> = match agg {
        RiAgg::LastLayerMean => trace.attention.last().into_iter().collect(),
        _ => trace.attention.iter().collect(),
    };
    (0..label_len)
        .map(|k| {
            let p = input_len + k;
            let queries = if p + 1 < seq { p + 1..seq } else { p..p + 1 };
            let mut total = 0.0;
            let mut n = 0usize;
            for heads in &layers {
                for a in heads.iter() {
                    for q in queries.clone() {
                        total += a.get2(q, p);
                        n += 1;
                    }
                }
            }
            match agg {
                RiAgg::Sum => total,
                _ => total / n as f64,
            }
        })
        .collect()
}

/// Teacher-forced probability of each label token: `pcp[k]` reads the row
/// at `input_len + k - 1`.
pub fn pcp_from_logits(logits: &Tensor, input_len: usize, output_ids: &[usize]) -> Result<Vec<f64>> {
    if input_len == 0 {
        return Err(XtfError::Input("pcp needs a non-empty input prefix".into()));
    }
    if logits.rows() < input_len + output_ids.len() - 1 {
        return Err(XtfError::Dimension(format!(
            "{} logit rows for input {input_len} + label {}",
            logits.rows(),
            output_ids.len()
        )));
    }
    output_ids
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let row = logits.row(input_len + k - 1);
            if t >= row.len() {
                return Err(XtfError::Input(format!("label token {t} outside vocabulary {}", row.len())));
            }
            Ok(softmax_slice(row)[t])
        })
        .collect()
}

pub fn kn_from_pcp(pcp: &[f64]) -> Vec<f64> {
    pcp.iter().map(|p| 1.0 - p).collect()
}

pub fn score_ri(params: &ModelParams, ex: &TokenizedExample, agg: RiAgg) -> Result<Vec<f64>> {
    check_example(params, ex)?;
    let tr = forward(params, &ex.full_sequence())?;
    Ok(ri_from_trace(&tr, ex.input_len(), ex.label_len(), agg))
}

/// Returns `(pcp, s_kn)`.
pub fn score_kn(params: &ModelParams, ex: &TokenizedExample) -> Result<(Vec<f64>, Vec<f64>)> {
    check_example(params, ex)?;
    let tr = forward(params, &ex.full_sequence())?;
    let pcp = pcp_from_logits(&tr.logits, ex.input_len(), &ex.output_ids)?;
    let kn = kn_from_pcp(&pcp);
    Ok((pcp, kn))
}
