//! wasm-bindgen entry points for the static demo page. Every function takes
//! plain numbers or comma-separated text and returns a JSON string.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use xtf::filtering::{filter_kn, filter_ri, filter_tr, multi_otsu, union_mask, OtsuResult};
use xtf::theory_lab::{gain_sweep as sweep, random_mixture, FISHER_DAMPING};

fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: '{s}'")))
        .collect()
}

fn respond(r: Result<Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn otsu_json(r: &OtsuResult) -> Value {
    match r {
        OtsuResult::NoPartition => json!({"partition": false, "thresholds": []}),
        OtsuResult::Partition { thresholds, sigma_b2, histogram, .. } => json!({
            "partition": true,
            "thresholds": thresholds,
            "sigma_b2": sigma_b2,
            "histogram": histogram.as_ref().map(|h| json!({"min": h.min, "max": h.max, "counts": h.counts})),
        }),
    }
}

/// Thresholds splitting `values` into `classes` groups over a `bins`-bin histogram.
#[wasm_bindgen]
pub fn otsu_thresholds(values: &str, classes: usize, bins: usize) -> String {
    respond((|| {
        let v = parse_list(values)?;
        let r = multi_otsu(&v, classes, bins).map_err(|e| e.to_string())?;
        Ok(otsu_json(&r))
    })())
}

/// Alignment gain of a random mixture over a selector-rate grid at noise level `eps`.
#[wasm_bindgen]
pub fn gain_sweep(seed: u64, eps: f64, steps: usize, coherence_pull: f64) -> String {
    respond((|| {
        if !(2..=50).contains(&steps) {
            return Err("steps must be between 2 and 50".to_string());
        }
        let base = random_mixture(seed, 8, (eps, eps), (0.0, 0.0), (0.0, 0.0));
        let m = base.fisher(FISHER_DAMPING).map_err(|e| e.to_string())?;
        let grid: Vec<f64> = (0..steps).map(|i| i as f64 / (steps - 1) as f64).collect();
        let rows = sweep(&base, &m, &grid, &grid, &[eps], &[coherence_pull]).map_err(|e| e.to_string())?;
        let zeta = rows.first().map(|r| r.zeta).unwrap_or(0.0);
        let cells: Vec<Value> = rows
            .iter()
            .map(|r| json!([r.alpha, r.beta, r.gain_direct, r.lower_bound]))
            .collect();
        Ok(json!({"eps": eps, "zeta": zeta, "grid": grid, "cells": cells}))
    })())
}

/// Masks for one sentence from its per-token RI, PCP and TR scores.
#[wasm_bindgen]
pub fn filter_preview(ri: &str, pcp: &str, tr: &str, kn_cutoff: f64, bins: usize) -> String {
    respond((|| {
        let (ri, pcp, tr) = (parse_list(ri)?, parse_list(pcp)?, parse_list(tr)?);
        let n = ri.len();
        if n == 0 || pcp.len() != n || tr.len() != n {
            return Err(format!("need equal, non-empty lists (got {}, {}, {})", n, pcp.len(), tr.len()));
        }
        let kn: Vec<f64> = pcp.iter().map(|p| 1.0 - p).collect();
        let (ri_idx, fence) = filter_ri(&ri);
        let kn_idx = filter_kn(&kn, kn_cutoff);
        let (tr_idx, otsu) = filter_tr(&[&tr], 3, bins).map_err(|e| e.to_string())?;
        let mask = union_mask("preview", n, &ri_idx, &kn_idx, &tr_idx[0]).map_err(|e| e.to_string())?;
        Ok(json!({
            "ri": ri_idx,
            "ri_fence": fence.map(|f| f.threshold),
            "kn": kn_idx,
            "tr": tr_idx[0],
            "tr_thresholds": otsu.thresholds(),
            "noise": mask.noise,
        }))
    })())
}
