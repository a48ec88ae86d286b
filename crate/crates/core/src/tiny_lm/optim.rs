use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::{Result, XtfError};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerMode {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerMode {
    type Err = XtfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerMode::Sgd),
            "adam" => Ok(OptimizerMode::Adam),
            other => Err(XtfError::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimHyper {
    pub lr: f64,
    pub mode: OptimizerMode,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimHyper {
    pub fn sgd(lr: f64) -> Self {
        OptimHyper {
            lr,
            mode: OptimizerMode::Sgd,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimHyper {
            mode: OptimizerMode::Adam,
            ..OptimHyper::sgd(lr)
        }
    }
}

/// Moment estimates for the adaptive mode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Applies one update in place. Gradients are checked for finiteness before
/// anything is modified.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut OptState,
    hyper: &OptimHyper,
) -> Result<()> {
    let names = params.names();
    if grads.len() != params.tensors().len() {
        return Err(XtfError::Dimension(format!(
            "{} gradients for {} tensors",
            grads.len(),
            params.tensors().len()
        )));
    }
    for ((g, p), name) in grads.iter().zip(params.tensors()).zip(&names) {
        if g.shape() != p.shape() {
            return Err(XtfError::Dimension(format!("gradient shape for {name}")));
        }
        if !g.is_finite() {
            return Err(XtfError::Training(format!("non-finite gradient in {name}")));
        }
    }
    step_tensors(params.tensors_mut(), grads, state, hyper);
    Ok(())
}

pub(crate) fn step_tensors(
    tensors: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptState,
    hyper: &OptimHyper,
) {
    state.step += 1;
    match hyper.mode {
        OptimizerMode::Sgd => {
            for (p, g) in tensors.iter_mut().zip(grads) {
                for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= hyper.lr * d;
                }
            }
        }
        OptimizerMode::Adam => {
            if state.m.is_empty() {
                state.m = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
                state.v = state.m.clone();
            }
            let t = state.step as i32;
            let c1 = 1.0 - hyper.beta1.powi(t);
            let c2 = 1.0 - hyper.beta2.powi(t);
            for (i, (p, g)) in tensors.iter_mut().zip(grads).enumerate() {
                let (m, v) = (&mut state.m[i], &mut state.v[i]);
                for (j, (w, d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                    m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * d;
                    v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * d * d;
                    let mhat = m[j] / c1;
                    let vhat = v[j] / c2;
                    *w -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
                }
            }
        }
    }
}
