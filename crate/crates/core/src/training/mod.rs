//! Fine-tuning with loss-masked noise tokens, exact-match evaluation and the
//! paired normal-versus-masked experiment.

mod experiment;
mod loss;

pub use experiment::{build_base, run_experiment, BaseConfig, ExperimentConfig, ExperimentReport, ExperimentRun};
pub use loss::{include_flags, loss_targets, masked_loss};

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::tokenizer::EOS;
use crate::data::TokenizedExample;
use crate::error::{Result, XtfError};
use crate::filtering::NoiseMask;
use crate::io::{self, fmt_f64};
use crate::numerics::Tensor;
use crate::par;
use crate::tiny_lm::{greedy_generate, loss_and_grad, optimizer_step, ModelParams, OptState, OptimHyper, OptimizerMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerMode,
    pub seed: u64,
    /// Global gradient-norm cap per step; 0 disables clipping.
    pub clip_norm: f64,
    /// Progress line on stderr every this many epochs; 0 keeps quiet.
    pub report_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 30,
            batch_size: 1,
            optimizer: OptimizerMode::Adam,
            seed: 0,
            clip_norm: 0.0,
            report_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(XtfError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(XtfError::Config("epochs must be >= 1".into()));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(XtfError::Config(format!("clip_norm must be >= 0, got {}", self.clip_norm)));
        }
        if self.batch_size == 0 {
            return Err(XtfError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn hyper(&self) -> OptimHyper {
        match self.optimizer {
            OptimizerMode::Sgd => OptimHyper::sgd(self.lr),
            OptimizerMode::Adam => OptimHyper::adam(self.lr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample masked loss over the samples that took part.
    pub train_loss: f64,
    pub val_acc: f64,
    pub dropped_fully_masked: usize,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        format!(
            "{{\"epoch\":{},\"train_loss\":{},\"val_acc\":{},\"dropped_fully_masked\":{}}}",
            self.epoch,
            fmt_f64(self.train_loss),
            fmt_f64(self.val_acc),
            self.dropped_fully_masked
        )
    }
}

pub fn save_log(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let text: String = log.iter().map(|l| l.to_json_line() + "\n").collect();
    io::write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation accuracy (earliest on ties).
    pub best: ModelParams,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub log: Vec<EpochLog>,
    /// Set when training stopped on a non-finite loss; `best` is then the
    /// last good checkpoint.
    pub aborted: Option<String>,
}

/// Greedy decoding reference: the label with known noise and the stop token
/// removed.
pub fn reference_label(ex: &TokenizedExample) -> Vec<usize> {
    let mut r = ex.clean_label();
    if r.last() == Some(&EOS) {
        r.pop();
    }
    r
}

/// Whether greedy decoding from the input reproduces the reference label and
/// then stops.
pub fn exact_match(params: &ModelParams, ex: &TokenizedExample) -> Result<bool> {
    let want = reference_label(ex);
    let out = greedy_generate(params, &ex.input_ids, want.len() + 1, Some(EOS))?;
    Ok(out == want)
}

/// Exact-match accuracy over `eval_set`.
pub fn evaluate(params: &ModelParams, eval_set: &[TokenizedExample]) -> Result<f64> {
    if eval_set.is_empty() {
        return Err(XtfError::Input("evaluation set is empty".into()));
    }
    let hits = par::map(eval_set, |ex| exact_match(params, ex));
    let mut n = 0usize;
    for h in hits {
        n += usize::from(h?);
    }
    Ok(n as f64 / eval_set.len() as f64)
}

fn mask_lookup<'a>(
    train_set: &[TokenizedExample],
    masks: Option<&'a [NoiseMask]>,
) -> Result<Vec<Option<&'a [bool]>>> {
    let Some(masks) = masks else {
        return Ok(vec![None; train_set.len()]);
    };
    let by_id: HashMap<&str, &NoiseMask> = masks.iter().map(|m| (m.id.as_str(), m)).collect();
    train_set
        .iter()
        .map(|ex| {
            let m = by_id
                .get(ex.id.as_str())
                .ok_or_else(|| XtfError::Contract(format!("no mask for training example {}", ex.id)))?;
            if m.len() != ex.label_len() {
                return Err(XtfError::Contract(format!(
                    "mask {} covers {} tokens, label has {}",
                    m.id,
                    m.len(),
                    ex.label_len()
                )));
            }
            Ok(Some(m.noise.as_slice()))
        })
        .collect()
}

/// Mini-batch fine-tuning. Each sample's loss is the masked sum; a batch
/// gradient is the mean over its samples. Samples whose whole label is
/// masked are left out. After every epoch the validation exact-match decides
/// which checkpoint to keep.
pub fn train(
    init: &ModelParams,
    train_set: &[TokenizedExample],
    masks: Option<&[NoiseMask]>,
    val_set: &[TokenizedExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(XtfError::Input("training set is empty".into()));
    }
    let noise = mask_lookup(train_set, masks)?;
    let targets: Vec<Vec<Option<usize>>> = train_set
        .iter()
        .zip(&noise)
        .map(|(ex, n)| loss::loss_targets(ex, *n))
        .collect::<Result<_>>()?;
    let seqs: Vec<Vec<usize>> = train_set.iter().map(TokenizedExample::full_sequence).collect();
    let active: Vec<usize> = (0..train_set.len()).filter(|&i| targets[i].iter().any(Option::is_some)).collect();
    let dropped = train_set.len() - active.len();

    let hyper = cfg.hyper();
    let mut params = init.clone();
    let mut state = OptState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = active.clone();
    let mut best = init.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = par::map(batch, |&i| loss_and_grad(&params, &seqs[i], &targets[i]));
            let mut acc: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g, _) = r?;
                batch_loss += l;
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => {
                        for (x, y) in a.iter_mut().zip(&g) {
                            x.add_assign(y);
                        }
                    }
                }
            }
            if !batch_loss.is_finite() {
                let msg = format!("non-finite loss {batch_loss} in epoch {epoch}");
                return Ok(TrainOutcome { best, best_epoch, best_val_acc: best_val.max(0.0), log, aborted: Some(msg) });
            }
            loss_sum += batch_loss;
            let mut grads = acc.expect("batches are non-empty");
            let mut scale = 1.0 / batch.len() as f64;
            if cfg.clip_norm > 0.0 {
                let norm = scale * grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt();
                if norm > cfg.clip_norm {
                    scale *= cfg.clip_norm / norm;
                }
            }
            for g in &mut grads {
                g.scale_in_place(scale);
            }
            if let Err(e) = optimizer_step(&mut params, &grads, &mut state, &hyper) {
                let msg = format!("epoch {epoch}: {e}");
                return Ok(TrainOutcome { best, best_epoch, best_val_acc: best_val.max(0.0), log, aborted: Some(msg) });
            }
        }
        let val_acc = if val_set.is_empty() { 0.0 } else { evaluate(&params, val_set)? };
        let entry = EpochLog {
            epoch,
            train_loss: if active.is_empty() { 0.0 } else { loss_sum / active.len() as f64 },
            val_acc,
            dropped_fully_masked: dropped,
        };
        if cfg.report_every > 0 && epoch % cfg.report_every == 0 {
            eprintln!("epoch {epoch}: loss {:.4} val_acc {:.4}", entry.train_loss, val_acc);
        }
        log.push(entry);
        // without a validation split the last epoch wins
        if val_acc > best_val || val_set.is_empty() {
            best_val = val_acc;
            best_epoch = epoch;
            best = params.clone();
        }
    }
    Ok(TrainOutcome { best, best_epoch, best_val_acc: best_val, log, aborted: None })
}
