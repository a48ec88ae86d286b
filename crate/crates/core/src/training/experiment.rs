use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, TrainConfig};
use crate::data::tokenizer::VOCAB_SIZE;
use crate::data::{gen_synth, tokenize_all, Splits, SynthConfig, SynthTask, TokenizedExample};
use crate::error::{Result, XtfError};
use crate::filtering::{apply_filters, filter_quality, Complementarity, FilterConfig, NoiseMask, QualityReport};
use crate::scoring::{score_dataset, ScoringConfig};
use crate::tiny_lm::{ModelConfig, ModelParams};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scoring: ScoringConfig,
    pub filter: FilterConfig,
    pub train: TrainConfig,
}

/// Recipe for the base checkpoint that scores the corpus and starts both
/// arms: a fresh model, optionally warmed up on a clean synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseConfig {
    pub model: ModelConfig,
    pub task: SynthTask,
    /// Clean warm-up records; 0 leaves the model at its initialization.
    pub warmup_size: usize,
    pub warmup_epochs: usize,
    pub warmup_lr: f64,
    pub seed: u64,
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig {
            model: ModelConfig::default(),
            task: SynthTask::ChainedAddition,
            warmup_size: 0,
            warmup_epochs: 1,
            warmup_lr: 1e-3,
            seed: 0,
        }
    }
}

pub fn build_base(cfg: &BaseConfig) -> Result<ModelParams> {
    let mut model = cfg.model.clone();
    model.seed = cfg.seed;
    let init = ModelParams::init(&model)?;
    if cfg.warmup_size == 0 {
        return Ok(init);
    }
    let synth = SynthConfig::new(cfg.task, cfg.warmup_size, 0.0, cfg.seed ^ 0x5eed_ba5e);
    let corpus = tokenize_all(&gen_synth(&synth)?, VOCAB_SIZE)?;
    let tc = TrainConfig {
        lr: cfg.warmup_lr,
        epochs: cfg.warmup_epochs,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let out = train(&init, &corpus, None, &[], &tc)?;
    if let Some(msg) = out.aborted {
        return Err(XtfError::Training(format!("base warm-up: {msg}")));
    }
    Ok(out.best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub normal_acc: f64,
    pub xtf_acc: f64,
    pub filtered_fraction: f64,
    pub per_attribute_counts: BTreeMap<String, usize>,
    pub seed: u64,
    pub normal_val_acc: f64,
    pub xtf_val_acc: f64,
    pub normal_best_epoch: usize,
    pub xtf_best_epoch: usize,
    pub otsu_thresholds: Vec<f64>,
    pub overlap: Complementarity,
    /// Present when the training split carries ground-truth noise flags.
    pub quality: Option<QualityReport>,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub masks: Vec<NoiseMask>,
}

/// Scores the training split with `base`, derives masks, then fine-tunes
/// twice from `base` with identical data order: once on the full labels, once
/// with the masks. Both are judged on the test split.
pub fn run_experiment(
    base: &ModelParams,
    splits: &Splits<TokenizedExample>,
    cfg: &ExperimentConfig,
) -> Result<ExperimentRun> {
    if splits.train.is_empty() || splits.test.is_empty() {
        return Err(XtfError::Input("experiment needs non-empty train and test splits".into()));
    }
    let scored = score_dataset(base, &splits.train, &cfg.scoring)?;
    if let Some(f) = scored.failures.first() {
        return Err(XtfError::Input(format!(
            "{} training examples could not be scored; first {}: {}",
            scored.failures.len(),
            f.id,
            f.message
        )));
    }
    let filtered = apply_filters(&scored.scores, &cfg.filter)?;
    let quality = if splits.train.iter().all(|e| e.noise_truth.is_some()) {
        Some(filter_quality(&filtered.masks, &splits.train)?)
    } else {
        None
    };

    let normal = train(base, &splits.train, None, &splits.val, &cfg.train)?;
    let xtf = train(base, &splits.train, Some(&filtered.masks), &splits.val, &cfg.train)?;
    for (arm, out) in [("normal", &normal), ("xtf", &xtf)] {
        if let Some(msg) = &out.aborted {
            return Err(XtfError::Training(format!("{arm} arm: {msg}")));
        }
    }
    let stats = filtered.stats;
    let report = ExperimentReport {
        normal_acc: evaluate(&normal.best, &splits.test)?,
        xtf_acc: evaluate(&xtf.best, &splits.test)?,
        filtered_fraction: stats.filtered_fraction(),
        per_attribute_counts: stats.per_attribute_counts.clone(),
        seed: cfg.train.seed,
        normal_val_acc: normal.best_val_acc,
        xtf_val_acc: xtf.best_val_acc,
        normal_best_epoch: normal.best_epoch,
        xtf_best_epoch: xtf.best_epoch,
        otsu_thresholds: stats.otsu_thresholds,
        overlap: stats.overlap,
        quality,
    };
    Ok(ExperimentRun { report, masks: filtered.masks })
}
