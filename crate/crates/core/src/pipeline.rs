//! Flat `key = value` configuration shared by the command-line stages.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::dataset::fnv1a;
use crate::data::{gen_synth, split, tokenize_all, SplitSpec, Splits, SynthConfig, SynthTask, TokenizedExample};
use crate::error::{Result, XtfError};
use crate::filtering::FilterConfig;
use crate::io;
use crate::scoring::ScoringConfig;
use crate::tiny_lm::{checkpoint, ModelParams, OptimizerMode};
use crate::training::{build_base, run_experiment, BaseConfig, ExperimentConfig, ExperimentReport, TrainConfig};

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| XtfError::Config(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(XtfError::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(XtfError::Config(format!("line {}: duplicate key '{k}'", n + 1)));
        }
    }
    Ok(out)
}

pub fn load_kv(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    parse_kv(&io::read_to_string(path)?)
}

/// Everything a stage may need, with defaults for every key.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub split: SplitSpec,
    pub base: BaseConfig,
    pub checkpoint: Option<PathBuf>,
    pub scoring: ScoringConfig,
    pub filter: FilterConfig,
    pub train: TrainConfig,
    /// Seeds `seed .. seed + runs` for `run-experiment`.
    pub runs: u64,
    pub hist_bins: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            synth: SynthConfig::new(SynthTask::ChainedAddition, 620, 0.25, 0),
            split: SplitSpec::Counts { train: 500, val: 60, test: 60 },
            base: BaseConfig::default(),
            checkpoint: None,
            scoring: ScoringConfig::default(),
            filter: FilterConfig::default(),
            train: TrainConfig::default(),
            runs: 1,
            hist_bins: 20,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed", "task", "size", "noise_rate", "hard", "split", "vocab_size", "d_model", "n_layers", "n_heads", "d_ff",
    "max_seq", "tied", "warmup_size", "warmup_epochs", "warmup_lr", "checkpoint", "ri_agg", "distance",
    "domain_source", "kn_cutoff", "otsu_classes", "otsu_bins", "use_ri", "use_kn", "use_tr", "lr", "epochs",
    "batch_size", "optimizer", "clip_norm", "report_every", "runs", "hist_bins",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| XtfError::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(XtfError::Config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

/// `80/10` (percent train/val, rest test) or `500/60/60` (exact counts).
pub fn parse_split(v: &str) -> Result<SplitSpec> {
    let parts: Vec<&str> = v.split('/').map(str::trim).collect();
    match parts.as_slice() {
        [t, va] => Ok(SplitSpec::Percent { train: parse("split", t)?, val: parse("split", va)? }),
        [t, va, te] => Ok(SplitSpec::Counts {
            train: parse("split", t)?,
            val: parse("split", va)?,
            test: parse("split", te)?,
        }),
        _ => Err(XtfError::Config(format!("split: expected a/b or a/b/c, got '{v}'"))),
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "task" => self.synth.task = v.parse()?,
            "size" => self.synth.size = parse(key, v)?,
            "noise_rate" => self.synth.noise_rate = parse(key, v)?,
            "hard" => self.synth.hard = parse_bool(key, v)?,
            "split" => self.split = parse_split(v)?,
            "vocab_size" => self.base.model.vocab_size = parse(key, v)?,
            "d_model" => self.base.model.d_model = parse(key, v)?,
            "n_layers" => self.base.model.n_layers = parse(key, v)?,
            "n_heads" => self.base.model.n_heads = parse(key, v)?,
            "d_ff" => self.base.model.d_ff = parse(key, v)?,
            "max_seq" => self.base.model.max_seq = parse(key, v)?,
            "tied" => self.base.model.tied = parse_bool(key, v)?,
            "warmup_size" => self.base.warmup_size = parse(key, v)?,
            "warmup_epochs" => self.base.warmup_epochs = parse(key, v)?,
            "warmup_lr" => self.base.warmup_lr = parse(key, v)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "ri_agg" => self.scoring.ri_agg = v.parse()?,
            "distance" => self.scoring.distance = v.parse()?,
            "domain_source" => self.scoring.domain_source = v.parse()?,
            "kn_cutoff" => self.filter.kn_cutoff = parse(key, v)?,
            "otsu_classes" => self.filter.otsu_classes = parse(key, v)?,
            "otsu_bins" => self.filter.otsu_bins = parse(key, v)?,
            "use_ri" => self.filter.use_ri = parse_bool(key, v)?,
            "use_kn" => self.filter.use_kn = parse_bool(key, v)?,
            "use_tr" => self.filter.use_tr = parse_bool(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "optimizer" => self.train.optimizer = v.parse::<OptimizerMode>()?,
            "clip_norm" => self.train.clip_norm = parse(key, v)?,
            "report_every" => self.train.report_every = parse(key, v)?,
            "runs" => self.runs = parse(key, v)?,
            "hist_bins" => self.hist_bins = parse(key, v)?,
            other => return Err(XtfError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = PipelineConfig::default();
        for (k, v) in kv {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.model.validate()?;
        self.filter.validate()?;
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.synth.noise_rate) {
            return Err(XtfError::Config(format!("noise_rate must be in [0, 1), got {}", self.synth.noise_rate)));
        }
        if self.runs == 0 {
            return Err(XtfError::Config("runs must be >= 1".into()));
        }
        if self.hist_bins == 0 {
            return Err(XtfError::Config("hist_bins must be >= 1".into()));
        }
        Ok(())
    }

    /// Points every stochastic component at its own named sub-seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.synth.seed = sub_seed(seed, "noise");
        c.base.seed = sub_seed(seed, "init");
        c.train.seed = sub_seed(seed, "shuffle");
        c
    }

    pub fn split_seed(&self) -> u64 {
        sub_seed(self.seed, "split")
    }
}

pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let mut b = seed.to_le_bytes().to_vec();
    b.extend_from_slice(name.as_bytes());
    fnv1a(&b)
}

/// Base checkpoint for a configured run: the named file, or a fresh (and
/// optionally warmed-up) model.
pub fn load_or_build_base(cfg: &PipelineConfig) -> Result<ModelParams> {
    match &cfg.checkpoint {
        Some(p) => checkpoint::load(p),
        None => build_base(&cfg.base),
    }
}

pub fn synth_splits(cfg: &PipelineConfig) -> Result<Splits<TokenizedExample>> {
    let records = gen_synth(&cfg.synth)?;
    let examples = tokenize_all(&records, cfg.base.model.vocab_size)?;
    split(&examples, |e| &e.id, cfg.split, cfg.split_seed())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub runs: Vec<ExperimentReport>,
    /// Seeds where the masked arm matched or beat the unmasked one.
    pub xtf_not_worse: usize,
    pub mean_normal_acc: f64,
    pub mean_xtf_acc: f64,
    pub mean_filtered_fraction: f64,
}

impl SuiteReport {
    /// One row per seed with accuracies and filter quality.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,normal_acc,xtf_acc,filtered_fraction,precision,recall\n");
        for r in &self.runs {
            let (p, rc) = r
                .quality
                .as_ref()
                .map(|q| (q.overall.precision.to_string(), q.overall.recall.to_string()))
                .unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{p},{rc}", r.seed, r.normal_acc, r.xtf_acc, r.filtered_fraction);
        }
        s
    }
}

/// Paired experiment over seeds `cfg.seed .. cfg.seed + cfg.runs`, each with
/// its own corpus, split, base and data order.
pub fn run_suite(cfg: &PipelineConfig, mut progress: impl FnMut(&ExperimentReport)) -> Result<SuiteReport> {
    let mut runs = Vec::new();
    for s in cfg.seed..cfg.seed + cfg.runs {
        let c = cfg.with_seed(s);
        let splits = synth_splits(&c)?;
        let base = load_or_build_base(&c)?;
        let exp = ExperimentConfig { scoring: c.scoring.clone(), filter: c.filter.clone(), train: c.train.clone() };
        let mut report = run_experiment(&base, &splits, &exp)?.report;
        report.seed = s;
        progress(&report);
        runs.push(report);
    }
    let n = runs.len() as f64;
    let mean = |f: fn(&ExperimentReport) -> f64| runs.iter().map(f).sum::<f64>() / n;
    Ok(SuiteReport {
        xtf_not_worse: runs.iter().filter(|r| r.xtf_acc >= r.normal_acc).count(),
        mean_normal_acc: mean(|r| r.normal_acc),
        mean_xtf_acc: mean(|r| r.xtf_acc),
        mean_filtered_fraction: mean(|r| r.filtered_fraction),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let kv = parse_kv("# top\n\nlr = 0.01  # inline\nepochs=3\n").unwrap();
        assert_eq!(kv.len(), 2);
        assert_eq!(kv["lr"], "0.01");
        let c = PipelineConfig::from_kv(&kv).unwrap();
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.train.epochs, 3);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(parse_kv("lr 0.01").is_err());
        assert!(parse_kv("a=1\na=2").is_err());
        assert!(parse_kv("=3").is_err());
        let kv = parse_kv("bogus = 1").unwrap();
        assert!(matches!(PipelineConfig::from_kv(&kv), Err(XtfError::Config(_))));
        let kv = parse_kv("epochs = 0").unwrap();
        assert!(PipelineConfig::from_kv(&kv).is_err());
        let kv = parse_kv("use_tr = maybe").unwrap();
        assert!(PipelineConfig::from_kv(&kv).is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let sample = |k: &str| match k {
            "task" => "copy",
            "hard" | "tied" | "use_ri" | "use_kn" | "use_tr" => "true",
            "split" => "80/10",
            "checkpoint" => "m.ckpt",
            "ri_agg" => "sum",
            "distance" => "cosine",
            "domain_source" => "unique_tokens",
            "optimizer" => "sgd",
            "noise_rate" | "lr" | "warmup_lr" | "kn_cutoff" | "clip_norm" => "0.1",
            "d_model" | "max_seq" | "vocab_size" => "128",
            "n_heads" | "n_layers" => "2",
            _ => "3",
        };
        let mut c = PipelineConfig::default();
        for k in KEYS {
            c.set(k, sample(k)).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }

    #[test]
    fn split_forms() {
        assert_eq!(parse_split("80/10").unwrap(), SplitSpec::Percent { train: 80, val: 10 });
        assert_eq!(parse_split("5/2/1").unwrap(), SplitSpec::Counts { train: 5, val: 2, test: 1 });
        assert!(parse_split("1").is_err());
    }

    #[test]
    fn sub_seeds_differ_and_repeat() {
        let c = PipelineConfig::default().with_seed(4);
        assert_ne!(c.synth.seed, c.base.seed);
        assert_ne!(c.base.seed, c.train.seed);
        assert_eq!(c, PipelineConfig::default().with_seed(4));
    }
}
