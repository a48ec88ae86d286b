use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use xtf::data::{load_records, save_records, gen_synth, split, tokenize_all, Splits, TokenizedExample};
use xtf::filtering::{
    apply_filters, complementarity_report, filter_quality, load_masks, save_masks, Attribute, NoiseMask,
};
use xtf::io::write_atomic;
use xtf::pipeline::{load_kv, load_or_build_base, run_suite, PipelineConfig};
use xtf::scoring::{histogram_csv, load_scores, save_scores, score_dataset};
use xtf::theory_lab::verify_theory;
use xtf::tiny_lm::{checkpoint, ModelParams};
use xtf::training::{evaluate, save_log, train};
use xtf::XtfError;

#[derive(Parser)]
#[command(name = "xtf", version, about = "Token-level noise scoring, filtering and masked fine-tuning")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "xtf-out")]
    out: PathBuf,
    /// Override one config key, e.g. `--set epochs=5`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic corpus with ground-truth noise flags
    GenSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Score every label token of the training split with the base model
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Base checkpoint; built from the config when absent
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
    },
    /// Turn token scores into noise masks
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        scores: PathBuf,
    },
    /// Fine-tune on the training split, masked when masks are given
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        masks: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
    },
    /// Exact-match accuracy of a checkpoint on one split
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test", "all"])]
        split: String,
    },
    /// Score histograms, attribute overlap and filter quality
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        scores: PathBuf,
        #[arg(long, value_name = "FILE")]
        masks: PathBuf,
        /// Dataset with ground-truth flags, for precision and recall
        #[arg(long, value_name = "FILE")]
        data: Option<PathBuf>,
    },
    /// Numerical checks of the alignment-gain theory
    VerifyTheory {
        #[command(flatten)]
        common: Common,
        /// Exit with status 2 when any check fails
        #[arg(long)]
        strict: bool,
    },
    /// Paired unmasked vs masked fine-tuning over one or more seeds
    RunExperiment {
        #[command(flatten)]
        common: Common,
    },
}

fn config(common: &Common) -> Result<PipelineConfig> {
    let mut kv = match &common.config {
        Some(p) => load_kv(p)?,
        None => Default::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| XtfError::Config(format!("--set expects KEY=VALUE, got '{o}'")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut c = PipelineConfig::from_kv(&kv)?;
    if let Some(s) = common.seed {
        c.seed = s;
    }
    Ok(c.with_seed(c.seed))
}

fn out_path(common: &Common, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&common.out).map_err(|e| XtfError::io(&common.out, e))?;
    Ok(common.out.join(name))
}

fn write(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn splits_of(data: &Path, c: &PipelineConfig) -> Result<Splits<TokenizedExample>> {
    let records = load_records(data)?;
    let examples = tokenize_all(&records, c.base.model.vocab_size)?;
    Ok(split(&examples, |e| &e.id, c.split, c.split_seed())?)
}

fn base(model: &Option<PathBuf>, c: &PipelineConfig) -> Result<ModelParams> {
    Ok(match model {
        Some(p) => checkpoint::load(p)?,
        None => load_or_build_base(c)?,
    })
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenSynth { common } => {
            let c = config(&common)?;
            let records = gen_synth(&c.synth)?;
            save_records(&records, out_path(&common, "data.jsonl")?)?;
            eprintln!("{} records", records.len());
        }
        Cmd::Score { common, data, model } => {
            let c = config(&common)?;
            let splits = splits_of(&data, &c)?;
            let params = base(&model, &c)?;
            let scored = score_dataset(&params, &splits.train, &c.scoring)?;
            for f in &scored.failures {
                eprintln!("skipped {}: {}", f.id, f.message);
            }
            save_scores(&scored.scores, out_path(&common, "scores.jsonl")?)?;
            if model.is_none() && c.checkpoint.is_none() {
                checkpoint::save(&params, out_path(&common, "base.ckpt")?)?;
            }
        }
        Cmd::Filter { common, scores } => {
            let c = config(&common)?;
            let scores = load_scores(&scores)?;
            let out = apply_filters(&scores, &c.filter)?;
            save_masks(&out.masks, out_path(&common, "masks.jsonl")?)?;
            write(&out_path(&common, "filter_stats.json")?, &pretty(&out.stats))?;
            eprintln!("filtered {:.2}% of {} tokens", 100.0 * out.stats.filtered_fraction(), out.stats.total_tokens);
        }
        Cmd::Train { common, data, masks, model } => {
            let c = config(&common)?;
            let splits = splits_of(&data, &c)?;
            let params = base(&model, &c)?;
            let masks: Option<Vec<NoiseMask>> = masks.as_ref().map(load_masks).transpose()?;
            let out = train(&params, &splits.train, masks.as_deref(), &splits.val, &c.train)?;
            save_log(&out.log, out_path(&common, "train_log.jsonl")?)?;
            checkpoint::save(&out.best, out_path(&common, "model.ckpt")?)?;
            let test_acc = if splits.test.is_empty() { None } else { Some(evaluate(&out.best, &splits.test)?) };
            let report = json!({
                "masked": masks.is_some(),
                "best_epoch": out.best_epoch,
                "val_acc": out.best_val_acc,
                "test_acc": test_acc,
                "seed": c.seed,
                "aborted": out.aborted,
            });
            write(&out_path(&common, "train_report.json")?, &pretty(&report))?;
            if let Some(msg) = out.aborted {
                return Err(XtfError::Training(msg).into());
            }
        }
        Cmd::Eval { common, data, model, split } => {
            let c = config(&common)?;
            let s = splits_of(&data, &c)?;
            let set: Vec<TokenizedExample> = match split.as_str() {
                "train" => s.train,
                "val" => s.val,
                "test" => s.test,
                _ => s.train.into_iter().chain(s.val).chain(s.test).collect(),
            };
            if set.is_empty() {
                return Err(XtfError::Input(format!("{split} split is empty")).into());
            }
            let params = checkpoint::load(&model)?;
            let acc = evaluate(&params, &set)?;
            let report = json!({"split": split, "examples": set.len(), "accuracy": acc});
            write(&out_path(&common, "eval.json")?, &pretty(&report))?;
            println!("{acc}");
        }
        Cmd::Report { common, scores, masks, data } => {
            let c = config(&common)?;
            let scores = load_scores(&scores)?;
            let masks = load_masks(&masks)?;
            let comp = complementarity_report(&masks);
            write(&out_path(&common, "score_hist.csv")?, &histogram_csv(&scores, c.hist_bins))?;
            write(&out_path(&common, "overlap.csv")?, &comp.to_csv())?;
            let quality = match &data {
                Some(d) => {
                    let s = splits_of(d, &c)?;
                    Some(filter_quality(&masks, &s.train)?)
                }
                None => None,
            };
            let counts: Vec<_> = Attribute::ALL
                .iter()
                .map(|&a| (a.name(), masks.iter().map(|m| m.indices_of(a).len()).sum::<usize>()))
                .collect();
            let report = json!({
                "examples": masks.len(),
                "attribute_counts": counts.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
                "complementarity": comp,
                "quality": quality,
            });
            write(&out_path(&common, "report.json")?, &pretty(&report))?;
        }
        Cmd::VerifyTheory { common, strict } => {
            let c = config(&common)?;
            let report = verify_theory(c.seed)?;
            let text = pretty(&report);
            write(&out_path(&common, "theory_report.json")?, &text)?;
            write(&out_path(&common, "gain_sweep.csv")?, &report.sweep_csv())?;
            print!("{text}");
            for chk in report.checks.iter().filter(|c| !c.pass) {
                eprintln!("check {} failed (max violation {:e})", chk.name, chk.max_violation);
            }
            if strict && !report.all_pass() {
                return Err(XtfError::Contract("theory checks failed".into()).into());
            }
        }
        Cmd::RunExperiment { common } => {
            let c = config(&common)?;
            let suite = run_suite(&c, |r| {
                eprintln!("seed {}: normal {:.3} xtf {:.3} filtered {:.3}", r.seed, r.normal_acc, r.xtf_acc, r.filtered_fraction)
            })?;
            write(&out_path(&common, "experiment.json")?, &pretty(&suite))?;
            write(&out_path(&common, "experiment_seeds.csv")?, &suite.to_csv())?;
            println!("{}", serde_json::to_string(&suite).expect("report serializes"));
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<XtfError>() {
        Some(x) if !x.is_input_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
