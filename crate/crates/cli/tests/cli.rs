use std::path::Path;
use std::process::{Command, Output};

fn xtf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xtf"))
        .args(args)
        .current_dir(dir)
        .env("XTF_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "\
# tiny pipeline for smoke runs
size = 40
split = 24/8/8
d_model = 16
d_ff = 32
epochs = 2
otsu_bins = 32
";

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let d = tempfile::tempdir().unwrap();
    let o = xtf(&["gen-synth", "--bogus"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = xtf(&["no-such-command"], d.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    let d = tempfile::tempdir().unwrap();
    let o = xtf(&["--help"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["gen-synth", "score", "filter", "train", "eval", "report", "verify-theory", "run-experiment"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn missing_scores_file_is_input_error() {
    let d = tempfile::tempdir().unwrap();
    let o = xtf(&["filter", "--scores", "nowhere/scores.jsonl"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere/scores.jsonl"), "{}", stderr(&o));
}

#[test]
fn bad_config_is_input_error() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.cfg"), "epochs = lots\n").unwrap();
    let o = xtf(&["gen-synth", "--config", "c.cfg"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epochs"));
    std::fs::write(d.path().join("c.cfg"), "nonsense_key = 1\n").unwrap();
    let o = xtf(&["gen-synth", "--config", "c.cfg"], d.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_theory_smoke() {
    let d = tempfile::tempdir().unwrap();
    let o = xtf(&["verify-theory", "--seed", "7", "--out", "t"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let checks = v["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    for c in checks {
        for k in ["name", "instances", "max_violation", "pass"] {
            assert!(c.get(k).is_some(), "{k}");
        }
    }
    let csv = std::fs::read_to_string(d.path().join("t/gain_sweep.csv")).unwrap();
    assert!(csv.starts_with("alpha,beta,eps,zeta"));
}

#[test]
fn gen_synth_is_byte_stable() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.cfg"), SMALL).unwrap();
    for out in ["a", "b"] {
        let o = xtf(&["gen-synth", "--config", "c.cfg", "--seed", "3", "--out", out], d.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = std::fs::read(d.path().join("a/data.jsonl")).unwrap();
    let b = std::fs::read(d.path().join("b/data.jsonl")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 40);
}

#[test]
fn score_filter_train_pipeline() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.cfg"), SMALL).unwrap();
    let run = |args: &[&str]| {
        let mut full = args.to_vec();
        full.extend(["--config", "c.cfg", "--seed", "1", "--out", "run"]);
        let o = xtf(&full, d.path());
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["gen-synth"]);
    run(&["score", "--data", "run/data.jsonl"]);
    run(&["filter", "--scores", "run/scores.jsonl"]);
    run(&["train", "--data", "run/data.jsonl", "--masks", "run/masks.jsonl", "--model", "run/base.ckpt"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("run/train_report.json")).unwrap()).unwrap();
    assert_eq!(report["masked"], true);
    assert!(report["test_acc"].as_f64().is_some());
    let o = run(&["eval", "--data", "run/data.jsonl", "--model", "run/model.ckpt"]);
    let acc: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    run(&["report", "--scores", "run/scores.jsonl", "--masks", "run/masks.jsonl", "--data", "run/data.jsonl"]);
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("run/report.json")).unwrap()).unwrap();
    assert!(rep["quality"]["overall"]["precision"].as_f64().is_some());
    assert!(d.path().join("run/score_hist.csv").exists());
    assert!(d.path().join("run/overlap.csv").exists());
}

#[test]
fn run_experiment_writes_report() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.cfg"), SMALL).unwrap();
    let o = xtf(&["run-experiment", "--config", "c.cfg", "--set", "runs=2", "--out", "e"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    for k in ["normal_acc", "xtf_acc", "filtered_fraction", "per_attribute_counts", "seed"] {
        assert!(v["runs"][0].get(k).is_some(), "{k}");
    }
    let csv = std::fs::read_to_string(d.path().join("e/experiment_seeds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn all_false_masks_match_unmasked_training() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.cfg"), SMALL).unwrap();
    let go = |args: &[&str], out: &str| {
        let mut full = args.to_vec();
        full.extend(["--config", "c.cfg", "--seed", "2", "--out", out]);
        let o = xtf(&full, d.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    };
    go(&["gen-synth"], "r");
    go(&["score", "--data", "r/data.jsonl"], "r");
    go(&["filter", "--scores", "r/scores.jsonl"], "r");
    let masks = std::fs::read_to_string(d.path().join("r/masks.jsonl")).unwrap();
    let mut blank = String::new();
    for line in masks.lines() {
        let mut m: serde_json::Value = serde_json::from_str(line).unwrap();
        let n = m["noise"].as_array().unwrap().len();
        m["noise"] = serde_json::json!(vec![false; n]);
        m["sources"] = serde_json::json!(vec![Vec::<String>::new(); n]);
        blank.push_str(&m.to_string());
        blank.push('\n');
    }
    std::fs::write(d.path().join("r/blank.jsonl"), blank).unwrap();
    go(&["train", "--data", "r/data.jsonl", "--model", "r/base.ckpt"], "n1");
    go(&["train", "--data", "r/data.jsonl", "--model", "r/base.ckpt", "--masks", "r/blank.jsonl"], "n2");
    assert_eq!(
        std::fs::read(d.path().join("n1/model.ckpt")).unwrap(),
        std::fs::read(d.path().join("n2/model.ckpt")).unwrap()
    );
}
