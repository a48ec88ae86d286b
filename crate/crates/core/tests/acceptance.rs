//! Acceptance suite. Prints one PASS/FAIL line per criterion, then exits
//! non-zero if a criterion outside `KNOWN_FAILING` fails.
//!
//! Criteria 4 and 10 are computed as stated and currently fail; see the
//! README for why.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xtf::data::tokenizer::VOCAB_SIZE;
use xtf::data::{gen_synth, tokenize_all, SynthConfig, SynthTask, TokenizedExample};
use xtf::filtering::{apply_filters, filter_kn, filter_ri, multi_otsu, Attribute, FilterConfig, OtsuResult};
use xtf::pipeline::{run_suite, PipelineConfig};
use xtf::scoring::{kn_from_pcp, score_dataset, ScoringConfig};
use xtf::theory_lab::{
    check_edge_cases, check_gain_identity, check_kn_scenarios, check_kn_score_bound, check_lower_bound,
    check_one_step, check_weak_bias, CheckResult,
};
use xtf::tiny_lm::{loss_and_grad, loss_value, ModelConfig, ModelParams};
use xtf::training::{build_base, loss_targets, masked_loss, BaseConfig};

const SEED: u64 = 7;
const KNOWN_FAILING: [usize; 2] = [4, 10];

struct Outcome {
    pass: bool,
    detail: String,
}

fn summarize(checks: &[&CheckResult]) -> Outcome {
    let pass = checks.iter().all(|c| c.pass);
    let detail = checks
        .iter()
        .map(|c| format!("{} n={} worst={:.3e}{}", c.name, c.instances, c.max_violation, if c.pass { "" } else { " FAIL" }))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome { pass, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let el = t.elapsed();
    if let Some(l) = limit {
        if el > l {
            o.pass = false;
        }
        o.detail.push_str(&format!("; {:.2}s (limit {}s)", el.as_secs_f64(), l.as_secs()));
    } else {
        o.detail.push_str(&format!("; {:.2}s", el.as_secs_f64()));
    }
    o
}

fn c1() -> Outcome {
    let r = check_gain_identity(SEED, 200).unwrap();
    summarize(&[&r])
}

fn c2() -> Outcome {
    let r = check_edge_cases(SEED, 50).unwrap();
    summarize(&r.iter().collect::<Vec<_>>())
}

fn c3() -> Outcome {
    // instances with zeta >= 1 are skipped; draw until 100 remain
    let mut n = 100;
    let lb = loop {
        let r = check_lower_bound(SEED, n).unwrap();
        if r.instances >= 100 || n > 3200 {
            break r;
        }
        n *= 2;
    };
    let wb = check_weak_bias(SEED, 100).unwrap();
    let mut o = summarize(&[&lb, &wb]);
    o.pass &= lb.instances >= 100;
    o
}

fn c4() -> Outcome {
    let r = check_one_step(SEED, 50).unwrap();
    let picked: Vec<&CheckResult> = r.iter().filter(|c| c.name != "one_step_descent").collect();
    summarize(&picked)
}

fn c5() -> Outcome {
    let s = check_kn_score_bound(SEED, 1000).unwrap();
    let sc = check_kn_scenarios(SEED, 100).unwrap();
    let mut all = vec![&s];
    all.extend(sc.iter());
    summarize(&all)
}

/// Exhaustive multi-Otsu written from scratch: histogram, every cut tuple,
/// between-class variance from bin centres.
fn oracle_otsu(values: &[f64], k: usize, bins: usize) -> Option<(Vec<usize>, Vec<f64>, f64)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return None;
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0.0f64; bins];
    for &v in values {
        let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1.0;
    }
    let n = values.len() as f64;
    let centre = |i: usize| lo + (i as f64 + 0.5) * w;
    let mu: f64 = (0..bins).map(|i| counts[i] * centre(i)).sum::<f64>() / n;
    let var_of = |cuts: &[usize]| -> f64 {
        let mut edges = vec![0];
        edges.extend_from_slice(cuts);
        edges.push(bins);
        let mut s = 0.0;
        for p in edges.windows(2) {
            let c: f64 = (p[0]..p[1]).map(|i| counts[i]).sum();
            if c > 0.0 {
                let m = (p[0]..p[1]).map(|i| counts[i] * centre(i)).sum::<f64>() / c;
                s += c / n * (m - mu) * (m - mu);
            }
        }
        s
    };
    let mut all = Vec::new();
    let mut stack = vec![(Vec::new(), 1usize)];
    while let Some((cur, start)) = stack.pop() {
        if cur.len() == k - 1 {
            all.push(cur);
            continue;
        }
        for c in (start..bins).rev() {
            let mut next = cur.clone();
            next.push(c);
            stack.push((next, c + 1));
        }
    }
    all.sort();
    let vars: Vec<f64> = all.iter().map(|c| var_of(c)).collect();
    let best = vars.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let i = vars.iter().position(|&v| v >= best - 1e-12 * best.abs()).unwrap();
    let cuts = all[i].clone();
    let thresholds = cuts.iter().map(|&c| lo + c as f64 * w).collect();
    Some((cuts, thresholds, vars[i]))
}

/// Textbook two-class Otsu: maximize (mu_T w - mu)^2 / (w (1 - w)).
fn classic_otsu(values: &[f64], bins: usize) -> usize {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = vec![0.0; bins];
    for &v in values {
        let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        p[b.min(bins - 1)] += 1.0 / values.len() as f64;
    }
    let mu_t: f64 = p.iter().enumerate().map(|(i, q)| i as f64 * q).sum();
    let (mut w, mut mu, mut best, mut arg) = (0.0, 0.0, f64::NEG_INFINITY, 0);
    for t in 1..bins {
        w += p[t - 1];
        mu += (t - 1) as f64 * p[t - 1];
        if w <= 0.0 || w >= 1.0 {
            continue;
        }
        let s = (mu_t * w - mu).powi(2) / (w * (1.0 - w));
        if s > best * (1.0 + 1e-12) {
            best = s;
            arg = t;
        }
    }
    arg
}

fn c6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x6);
    let mut bad = Vec::new();
    for case in 0..100 {
        let n = rng.gen_range(5..200);
        let bins = rng.gen_range(4..=64);
        let k = if case % 2 == 0 { 2 } else { 3 };
        let clumps = rng.gen_range(1..4);
        let values: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0..clumps) as f64 * 3.0 + rng.gen_range(0.0..1.0))
            .collect();
        let got = multi_otsu(&values, k, bins).unwrap();
        let want = oracle_otsu(&values, k, bins);
        match (&got, want) {
            (OtsuResult::Partition { cuts, thresholds, sigma_b2, .. }, Some((oc, ot, ov))) => {
                let same_t = thresholds.iter().zip(&ot).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()));
                if *cuts != oc || !same_t || (sigma_b2 - ov).abs() > 1e-9 * (1.0 + ov) {
                    bad.push(format!("case {case}: cuts {cuts:?} vs {oc:?}, var {sigma_b2} vs {ov}"));
                }
                if k == 2 && cuts[0] != classic_otsu(&values, bins) {
                    bad.push(format!("case {case}: classic otsu disagrees"));
                }
            }
            (OtsuResult::NoPartition, None) => {}
            _ => bad.push(format!("case {case}: partition mismatch")),
        }
    }
    Outcome { pass: bad.is_empty(), detail: format!("100 sets, {} mismatches {:?}", bad.len(), bad.first()) }
}

fn c7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x7);
    let mut bad = 0;
    let mut flagged = 0;
    for _ in 0..100 {
        let n = rng.gen_range(2..40);
        let x: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.1) { rng.gen_range(-5.0..0.0) } else { rng.gen_range(0.0..1.0) })
            .collect();
        let y: Vec<f64> = x.iter().map(|v| 5.0 * v + 2.0).collect();
        let (a, _) = filter_ri(&x);
        let (b, _) = filter_ri(&y);
        flagged += a.len();
        if a != b {
            bad += 1;
        }
    }
    let single = filter_ri(&[0.3]).0.is_empty();
    let equal = filter_ri(&[0.2; 9]).0.is_empty();
    Outcome {
        pass: bad == 0 && single && equal,
        detail: format!("100 vectors, {bad} differ under 5x+2 ({flagged} flagged); single-token empty {single}; all-equal empty {equal}"),
    }
}

fn corpus(size: usize, noise: f64, seed: u64) -> Vec<TokenizedExample> {
    let recs = gen_synth(&SynthConfig::new(SynthTask::ChainedAddition, size, noise, seed)).unwrap();
    tokenize_all(&recs, VOCAB_SIZE).unwrap()
}

fn c8() -> Outcome {
    let model = ModelParams::init(&ModelConfig { d_model: 16, d_ff: 32, n_layers: 2, n_heads: 2, seed: 3, ..Default::default() })
        .unwrap();
    let data = corpus(20, 0.25, SEED);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x8);
    let (mut worst, mut checked, mut logits_same) = (0.0f64, 0usize, true);
    for ex in &data {
        let mask: Vec<bool> = (0..ex.label_len()).map(|_| rng.gen_bool(0.3)).collect();
        let targets = loss_targets(ex, Some(&mask)).unwrap();
        let seq = ex.full_sequence();
        let (_, grads, logits_masked) = loss_and_grad(&model, &seq, &targets).unwrap();
        let (_, _, logits_plain) = loss_and_grad(&model, &seq, &loss_targets(ex, None).unwrap()).unwrap();
        logits_same &= logits_masked.data() == logits_plain.data();
        for _ in 0..15 {
            let ti = rng.gen_range(0..grads.len());
            let j = rng.gen_range(0..grads[ti].len());
            let h = 1e-5;
            let mut p = model.clone();
            p.tensors_mut()[ti].data_mut()[j] += h;
            let up = loss_value(&p, &seq, &targets).unwrap();
            p.tensors_mut()[ti].data_mut()[j] -= 2.0 * h;
            let down = loss_value(&p, &seq, &targets).unwrap();
            let fd = (up - down) / (2.0 * h);
            let a = grads[ti].data()[j];
            let rel = (a - fd).abs() / (a.abs().max(fd.abs()) + 1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let ex = &data[0];
    let (loss, grads) = masked_loss(&model, ex, &vec![true; ex.label_len()]).unwrap();
    let zero = loss == 0.0 && grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0));
    Outcome {
        pass: worst <= 1e-4 && zero && logits_same,
        detail: format!(
            "20 pairs, {checked} coordinates, worst relative error {worst:.2e}; all-masked zero {zero}; logits bitwise equal {logits_same}"
        ),
    }
}

fn c9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x9);
    let mut bad = 0;
    let mut total = 0;
    let edge = [0.95, 0.95 + f64::EPSILON, 0.95 - f64::EPSILON, 0.9500000000000001, 0.9499999999999998, 1.0, 0.0];
    for _ in 0..200 {
        let n = rng.gen_range(1..30);
        let pcp: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..3) {
                0 => edge[rng.gen_range(0..edge.len())],
                1 => rng.gen_range(0.9..1.0),
                _ => rng.gen_range(0.0..1.0),
            })
            .collect();
        let flagged = filter_kn(&kn_from_pcp(&pcp), 0.05);
        for (i, &p) in pcp.iter().enumerate() {
            total += 1;
            if flagged.contains(&i) != (p > 0.95) {
                bad += 1;
            }
        }
    }
    Outcome { pass: bad == 0, detail: format!("{total} tokens, {bad} misclassified at the 0.95 boundary") }
}

fn c10() -> Outcome {
    let mut cfg = PipelineConfig::default();
    for (k, v) in [
        ("seed", "0"),
        ("runs", "10"),
        ("d_model", "32"),
        ("d_ff", "64"),
        ("warmup_size", "500"),
        ("warmup_epochs", "10"),
        ("epochs", "10"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.validate().unwrap();
    let suite = run_suite(&cfg, |r| {
        let q = r.quality.as_ref().map(|q| q.overall);
        println!(
            "    seed {}: normal {:.3} xtf {:.3} filtered {:.1}% precision {:.3} recall {:.3}",
            r.seed,
            r.normal_acc,
            r.xtf_acc,
            100.0 * r.filtered_fraction,
            q.map_or(f64::NAN, |q| q.precision),
            q.map_or(f64::NAN, |q| q.recall)
        );
    })
    .unwrap();
    let frac = suite.mean_filtered_fraction;
    let in_band = (0.02..=0.60).contains(&frac);
    Outcome {
        pass: suite.xtf_not_worse >= 7 && in_band,
        detail: format!(
            "xtf >= normal on {}/10 seeds; mean acc normal {:.3} xtf {:.3}; mean filtered {:.1}% (band 2-60%: {in_band})",
            suite.xtf_not_worse,
            suite.mean_normal_acc,
            suite.mean_xtf_acc,
            100.0 * frac
        ),
    }
}

fn c11() -> Outcome {
    let data = corpus(120, 0.25, SEED);
    // a briefly warmed model so all three rules have something to flag
    let model = build_base(&BaseConfig {
        model: ModelConfig { d_model: 16, d_ff: 32, ..Default::default() },
        warmup_size: 200,
        warmup_epochs: 3,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let scored = score_dataset(&model, &data, &ScoringConfig::default()).unwrap();
    let full = apply_filters(&scored.scores, &FilterConfig::default()).unwrap();
    let ov = &full.stats.overlap;
    let in_unit = |m: &std::collections::BTreeMap<String, std::collections::BTreeMap<String, f64>>| {
        m.values().flat_map(|r| r.values()).all(|v| (0.0..=1.0).contains(v))
    };
    let matrix_ok = ov.overlap.len() == 3 && in_unit(&ov.overlap) && in_unit(&ov.after);
    let mut ablation_ok = true;
    for off in Attribute::ALL {
        let cfg = FilterConfig {
            use_ri: off != Attribute::Ri,
            use_kn: off != Attribute::Kn,
            use_tr: off != Attribute::Tr,
            ..Default::default()
        };
        let ab = apply_filters(&scored.scores, &cfg).unwrap();
        for (f, a) in full.masks.iter().zip(&ab.masks) {
            for k in 0..f.noise.len() {
                ablation_ok &= a.noise[k] == f.sources[k].iter().any(|&s| s != off);
            }
        }
    }
    Outcome {
        pass: matrix_ok && ablation_ok,
        detail: format!(
            "overlap matrix 3x3 in [0,1] {matrix_ok}; ablations equal union of the other two {ablation_ok}; counts {:?}",
            ov.counts
        ),
    }
}

fn main() {
    let criteria: Vec<(usize, &str, Option<u64>, fn() -> Outcome)> = vec![
        (1, "alignment-gain identity", Some(10), c1),
        (2, "edge cases", None, c2),
        (3, "lower bound and weak-bias bound", None, c3),
        (4, "one-step comparison", None, c4),
        (5, "known-token bounds", None, c5),
        (6, "multi-Otsu oracle", Some(5), c6),
        (7, "IQR filter invariance", None, c7),
        (8, "masked-loss gradients", None, c8),
        (9, "KN boundary", None, c9),
        (10, "directional experiment", Some(600), c10),
        (11, "complementarity and ablation", None, c11),
    ];
    let mut unexpected = Vec::new();
    for (id, name, limit, f) in criteria {
        let o = timed(limit.map(Duration::from_secs), f);
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id:>2} {name}: {}", o.detail);
        if !o.pass && !KNOWN_FAILING.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
