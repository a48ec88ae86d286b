use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::DatasetRecord;
use crate::error::{Result, XtfError};

/// Off-task symbols used as distractors; disjoint from every task alphabet.
pub const DISTRACTORS: &[char] = &['q', 'x', 'z', 'j', 'k', 'v', 'w', '#', '@', '$', '%', '&'];
/// Distractors for hard mode, drawn from the task's own alphabet.
pub const HARD_DISTRACTORS: &[char] = &['0', '1', '2', '3', '4', '5', '6', '7', '8', '9', '+', '='];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthTask {
    /// Input `a+b=`, label `s=a+b` with `s = a + b`, `a, b < 50`.
    ChainedAddition,
    /// Input `w>`, label `w` for a random digit string `w`.
    Copy,
}

impl std::str::FromStr for SynthTask {
    type Err = XtfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chained-addition" | "addition" => Ok(SynthTask::ChainedAddition),
            "copy" => Ok(SynthTask::Copy),
            other => Err(XtfError::Config(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub task: SynthTask,
    pub size: usize,
    pub noise_rate: f64,
    pub seed: u64,
    /// Draw distractors from the task alphabet instead of the disjoint set.
    pub hard: bool,
}

impl SynthConfig {
    pub fn new(task: SynthTask, size: usize, noise_rate: f64, seed: u64) -> Self {
        SynthConfig { task, size, noise_rate, seed, hard: false }
    }
}

fn clean_pair(task: SynthTask, rng: &mut ChaCha8Rng) -> (String, String) {
    match task {
        SynthTask::ChainedAddition => {
            let a = rng.gen_range(0..50u32);
            let b = rng.gen_range(0..50u32);
            (format!("{a}+{b}="), format!("{}={a}+{b}", a + b))
        }
        SynthTask::Copy => {
            let n = rng.gen_range(3..=6);
            let w: String = (0..n).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect();
            (format!("{w}>"), w)
        }
    }
}

/// Generates `size` records. Each label is emitted left to right; before each
/// emitted token, with probability `noise_rate` a distractor is emitted
/// instead and flagged, so the expected flagged fraction is `noise_rate`.
pub fn gen_synth(cfg: &SynthConfig) -> Result<Vec<DatasetRecord>> {
    if !(0.0..1.0).contains(&cfg.noise_rate) {
        return Err(XtfError::Config(format!(
            "noise_rate must be in [0, 1), got {}",
            cfg.noise_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let alphabet = if cfg.hard { HARD_DISTRACTORS } else { DISTRACTORS };
    let width = cfg.size.max(1).to_string().len();
    let mut out = Vec::with_capacity(cfg.size);
    for i in 0..cfg.size {
        let (input, clean) = clean_pair(cfg.task, &mut rng);
        let mut label = String::with_capacity(clean.len() * 2);
        let mut flags = Vec::with_capacity(clean.len() * 2);
        let mut chars = clean.chars().peekable();
        while chars.peek().is_some() {
            if rng.gen_bool(cfg.noise_rate) {
                label.push(*alphabet.choose(&mut rng).expect("non-empty"));
                flags.push(true);
            } else {
                label.push(chars.next().expect("peeked"));
                flags.push(false);
            }
        }
        let mut rec = DatasetRecord::text(format!("s{i:0width$}"), input, label);
        rec.noise = Some(flags);
        out.push(rec);
    }
    Ok(out)
}
