use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenizer::{self, BOS, EOS, VOCAB_SIZE};
use crate::error::{Result, XtfError};
use crate::io;

/// One line of a dataset file. Exactly one of the text pair or the id pair is
/// present. `noise`, when present, flags label characters (text mode) or
/// label ids (id mode) that are known noise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_ids: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_ids: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Vec<bool>>,
}

impl DatasetRecord {
    pub fn text(id: impl Into<String>, input: impl Into<String>, output: impl Into<String>) -> Self {
        DatasetRecord {
            id: id.into(),
            input_text: Some(input.into()),
            output_text: Some(output.into()),
            input_ids: None,
            output_ids: None,
            noise: None,
        }
    }

    pub fn ids(id: impl Into<String>, input: Vec<usize>, output: Vec<usize>) -> Self {
        DatasetRecord {
            id: id.into(),
            input_text: None,
            output_text: None,
            input_ids: Some(input),
            output_ids: Some(output),
            noise: None,
        }
    }
}

/// A tokenized fine-tuning sample: input tokens, label tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedExample {
    pub id: String,
    pub input_ids: Vec<usize>,
    pub output_ids: Vec<usize>,
    /// Ground-truth noise flags aligned with `output_ids`.
    pub noise_truth: Option<Vec<bool>>,
}

impl TokenizedExample {
    pub fn new(id: impl Into<String>, input_ids: Vec<usize>, output_ids: Vec<usize>) -> Self {
        TokenizedExample {
            id: id.into(),
            input_ids,
            output_ids,
            noise_truth: None,
        }
    }

    /// Length of the input, `l_I`.
    pub fn input_len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn label_len(&self) -> usize {
        self.output_ids.len()
    }

    pub fn seq_len(&self) -> usize {
        self.input_ids.len() + self.output_ids.len()
    }

    /// Full text `I + O`.
    pub fn full_sequence(&self) -> Vec<usize> {
        let mut s = self.input_ids.clone();
        s.extend_from_slice(&self.output_ids);
        s
    }

    /// Label with ground-truth noise removed; the plain label without flags.
    pub fn clean_label(&self) -> Vec<usize> {
        match &self.noise_truth {
            Some(flags) => self
                .output_ids
                .iter()
                .zip(flags)
                .filter(|(_, &n)| !n)
                .map(|(&t, _)| t)
                .collect(),
            None => self.output_ids.clone(),
        }
    }
}

pub fn tokenize(record: &DatasetRecord) -> Result<TokenizedExample> {
    tokenize_with_vocab(record, VOCAB_SIZE)
}

/// Text mode: `BOS + input` and `label + EOS`. Id mode: ids as given.
pub fn tokenize_with_vocab(record: &DatasetRecord, vocab_size: usize) -> Result<TokenizedExample> {
    let id = &record.id;
    let (input_ids, output_ids, appended_eos) = match (
        &record.input_text,
        &record.output_text,
        &record.input_ids,
        &record.output_ids,
    ) {
        (Some(i), Some(o), None, None) => {
            if o.is_empty() {
                return Err(XtfError::Input(format!("record {id}: empty label")));
            }
            let mut input = vec![BOS];
            input.extend(tokenizer::encode(i, id)?);
            let mut output = tokenizer::encode(o, id)?;
            output.push(EOS);
            (input, output, true)
        }
        (None, None, Some(i), Some(o)) => {
            if o.is_empty() {
                return Err(XtfError::Input(format!("record {id}: empty label")));
            }
            if i.is_empty() {
                return Err(XtfError::Input(format!("record {id}: empty input")));
            }
            if let Some(t) = i.iter().chain(o).find(|&&t| t >= vocab_size) {
                return Err(XtfError::Input(format!(
                    "record {id}: token id {t} outside vocabulary {vocab_size}"
                )));
            }
            (i.clone(), o.clone(), false)
        }
        _ => {
            return Err(XtfError::Input(format!(
                "record {id}: needs exactly one of (input_text, output_text) or (input_ids, output_ids)"
            )))
        }
    };
    let noise_truth = match &record.noise {
        None => None,
        Some(flags) => {
            let label_len = output_ids.len() - usize::from(appended_eos);
            if flags.len() != label_len {
                return Err(XtfError::Input(format!(
                    "record {id}: {} noise flags for a label of {label_len}",
                    flags.len()
                )));
            }
            let mut f = flags.clone();
            if appended_eos {
                f.push(false);
            }
            Some(f)
        }
    };
    Ok(TokenizedExample {
        id: id.clone(),
        input_ids,
        output_ids,
        noise_truth,
    })
}

pub fn detokenize(example: &TokenizedExample) -> (String, String) {
    (
        tokenizer::decode(&example.input_ids),
        tokenizer::decode(&example.output_ids),
    )
}

pub fn records_to_jsonl(records: &[DatasetRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}

pub fn save_records(records: &[DatasetRecord], path: impl AsRef<Path>) -> Result<()> {
    io::write_atomic(path, records_to_jsonl(records).as_bytes())
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    io::read_jsonl(path)
}

/// Tokenizes every record; fails on the first bad one with its id.
pub fn tokenize_all(records: &[DatasetRecord], vocab_size: usize) -> Result<Vec<TokenizedExample>> {
    records.iter().map(|r| tokenize_with_vocab(r, vocab_size)).collect()
}

/// 64-bit FNV-1a, used for seed-stable split assignment.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// `hash(id) mod 100` buckets: `< train` → train, `< train + val` → val.
    Percent { train: u64, val: u64 },
    /// Records ordered by `hash(id)`; the first `train`, next `val`, next `test`.
    Counts { train: usize, val: usize, test: usize },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Percent { train: 80, val: 10 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

fn split_key(id: &str, seed: u64) -> u64 {
    let mut b = seed.to_le_bytes().to_vec();
    b.extend_from_slice(id.as_bytes());
    fnv1a(&b)
}

/// Deterministic train/val/test split keyed on record ids.
pub fn split<T: Clone>(items: &[T], id_of: impl Fn(&T) -> &str, spec: SplitSpec, seed: u64) -> Result<Splits<T>> {
    let mut out = Splits { train: vec![], val: vec![], test: vec![] };
    match spec {
        SplitSpec::Percent { train, val } => {
            if train + val > 100 {
                return Err(XtfError::Config("split percentages exceed 100".into()));
            }
            for it in items {
                let b = split_key(id_of(it), seed) % 100;
                if b < train {
                    out.train.push(it.clone());
                } else if b < train + val {
                    out.val.push(it.clone());
                } else {
                    out.test.push(it.clone());
                }
            }
        }
        SplitSpec::Counts { train, val, test } => {
            if train + val + test > items.len() {
                return Err(XtfError::Input(format!(
                    "split needs {} records, dataset has {}",
                    train + val + test,
                    items.len()
                )));
            }
            let mut order: Vec<usize> = (0..items.len()).collect();
            order.sort_by_key(|&i| (split_key(id_of(&items[i]), seed), i));
            for (rank, &i) in order.iter().enumerate() {
                let it = items[i].clone();
                if rank < train {
                    out.train.push(it);
                } else if rank < train + val {
                    out.val.push(it);
                } else if rank < train + val + test {
                    out.test.push(it);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let r = DatasetRecord::text("a", "12+7=", "19=12+7");
        let t = tokenize(&r).unwrap();
        assert_eq!(t.input_ids[0], BOS);
        assert_eq!(*t.output_ids.last().unwrap(), EOS);
        assert_eq!(detokenize(&t), ("12+7=".to_string(), "19=12+7".to_string()));
    }

    #[test]
    fn empty_label_rejected() {
        assert!(tokenize(&DatasetRecord::text("e", "x", "")).is_err());
        assert!(tokenize(&DatasetRecord::ids("e", vec![1], vec![])).is_err());
    }

    #[test]
    fn mixed_modes_rejected() {
        let mut r = DatasetRecord::text("m", "a", "b");
        r.input_ids = Some(vec![1]);
        assert!(tokenize(&r).is_err());
    }

    #[test]
    fn id_mode_checks_vocab() {
        let r = DatasetRecord::ids("v", vec![1, 2], vec![5, 99]);
        assert!(tokenize(&r).is_err());
        assert!(tokenize_with_vocab(&r, 100).is_ok());
    }

    #[test]
    fn noise_flags_align_and_clean_label() {
        let mut r = DatasetRecord::text("n", "1+1=", "2#=1+1");
        r.noise = Some(vec![false, true, false, false, false, false]);
        let t = tokenize(&r).unwrap();
        assert_eq!(t.noise_truth.as_ref().unwrap().len(), t.output_ids.len());
        assert_eq!(tokenizer::decode(&t.clean_label()), "2=1+1");
        r.noise = Some(vec![true]);
        assert!(tokenize(&r).is_err());
    }

    #[test]
    fn count_split_is_exact_and_stable() {
        let ids: Vec<String> = (0..50).map(|i| format!("r{i}")).collect();
        let s = split(&ids, |s| s, SplitSpec::Counts { train: 30, val: 10, test: 5 }, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (30, 10, 5));
        let again = split(&ids, |s| s, SplitSpec::Counts { train: 30, val: 10, test: 5 }, 3).unwrap();
        assert_eq!(s.train, again.train);
        let p = split(&ids, |s| s, SplitSpec::default(), 3).unwrap();
        assert_eq!(p.train.len() + p.val.len() + p.test.len(), 50);
    }
}
