//! Tokenizer, dataset records and the synthetic corpus generator.

pub mod dataset;
pub mod synth;
pub mod tokenizer;

pub use dataset::{
    detokenize, load_records, save_records, split, tokenize, tokenize_all, tokenize_with_vocab,
    DatasetRecord, SplitSpec, Splits, TokenizedExample,
};
pub use synth::{gen_synth, SynthConfig, SynthTask};
