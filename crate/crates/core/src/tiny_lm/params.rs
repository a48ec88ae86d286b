use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Result, XtfError};
use crate::numerics::Tensor;

pub const INIT_STD: f64 = 0.02;
const PER_LAYER: usize = 12;

/// Role of a tensor inside [`ModelParams`], in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    TokenEmbedding,
    PositionEmbedding,
    Ln1Gain(usize),
    Ln1Bias(usize),
    Wq(usize),
    Wk(usize),
    Wv(usize),
    Wo(usize),
    Ln2Gain(usize),
    Ln2Bias(usize),
    FfIn(usize),
    FfInBias(usize),
    FfOut(usize),
    FfOutBias(usize),
    FinalGain,
    FinalBias,
    LmHead,
}

impl Slot {
    pub fn index(self, config: &ModelConfig) -> usize {
        let l = config.n_layers;
        let base = |layer: usize, k: usize| 2 + layer * PER_LAYER + k;
        match self {
            Slot::TokenEmbedding => 0,
            Slot::PositionEmbedding => 1,
            Slot::Ln1Gain(i) => base(i, 0),
            Slot::Ln1Bias(i) => base(i, 1),
            Slot::Wq(i) => base(i, 2),
            Slot::Wk(i) => base(i, 3),
            Slot::Wv(i) => base(i, 4),
            Slot::Wo(i) => base(i, 5),
            Slot::Ln2Gain(i) => base(i, 6),
            Slot::Ln2Bias(i) => base(i, 7),
            Slot::FfIn(i) => base(i, 8),
            Slot::FfInBias(i) => base(i, 9),
            Slot::FfOut(i) => base(i, 10),
            Slot::FfOutBias(i) => base(i, 11),
            Slot::FinalGain => 2 + l * PER_LAYER,
            Slot::FinalBias => 3 + l * PER_LAYER,
            Slot::LmHead => 4 + l * PER_LAYER,
        }
    }

    fn name(self) -> String {
        match self {
            Slot::TokenEmbedding => "tok_emb".into(),
            Slot::PositionEmbedding => "pos_emb".into(),
            Slot::Ln1Gain(i) => format!("layer{i}.ln1.gain"),
            Slot::Ln1Bias(i) => format!("layer{i}.ln1.bias"),
            Slot::Wq(i) => format!("layer{i}.attn.wq"),
            Slot::Wk(i) => format!("layer{i}.attn.wk"),
            Slot::Wv(i) => format!("layer{i}.attn.wv"),
            Slot::Wo(i) => format!("layer{i}.attn.wo"),
            Slot::Ln2Gain(i) => format!("layer{i}.ln2.gain"),
            Slot::Ln2Bias(i) => format!("layer{i}.ln2.bias"),
            Slot::FfIn(i) => format!("layer{i}.ff.w_in"),
            Slot::FfInBias(i) => format!("layer{i}.ff.b_in"),
            Slot::FfOut(i) => format!("layer{i}.ff.w_out"),
            Slot::FfOutBias(i) => format!("layer{i}.ff.b_out"),
            Slot::FinalGain => "ln_f.gain".into(),
            Slot::FinalBias => "ln_f.bias".into(),
            Slot::LmHead => "lm_head".into(),
        }
    }

    fn shape(self, c: &ModelConfig) -> Vec<usize> {
        let (d, f) = (c.d_model, c.d_ff);
        match self {
            Slot::TokenEmbedding | Slot::LmHead => vec![c.vocab_size, d],
            Slot::PositionEmbedding => vec![c.max_seq, d],
            Slot::Wq(_) | Slot::Wk(_) | Slot::Wv(_) | Slot::Wo(_) => vec![d, d],
            Slot::FfIn(_) => vec![d, f],
            Slot::FfInBias(_) => vec![f],
            Slot::FfOut(_) => vec![f, d],
            Slot::Ln1Gain(_)
            | Slot::Ln1Bias(_)
            | Slot::Ln2Gain(_)
            | Slot::Ln2Bias(_)
            | Slot::FfOutBias(_)
            | Slot::FinalGain
            | Slot::FinalBias => vec![d],
        }
    }

    fn init_kind(self) -> Init {
        match self {
            Slot::Ln1Gain(_) | Slot::Ln2Gain(_) | Slot::FinalGain => Init::One,
            Slot::Ln1Bias(_)
            | Slot::Ln2Bias(_)
            | Slot::FinalBias
            | Slot::FfInBias(_)
            | Slot::FfOutBias(_) => Init::Zero,
            _ => Init::Normal,
        }
    }
}

enum Init {
    Zero,
    One,
    Normal,
}

/// Canonical tensor layout for a config.
pub fn slots(config: &ModelConfig) -> Vec<Slot> {
    let mut s = vec![Slot::TokenEmbedding, Slot::PositionEmbedding];
    for i in 0..config.n_layers {
        s.extend([
            Slot::Ln1Gain(i),
            Slot::Ln1Bias(i),
            Slot::Wq(i),
            Slot::Wk(i),
            Slot::Wv(i),
            Slot::Wo(i),
            Slot::Ln2Gain(i),
            Slot::Ln2Bias(i),
            Slot::FfIn(i),
            Slot::FfInBias(i),
            Slot::FfOut(i),
            Slot::FfOutBias(i),
        ]);
    }
    s.extend([Slot::FinalGain, Slot::FinalBias]);
    if !config.tied {
        s.push(Slot::LmHead);
    }
    s
}

/// All trainable weights of the model, stored in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Deterministic initialization from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = slots(config)
            .into_iter()
            .map(|slot| {
                let shape = slot.shape(config);
                match slot.init_kind() {
                    Init::Zero => Tensor::zeros(&shape),
                    Init::One => Tensor::full(&shape, 1.0),
                    Init::Normal => {
                        let n = shape.iter().product();
                        let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                        Tensor::new(shape, data).expect("shape matches")
                    }
                }
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            tensors,
        })
    }

    pub fn from_parts(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = slots(&config);
        if layout.len() != tensors.len() {
            return Err(XtfError::Format(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (slot, t) in layout.iter().zip(&tensors) {
            if t.shape() != slot.shape(&config).as_slice() {
                return Err(XtfError::Format(format!(
                    "{}: shape {:?}, expected {:?}",
                    slot.name(),
                    t.shape(),
                    slot.shape(&config)
                )));
            }
            t.check_finite(&slot.name())?;
        }
        Ok(ModelParams { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> Vec<String> {
        Self::names_for(&self.config)
    }

    pub fn names_for(config: &ModelConfig) -> Vec<String> {
        slots(config).into_iter().map(Slot::name).collect()
    }

    pub fn get(&self, slot: Slot) -> &Tensor {
        &self.tensors[slot.index(&self.config)]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}
