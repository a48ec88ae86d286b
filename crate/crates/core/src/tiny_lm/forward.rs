use super::params::{ModelParams, Slot};
use crate::error::{Result, XtfError};
use crate::numerics::{softmax_slice, NodeId, Tape, Tensor};

const LN_EPS: f64 = 1e-5;

/// Everything the scorers read from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// seq × vocab
    pub logits: Tensor,
    /// `[layer][head]`, each seq × seq, row q = query position.
    pub attention: Vec<Vec<Tensor>>,
    /// seq × d_model, token plus position embedding fed to the first block.
    pub input_embeddings: Tensor,
}

impl ForwardTrace {
    pub fn seq_len(&self) -> usize {
        self.logits.rows()
    }

    pub fn attention_weight(&self, layer: usize, head: usize, query: usize, key: usize) -> f64 {
        self.attention[layer][head].get2(query, key)
    }
}

/// A recorded forward pass that can be differentiated.
pub struct Graph {
    pub tape: Tape,
    pub params: Vec<NodeId>,
    pub logits: NodeId,
    pub attention: Vec<Vec<NodeId>>,
    pub input_embeddings: NodeId,
}

impl Graph {
    pub fn trace(&self) -> ForwardTrace {
        ForwardTrace {
            logits: self.tape.value(self.logits).clone(),
            attention: self
                .attention
                .iter()
                .map(|heads| heads.iter().map(|&h| self.tape.value(h).clone()).collect())
                .collect(),
            input_embeddings: self.tape.value(self.input_embeddings).clone(),
        }
    }
}

pub(crate) fn check_tokens(params: &ModelParams, tokens: &[usize]) -> Result<()> {
    let c = params.config();
    if tokens.is_empty() {
        return Err(XtfError::Input("empty token sequence".into()));
    }
    if tokens.len() > c.max_seq {
        return Err(XtfError::Input(format!(
            "sequence of {} tokens exceeds max_seq {}",
            tokens.len(),
            c.max_seq
        )));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= c.vocab_size) {
        return Err(XtfError::Input(format!(
            "token id {t} out of vocabulary {}",
            c.vocab_size
        )));
    }
    Ok(())
}

/// Records the pre-norm transformer over `tokens` on a fresh tape.
pub fn build_graph(params: &ModelParams, tokens: &[usize]) -> Result<Graph> {
    check_tokens(params, tokens)?;
    let c = params.config();
    let mut t = Tape::new();
    let ids: Vec<NodeId> = params.tensors().iter().map(|x| t.leaf(x.clone())).collect();
    let p = |s: Slot| ids[s.index(c)];

    let positions: Vec<usize> = (0..tokens.len()).collect();
    let tok = t.gather(p(Slot::TokenEmbedding), tokens)?;
    let pos = t.gather(p(Slot::PositionEmbedding), &positions)?;
    let input = t.add(tok, pos)?;

    let hd = c.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut x = input;
    let mut attention = Vec::with_capacity(c.n_layers);
    for l in 0..c.n_layers {
        let h = t.layer_norm(x, p(Slot::Ln1Gain(l)), p(Slot::Ln1Bias(l)), LN_EPS)?;
        let q = t.matmul(h, p(Slot::Wq(l)))?;
        let k = t.matmul(h, p(Slot::Wk(l)))?;
        let v = t.matmul(h, p(Slot::Wv(l)))?;
        let mut heads = Vec::with_capacity(c.n_heads);
        let mut outs = Vec::with_capacity(c.n_heads);
        for head in 0..c.n_heads {
            let qh = t.slice_cols(q, head * hd, hd)?;
            let kh = t.slice_cols(k, head * hd, hd)?;
            let vh = t.slice_cols(v, head * hd, hd)?;
            let scores = t.matmul_bt(qh, kh)?;
            let scores = t.scale(scores, scale);
            let a = t.causal_softmax(scores)?;
            heads.push(a);
            outs.push(t.matmul(a, vh)?);
        }
        attention.push(heads);
        let cat = if outs.len() == 1 { outs[0] } else { t.concat_cols(&outs)? };
        let o = t.matmul(cat, p(Slot::Wo(l)))?;
        x = t.add(x, o)?;

        let h2 = t.layer_norm(x, p(Slot::Ln2Gain(l)), p(Slot::Ln2Bias(l)), LN_EPS)?;
        let f = t.matmul(h2, p(Slot::FfIn(l)))?;
        let f = t.add_row(f, p(Slot::FfInBias(l)))?;
        let f = t.gelu(f);
        let f = t.matmul(f, p(Slot::FfOut(l)))?;
        let f = t.add_row(f, p(Slot::FfOutBias(l)))?;
        x = t.add(x, f)?;
    }
    let hf = t.layer_norm(x, p(Slot::FinalGain), p(Slot::FinalBias), LN_EPS)?;
    let head = if c.tied { p(Slot::TokenEmbedding) } else { p(Slot::LmHead) };
    let logits = t.matmul_bt(hf, head)?;

    Ok(Graph {
        tape: t,
        params: ids,
        logits,
        attention,
        input_embeddings: input,
    })
}

pub fn forward(params: &ModelParams, tokens: &[usize]) -> Result<ForwardTrace> {
    Ok(build_graph(params, tokens)?.trace())
}

/// Next-token distribution after `prefix`.
pub fn next_token_probs(params: &ModelParams, prefix: &[usize]) -> Result<Vec<f64>> {
    let g = build_graph(params, prefix)?;
    let logits = g.tape.value(g.logits);
    Ok(softmax_slice(logits.row(logits.rows() - 1)))
}

/// Context-free embedding: the raw token-embedding row.
pub fn embed(params: &ModelParams, token: usize) -> Result<Vec<f64>> {
    let table = params.get(Slot::TokenEmbedding);
    if token >= table.rows() {
        return Err(XtfError::Input(format!(
            "token id {token} out of vocabulary {}",
            table.rows()
        )));
    }
    Ok(table.row(token).to_vec())
}

/// Loss `Σ_i -log p(targets[i] | tokens[..=i])` over rows with a target, and
/// its gradient for every parameter tensor.
pub fn loss_and_grad(
    params: &ModelParams,
    tokens: &[usize],
    targets: &[Option<usize>],
) -> Result<(f64, Vec<Tensor>, Tensor)> {
    let mut g = build_graph(params, tokens)?;
    let loss = g.tape.masked_nll(g.logits, targets)?;
    let value = g.tape.value(loss).data()[0];
    let logits = g.tape.value(g.logits).clone();
    let mut grads = g.tape.backward(loss)?;
    let out = g.params.iter().map(|&id| grads.take(id)).collect();
    Ok((value, out, logits))
}

/// Loss only (no backward pass).
pub fn loss_value(params: &ModelParams, tokens: &[usize], targets: &[Option<usize>]) -> Result<f64> {
    let mut g = build_graph(params, tokens)?;
    let loss = g.tape.masked_nll(g.logits, targets)?;
    Ok(g.tape.value(loss).data()[0])
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding; ties go to the lowest id. Stops after emitting `stop_id`
/// (not included), after `max_new` tokens, or when the context is full.
pub fn greedy_generate(
    params: &ModelParams,
    prefix: &[usize],
    max_new: usize,
    stop_id: Option<usize>,
) -> Result<Vec<usize>> {
    check_tokens(params, prefix)?;
    let mut seq = prefix.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new && seq.len() < params.config().max_seq {
        let g = build_graph(params, &seq)?;
        let logits = g.tape.value(g.logits);
        let next = argmax_lowest(logits.row(logits.rows() - 1));
        if Some(next) == stop_id {
            break;
        }
        out.push(next);
        seq.push(next);
    }
    Ok(out)
}
