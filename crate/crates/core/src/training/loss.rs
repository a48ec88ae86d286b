use crate::data::TokenizedExample;
use crate::error::{Result, XtfError};
use crate::numerics::Tensor;
use crate::tiny_lm::{loss_and_grad, ModelParams};

/// Per-row targets for teacher-forced training on `I + O`: row `i` predicts
/// token `i + 1`. Input positions never carry a target; a label token carries
/// one unless `noise` flags it.
pub fn loss_targets(ex: &TokenizedExample, noise: Option<&[bool]>) -> Result<Vec<Option<usize>>> {
    if let Some(n) = noise {
        if n.len() != ex.label_len() {
            return Err(XtfError::Contract(format!(
                "example {}: mask of {} for a label of {}",
                ex.id,
                n.len(),
                ex.label_len()
            )));
        }
    }
    if ex.input_ids.is_empty() {
        return Err(XtfError::Input(format!("example {}: empty input", ex.id)));
    }
    let li = ex.input_len();
    let seq = ex.full_sequence();
    Ok((0..seq.len())
        .map(|i| {
            let k = (i + 1).checked_sub(li)?;
            if k >= ex.label_len() || noise.is_some_and(|n| n[k]) {
                None
            } else {
                Some(seq[i + 1])
            }
        })
        .collect())
}

/// Include flag per sequence position: false for every input position and
/// for noisy label positions.
pub fn include_flags(ex: &TokenizedExample, noise: Option<&[bool]>) -> Result<Vec<bool>> {
    let t = loss_targets(ex, noise)?;
    let mut flags = vec![false; ex.seq_len()];
    for (i, target) in t.iter().enumerate() {
        if target.is_some() {
            flags[i + 1] = true;
        }
    }
    Ok(flags)
}

/// Sum of `-log p(O_k | I + O_<k)` over kept label tokens and its gradient.
/// A fully masked label gives loss 0 and all-zero gradients.
pub fn masked_loss(params: &ModelParams, ex: &TokenizedExample, noise: &[bool]) -> Result<(f64, Vec<Tensor>)> {
    let targets = loss_targets(ex, Some(noise))?;
    let (loss, grads, _) = loss_and_grad(params, &ex.full_sequence(), &targets)?;
    Ok((loss, grads))
}
