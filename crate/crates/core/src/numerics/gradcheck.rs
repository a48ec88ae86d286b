use super::tensor::Tensor;
use crate::error::{Result, XtfError};

/// Relative error used by all gradient checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compares `analytic` gradients against central differences of `loss_fn`
/// around `params` and returns the maximum relative error over every coordinate.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[Tensor],
    analytic: &[Tensor],
    step: f64,
) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> f64,
{
    finite_diff_check_sampled(&mut loss_fn, params, analytic, step, usize::MAX)
}

/// Like [`finite_diff_check`] but probes at most `max_per_tensor` evenly spaced
/// coordinates of each tensor.
pub fn finite_diff_check_sampled<F>(
    mut loss_fn: F,
    params: &[Tensor],
    analytic: &[Tensor],
    step: f64,
    max_per_tensor: usize,
) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> f64,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(XtfError::Precondition(format!("step must be > 0, got {step}")));
    }
    if params.len() != analytic.len() {
        return Err(XtfError::Dimension(format!(
            "{} params vs {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for (ti, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[ti].shape() {
            return Err(XtfError::Dimension(format!("gradient {ti} shape mismatch")));
        }
        let n = grad.len();
        let stride = if n <= max_per_tensor { 1 } else { n.div_ceil(max_per_tensor) };
        for j in (0..n).step_by(stride) {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + step;
            let up = loss_fn(&work);
            work[ti].data_mut()[j] = orig - step;
            let down = loss_fn(&work);
            work[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    Ok(worst)
}
