use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::geometry::Spd;
use super::mixture::{mixture_gradients, MixtureSpec};
use crate::error::{Result, XtfError};

/// `½(θ−θ*)ᵀH(θ−θ*)` with SPD `H`, started at `theta`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub h: Spd,
    pub theta: DVector<f64>,
    pub theta_star: DVector<f64>,
    /// Local radius within which steps must stay.
    pub radius: f64,
}

impl Quadratic {
    /// Places the minimizer so that the ideal descent direction at `theta` is
    /// exactly `g_core`: `θ* = θ + H⁻¹ g_core`.
    pub fn around(h: Spd, theta: DVector<f64>, g_core: &DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(XtfError::Config(format!("radius must be positive, got {radius}")));
        }
        if theta.len() != h.dim() || g_core.len() != h.dim() {
            return Err(XtfError::Dimension("quadratic dimension mismatch".into()));
        }
        let theta_star = &theta + h.solve(g_core);
        Ok(Quadratic { h, theta, theta_star, radius })
    }

    pub fn loss(&self, theta: &DVector<f64>) -> f64 {
        let d = theta - &self.theta_star;
        0.5 * d.dot(&(self.h.matrix() * &d))
    }

    pub fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.h.matrix() * (theta - &self.theta_star)
    }

    pub fn smoothness(&self) -> f64 {
        self.h.max_eigenvalue()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneStep {
    pub eta: f64,
    pub eta_max: f64,
    pub loss_start: f64,
    pub loss_fil: f64,
    pub loss_train: f64,
    /// Right-hand side of the filtered-minus-unfiltered inequality.
    pub bound_rhs: f64,
    pub alignment_gain: f64,
    /// Per-arm descent inequalities.
    pub descent_fil_ok: bool,
    pub descent_train_ok: bool,
}

impl OneStep {
    pub fn difference(&self) -> f64 {
        self.loss_fil - self.loss_train
    }
}

fn step_quantities(spec: &MixtureSpec, m: &Spd) -> Result<(DVector<f64>, DVector<f64>, f64, f64)> {
    let g = mixture_gradients(spec)?;
    let tf = m.solve(&g.g_fil);
    let tt = m.solve(&g.g_train);
    let a_fil = g.g_core.dot(&tf);
    let a_train = g.g_core.dot(&tt);
    Ok((tf, tt, a_fil, a_train))
}

/// Largest step for which the filtered arm provably does no worse, capped by
/// the radius condition. Zero when the alignment gain is not positive.
pub fn eta_max(q: &Quadratic, spec: &MixtureSpec, m: &Spd) -> Result<f64> {
    let (tf, tt, a_fil, a_train) = step_quantities(spec, m)?;
    let l = q.smoothness();
    let denom = l * (tf.norm_squared() + tt.norm_squared());
    let gain_cap = if denom > 0.0 { (2.0 * (a_fil - a_train) / denom).max(0.0) } else { f64::INFINITY };
    let big = tf.norm().max(tt.norm());
    let radius_cap = if big > 0.0 { q.radius / big } else { f64::INFINITY };
    Ok(gain_cap.min(radius_cap))
}

/// One preconditioned step `θ + η M⁻¹ g` per arm from the same start.
pub fn one_step_compare(q: &Quadratic, spec: &MixtureSpec, m: &Spd, eta: f64) -> Result<OneStep> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(XtfError::Config(format!("step size must be finite and >= 0, got {eta}")));
    }
    let (tf, tt, a_fil, a_train) = step_quantities(spec, m)?;
    let big = tf.norm().max(tt.norm());
    if eta * big > q.radius * (1.0 + 1e-12) {
        return Err(XtfError::Precondition(format!(
            "step {eta} times direction norm {big} leaves radius {}",
            q.radius
        )));
    }
    let l = q.smoothness();
    let loss_start = q.loss(&q.theta);
    let loss_fil = q.loss(&(&q.theta + &tf * eta));
    let loss_train = q.loss(&(&q.theta + &tt * eta));
    let gain = a_fil - a_train;
    let bound_rhs = -eta * gain + 0.5 * l * eta * eta * (tf.norm_squared() - tt.norm_squared());
    let slack = 1e-12 * (1.0 + loss_start.abs());
    let descent = |loss: f64, a: f64, t: &DVector<f64>| {
        loss <= loss_start - eta * a + 0.5 * l * eta * eta * t.norm_squared() + slack
    };
    Ok(OneStep {
        eta,
        eta_max: eta_max(q, spec, m)?,
        loss_start,
        loss_fil,
        loss_train,
        bound_rhs,
        alignment_gain: gain,
        descent_fil_ok: descent(loss_fil, a_fil, &tf),
        descent_train_ok: descent(loss_train, a_train, &tt),
    })
}

/// Random SPD `H = QΛQᵀ` with eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> Spd {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = a.qr().q();
    let eig = DVector::from_fn(d, |_, _| rng.gen_range(lo..hi));
    let h = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    Spd::new((&h + h.transpose()) * 0.5).expect("constructed SPD")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory_lab::mixture::random_mixture;
    use rand::SeedableRng;

    fn setup(seed: u64) -> (Quadratic, MixtureSpec, Spd) {
        let spec = random_mixture(seed, 6, (0.1, 0.4), (0.0, 0.3), (0.0, 0.3));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_spd(&mut rng, 6, 0.5, 4.0);
        let theta = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = mixture_gradients(&spec).unwrap();
        let q = Quadratic::around(h, theta, &g.g_core, 10.0).unwrap();
        (q, spec, Spd::identity(6))
    }

    #[test]
    fn ideal_gradient_is_minus_core() {
        let (q, spec, _) = setup(1);
        let g = mixture_gradients(&spec).unwrap();
        assert!((q.grad(&q.theta) + &g.g_core).amax() < 1e-12);
    }

    #[test]
    fn zero_step_changes_nothing() {
        let (q, spec, m) = setup(2);
        let s = one_step_compare(&q, &spec, &m, 0.0).unwrap();
        assert_eq!(s.loss_fil, s.loss_start);
        assert_eq!(s.loss_train, s.loss_start);
        assert_eq!(s.bound_rhs, 0.0);
    }

    #[test]
    fn no_noise_no_difference() {
        let (q, mut spec, m) = setup(3);
        spec.eps = 0.0;
        let s = one_step_compare(&q, &spec, &m, 0.05).unwrap();
        assert_eq!(s.difference(), 0.0);
    }

    #[test]
    fn descent_inequality_holds_per_arm() {
        for seed in 0..30 {
            let (q, spec, _) = setup(seed);
            let m = spec.fisher(1e-3).unwrap();
            let s = one_step_compare(&q, &spec, &m, 1e-3).unwrap();
            assert!(s.descent_fil_ok && s.descent_train_ok);
        }
    }

    #[test]
    fn half_eta_max_favors_filtering() {
        for seed in 0..30 {
            let (q, spec, m) = setup(seed);
            let em = eta_max(&q, &spec, &m).unwrap();
            let s = one_step_compare(&q, &spec, &m, em / 2.0).unwrap();
            if s.alignment_gain > 0.0 {
                assert!(s.loss_fil <= s.loss_train, "seed {seed}");
            }
        }
    }

    #[test]
    fn radius_enforced() {
        let (mut q, spec, m) = setup(4);
        q.radius = 1e-6;
        assert!(matches!(one_step_compare(&q, &spec, &m, 1.0), Err(XtfError::Precondition(_))));
    }
}
