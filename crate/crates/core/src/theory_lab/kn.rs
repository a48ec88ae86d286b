use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::geometry::damped_fisher;
use crate::error::{Result, XtfError};
use crate::numerics::softmax_slice;

/// Linear-softmax toy: logits `z(c) = X(c) θ` over `K` classes.
#[derive(Debug, Clone)]
pub struct ToyContext {
    /// K × d
    pub features: DMatrix<f64>,
    pub token: usize,
    pub weight: f64,
}

impl ToyContext {
    pub fn probs(&self, theta: &DVector<f64>) -> Vec<f64> {
        let z = &self.features * theta;
        softmax_slice(z.as_slice())
    }

    /// `∇_θ log p(t | c) = X(c)ᵀ(e_t − p)`
    pub fn score(&self, theta: &DVector<f64>) -> (DVector<f64>, f64) {
        let p = self.probs(theta);
        let pt = p[self.token];
        let mut r = DVector::from_iterator(p.len(), p.iter().map(|&x| -x));
        r[self.token] += 1.0;
        (self.features.transpose() * r, pt)
    }

    /// Largest row norm, i.e. the Lipschitz constant of each logit in θ.
    pub fn lipschitz(&self) -> f64 {
        self.features.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct KnScenario {
    pub theta: DVector<f64>,
    pub contexts: Vec<ToyContext>,
    pub delta: f64,
    pub lambda: f64,
    /// Indices of pairs whose scores average to the ideal direction.
    pub core: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnBoundsCheck {
    pub l_z: f64,
    pub mu: f64,
    pub kn_mass: f64,
    pub kn_count: usize,
    /// Largest `‖φ‖₂ − 2L_z(1−p)`; non-positive when the bound holds.
    pub score_gap: f64,
    pub fisher_score_gap: f64,
    pub contribution: f64,
    pub contribution_bound: f64,
    pub alignment_impact: f64,
    pub alignment_bound: f64,
    pub score_bound_ok: bool,
    pub contribution_bound_ok: bool,
    pub alignment_impact_ok: bool,
    /// Set when no pair meets the confidence floor; the set bounds are then vacuous.
    pub note: Option<String>,
}

pub fn kn_bounds_check(s: &KnScenario) -> Result<KnBoundsCheck> {
    if !(s.delta > 0.0 && s.delta < 1.0) {
        return Err(XtfError::Config(format!("delta must be in (0, 1), got {}", s.delta)));
    }
    if s.contexts.is_empty() {
        return Err(XtfError::Input("kn scenario has no contexts".into()));
    }
    let total: f64 = s.contexts.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 || s.contexts.iter().any(|c| !(c.weight > 0.0)) {
        return Err(XtfError::Input("context weights must be positive and sum to 1".into()));
    }
    let d = s.theta.len();
    let scored: Vec<(DVector<f64>, f64)> = s.contexts.iter().map(|c| c.score(&s.theta)).collect();
    let l_z = s.contexts.iter().map(|c| c.lipschitz()).fold(0.0, f64::max);
    let phis: Vec<DVector<f64>> = scored.iter().map(|(p, _)| p.clone()).collect();
    let w: Vec<f64> = s.contexts.iter().map(|c| c.weight).collect();
    let f = damped_fisher(&phis, &w, s.lambda)?;
    let mu = f.min_eigenvalue();
    let tol = 1e-12;

    let mut score_gap = f64::NEG_INFINITY;
    let mut fisher_score_gap = f64::NEG_INFINITY;
    for (phi, p) in &scored {
        score_gap = score_gap.max(phi.norm() - 2.0 * l_z * (1.0 - p));
        fisher_score_gap = fisher_score_gap.max(f.norm(phi) - 2.0 * l_z / mu.sqrt() * (1.0 - p));
    }

    let mut kn_sum = DVector::zeros(d);
    let mut kn_mass = 0.0;
    let mut kn_count = 0;
    for ((phi, p), c) in scored.iter().zip(&s.contexts) {
        if *p >= 1.0 - s.delta {
            kn_sum.axpy(c.weight, phi, 1.0);
            kn_mass += c.weight;
            kn_count += 1;
        }
    }
    let scale = 2.0 * l_z / mu.sqrt();
    let contribution = f.norm(&kn_sum);
    let contribution_bound = scale * s.delta * kn_mass;

    let g_core = core_gradient(s, &phis)?;
    let mut g_train = DVector::zeros(d);
    for (phi, &wi) in phis.iter().zip(&w) {
        g_train.axpy(wi, phi, 1.0);
    }
    let g_kept = &g_train - &kn_sum;
    let alignment_impact = (f.inner(&g_core, &g_train) - f.inner(&g_core, &g_kept)).abs();
    let alignment_bound = contribution_bound * f.norm(&g_core);

    let rel = |a: f64, b: f64| a <= b + tol * (1.0 + b.abs());
    Ok(KnBoundsCheck {
        l_z,
        mu,
        kn_mass,
        kn_count,
        score_gap,
        fisher_score_gap,
        contribution,
        contribution_bound,
        alignment_impact,
        alignment_bound,
        score_bound_ok: score_gap <= tol * (1.0 + l_z) && fisher_score_gap <= tol * (1.0 + scale),
        contribution_bound_ok: rel(contribution, contribution_bound),
        alignment_impact_ok: rel(alignment_impact, alignment_bound),
        note: (kn_count == 0).then(|| "no pair meets the confidence floor; set bounds are vacuous".to_string()),
    })
}

fn core_gradient(s: &KnScenario, phis: &[DVector<f64>]) -> Result<DVector<f64>> {
    if s.core.is_empty() {
        return Err(XtfError::Input("kn scenario needs a non-empty core subset".into()));
    }
    let mut g = DVector::zeros(s.theta.len());
    let mut m = 0.0;
    for &i in &s.core {
        let c = s.contexts.get(i).ok_or_else(|| XtfError::Input(format!("core index {i} out of range")))?;
        g.axpy(c.weight, &phis[i], 1.0);
        m += c.weight;
    }
    Ok(g / m)
}

fn random_features(rng: &mut ChaCha8Rng, k: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Raises logit `t` by `kappa` without touching the others: `X_t += κθ/‖θ‖²`.
fn boost(x: &mut DMatrix<f64>, t: usize, theta: &DVector<f64>, kappa: f64) {
    let add = theta * (kappa / theta.norm_squared());
    for j in 0..x.ncols() {
        x[(t, j)] += add[j];
    }
}

/// One random `(X, θ, t)` draw with a random confidence boost.
pub fn random_pair(rng: &mut ChaCha8Rng, k: usize, d: usize) -> (ToyContext, DVector<f64>) {
    let theta = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x = random_features(rng, k, d);
    let t = rng.gen_range(0..k);
    let kappa = rng.gen_range(0.0..15.0);
    boost(&mut x, t, &theta, kappa);
    (ToyContext { features: x, token: t, weight: 1.0 }, theta)
}

/// Random scenario where a `kn_mass` share of the weight sits on pairs the
/// model predicts with probability at least `1 − δ`.
pub fn random_kn_scenario(seed: u64, k: usize, d: usize, n: usize, delta: f64, kn_mass: f64) -> Result<KnScenario> {
    if n < 2 || !(kn_mass > 0.0 && kn_mass < 1.0) {
        return Err(XtfError::Config("kn scenario needs n >= 2 and mass in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n_kn = ((n as f64 * kn_mass).round() as usize).clamp(1, n - 1);
    let mut contexts = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = random_features(&mut rng, k, d);
        let t = rng.gen_range(0..k);
        if i < n_kn {
            let mut kappa = 1.0;
            loop {
                let p = ToyContext { features: x.clone(), token: t, weight: 1.0 }.probs(&theta)[t];
                if p >= 1.0 - delta {
                    break;
                }
                boost(&mut x, t, &theta, kappa);
                kappa *= 1.5;
            }
        }
        let w = if i < n_kn { kn_mass / n_kn as f64 } else { (1.0 - kn_mass) / (n - n_kn) as f64 };
        contexts.push(ToyContext { features: x, token: t, weight: w });
    }
    let core: Vec<usize> = (n_kn..n).filter(|_| rng.gen_bool(0.5)).collect();
    let core = if core.is_empty() { vec![n - 1] } else { core };
    Ok(KnScenario { theta, contexts, delta, lambda: 1e-3, core })
}

/// The Euclidean score bound for one pair: `(‖φ‖₂, 2L_z(1−p))`.
pub fn score_bound(ctx: &ToyContext, theta: &DVector<f64>) -> (f64, f64) {
    let (phi, p) = ctx.score(theta);
    (phi.norm(), 2.0 * ctx.lipschitz() * (1.0 - p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, theta) = random_pair(&mut rng, 5, 4);
        let (phi, _) = c.score(&theta);
        for j in 0..4 {
            let h = 1e-6;
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (c.probs(&a)[c.token].ln() - c.probs(&b)[c.token].ln()) / (2.0 * h);
            assert!((fd - phi[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn euclidean_bound_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let (c, theta) = random_pair(&mut rng, 6, 5);
            let (n, b) = score_bound(&c, &theta);
            assert!(n <= b + 1e-12 * (1.0 + b));
        }
    }

    #[test]
    fn confident_limit_shrinks_both() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut c, theta) = random_pair(&mut rng, 4, 3);
        let mut last = (0.0, 0.0);
        for _ in 0..8 {
            boost(&mut c.features, c.token, &theta, 5.0);
            last = score_bound(&c, &theta);
            assert!(last.0 <= last.1 + 1e-12, "{last:?}");
        }
        assert!(last.0 < 1e-6 && last.1 < 1e-6, "{last:?}");
    }

    #[test]
    fn scenario_bounds_hold() {
        for (i, &delta) in [0.1, 0.05, 0.01].iter().enumerate() {
            let s = random_kn_scenario(i as u64, 5, 4, 40, delta, 0.3).unwrap();
            let r = kn_bounds_check(&s).unwrap();
            assert!((r.kn_mass - 0.3).abs() < 1e-12);
            assert!(r.score_bound_ok && r.contribution_bound_ok && r.alignment_impact_ok, "{r:?}");
            assert!(r.contribution < r.contribution_bound);
            assert!(r.note.is_none());
        }
    }

    #[test]
    fn empty_confident_set_is_noted() {
        let mut s = random_kn_scenario(9, 5, 4, 20, 0.1, 0.3).unwrap();
        s.delta = 1e-300;
        let r = kn_bounds_check(&s).unwrap();
        assert_eq!(r.kn_count, 0);
        assert!(r.note.is_some());
        assert!(r.contribution_bound_ok);
    }
}
