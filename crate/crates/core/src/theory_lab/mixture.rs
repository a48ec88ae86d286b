use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::geometry::{alignment, damped_fisher, Spd};
use crate::error::{Result, XtfError};

/// Finite weighted population of score vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub phis: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl Population {
    pub fn new(phis: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let p = Population { phis, weights };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.phis.is_empty() || self.phis.len() != self.weights.len() {
            return Err(XtfError::Input(format!(
                "population with {} vectors and {} weights",
                self.phis.len(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(XtfError::Input("population weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(XtfError::Input(format!("population weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.phis[0].len()
    }

    pub fn vectors(&self) -> Vec<DVector<f64>> {
        self.phis.iter().map(|p| DVector::from_column_slice(p)).collect()
    }

    /// `Σ wᵢ φᵢ`
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (p, &w) in self.phis.iter().zip(&self.weights) {
            m.axpy(w, &DVector::from_column_slice(p), 1.0);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho_c: f64,
    pub rho_n: f64,
    pub core: Population,
    pub noise: Population,
    /// Seeds the weak-bias directions.
    pub seed: u64,
}

impl MixtureSpec {
    pub fn dim(&self) -> usize {
        self.core.dim()
    }

    pub fn a(&self) -> f64 {
        1.0 - self.eps
    }

    pub fn b(&self) -> f64 {
        self.eps
    }

    /// Kept mass of the filtered distribution, `a(1-α) + bβ`.
    pub fn z_fil(&self) -> f64 {
        self.a() * (1.0 - self.alpha) + self.b() * self.beta
    }

    pub fn skilled(&self) -> bool {
        self.alpha + self.beta < 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eps) {
            return Err(XtfError::Config(format!("eps must be in [0, 1), got {}", self.eps)));
        }
        for (n, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(XtfError::Config(format!("{n} must be in [0, 1], got {v}")));
            }
        }
        if self.rho_c < 0.0 || self.rho_n < 0.0 {
            return Err(XtfError::Config("bias magnitudes must be >= 0".into()));
        }
        self.core.validate()?;
        self.noise.validate()?;
        if self.core.dim() != self.noise.dim() {
            return Err(XtfError::Dimension("core and noise populations differ in dimension".into()));
        }
        Ok(())
    }

    /// `p_train = a·core + b·noise` as one population.
    pub fn train_population(&self) -> (Vec<DVector<f64>>, Vec<f64>) {
        let mut phis = self.core.vectors();
        phis.extend(self.noise.vectors());
        let mut w: Vec<f64> = self.core.weights.iter().map(|w| w * self.a()).collect();
        w.extend(self.noise.weights.iter().map(|w| w * self.b()));
        (phis, w)
    }

    /// `F_λ` built from the training mixture.
    pub fn fisher(&self, lambda: f64) -> Result<Spd> {
        let (phis, w) = self.train_population();
        damped_fisher(&phis, &w, lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureGradients {
    pub g_core: DVector<f64>,
    pub g_noise: DVector<f64>,
    pub g_train: DVector<f64>,
    pub g_fil: DVector<f64>,
    pub z_fil: f64,
}

fn bias_vector(rng: &mut ChaCha8Rng, d: usize, target: f64, m: &Spd) -> DVector<f64> {
    if target == 0.0 {
        return DVector::zeros(d);
    }
    let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = m.norm(&v);
    v * (target / n)
}

fn gradients(spec: &MixtureSpec, m: Option<&Spd>) -> Result<MixtureGradients> {
    spec.validate()?;
    let z = spec.z_fil();
    if z <= 0.0 {
        return Err(XtfError::Degenerate(format!("filter keeps no mass (Z_fil = {z})")));
    }
    let (a, b) = (spec.a(), spec.b());
    let g_core = spec.core.mean();
    let g_noise = spec.noise.mean();
    let g_train = &g_core * a + &g_noise * b;
    let (core_sel, noise_sel) = match m {
        None => (g_core.clone(), g_noise.clone()),
        Some(m) => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let scale = m.norm(&g_core);
            let d = spec.dim();
            let uc = bias_vector(&mut rng, d, spec.rho_c * scale, m);
            let un = bias_vector(&mut rng, d, spec.rho_n * scale, m);
            (&g_core + uc, &g_noise + un)
        }
    };
    let g_fil = (core_sel * (a * (1.0 - spec.alpha)) + noise_sel * (b * spec.beta)) / z;
    Ok(MixtureGradients { g_core, g_noise, g_train, g_fil, z_fil: z })
}

/// Core, noise, unfiltered and filtered mean scores under selection that is
/// independent of the token within each component.
pub fn mixture_gradients(spec: &MixtureSpec) -> Result<MixtureGradients> {
    gradients(spec, None)
}

/// Same, with the selected component means shifted by seeded random vectors
/// of `M⁻¹`-norm exactly `ρ_c‖g_core‖` and `ρ_n‖g_core‖`.
pub fn mixture_gradients_weak(spec: &MixtureSpec, m: &Spd) -> Result<MixtureGradients> {
    gradients(spec, Some(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainCheck {
    pub gain_formula: f64,
    pub gain_direct: f64,
}

/// Closed-form alignment gain next to the direct difference of alignments.
pub fn alignment_gain_exact(spec: &MixtureSpec, m: &Spd) -> Result<GainCheck> {
    let g = mixture_gradients(spec)?;
    let core_sq = alignment(&g.g_core, &g.g_core, m)?;
    let cross = alignment(&g.g_core, &g.g_noise, m)?;
    let (a, b) = (spec.a(), spec.b());
    let gain_formula = a * b * (1.0 - spec.alpha - spec.beta) / g.z_fil * (core_sq - cross);
    let gain_direct = alignment(&g.g_core, &g.g_fil, m)? - alignment(&g.g_core, &g.g_train, m)?;
    Ok(GainCheck { gain_formula, gain_direct })
}

/// `⟨g_core, g_noise⟩ / ‖g_core‖²` in the `M⁻¹` geometry.
pub fn coherence(g_core: &DVector<f64>, g_noise: &DVector<f64>, m: &Spd) -> Result<f64> {
    let core_sq = m.inner(g_core, g_core);
    if core_sq == 0.0 {
        return Err(XtfError::Degenerate("core gradient is zero".into()));
    }
    Ok(m.inner(g_core, g_noise) / core_sq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCheck {
    pub zeta: f64,
    pub bound: f64,
    pub gain_direct: f64,
    pub holds: bool,
}

pub fn alignment_gain_lower_bound(spec: &MixtureSpec, m: &Spd) -> Result<LowerBoundCheck> {
    if !spec.skilled() {
        return Err(XtfError::Precondition(format!(
            "lower bound needs alpha + beta < 1, got {}",
            spec.alpha + spec.beta
        )));
    }
    let g = mixture_gradients(spec)?;
    let zeta = coherence(&g.g_core, &g.g_noise, m)?;
    let core_sq = m.inner(&g.g_core, &g.g_core);
    let bound = spec.a() * spec.b() * (1.0 - spec.alpha - spec.beta) * (1.0 - zeta) / g.z_fil * core_sq;
    let gain_direct = alignment_gain_exact(spec, m)?.gain_direct;
    Ok(LowerBoundCheck { zeta, bound, gain_direct, holds: gain_direct >= bound - 1e-12 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakBiasCheck {
    pub lower_bound: f64,
    pub gain_direct: f64,
    pub positivity_condition: bool,
    pub holds: bool,
}

pub fn weak_bias_gain_bound(spec: &MixtureSpec, m: &Spd) -> Result<WeakBiasCheck> {
    let g = mixture_gradients_weak(spec, m)?;
    let zeta = coherence(&g.g_core, &g.g_noise, m)?;
    let core_sq = m.inner(&g.g_core, &g.g_core);
    let (a, b) = (spec.a(), spec.b());
    let signal = a * b * (1.0 - spec.alpha - spec.beta) * (1.0 - zeta);
    let bias = a * (1.0 - spec.alpha) * spec.rho_c + b * spec.beta * spec.rho_n;
    let lower_bound = (signal - bias) / g.z_fil * core_sq;
    let gain_direct = m.inner(&g.g_core, &g.g_fil) - m.inner(&g.g_core, &g.g_train);
    Ok(WeakBiasCheck {
        lower_bound,
        gain_direct,
        positivity_condition: signal > bias,
        holds: gain_direct >= lower_bound - 1e-9,
    })
}

fn random_population(rng: &mut ChaCha8Rng, d: usize, n: usize, shift: &DVector<f64>) -> Population {
    let phis = (0..n)
        .map(|_| (0..d).map(|i| rng.sample::<f64, _>(StandardNormal) + shift[i]).collect())
        .collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    Population { phis, weights: raw.iter().map(|w| w / total).collect() }
}

/// Seeded random mixture in `d` dimensions. Core and noise populations are
/// centered on independent random directions; rates are drawn from the
/// given ranges.
pub fn random_mixture(seed: u64, d: usize, eps: (f64, f64), alpha: (f64, f64), beta: (f64, f64)) -> MixtureSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let cc = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let nc = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = 3 * d;
    MixtureSpec {
        eps: pick(&mut rng, eps),
        alpha: pick(&mut rng, alpha),
        beta: pick(&mut rng, beta),
        rho_c: 0.0,
        rho_n: 0.0,
        core: random_population(&mut rng, d, n, &cc),
        noise: random_population(&mut rng, d, n, &nc),
        seed: seed ^ 0x9e37_79b9_7f4a_7c15,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> MixtureSpec {
        random_mixture(seed, 8, (0.05, 0.5), (0.0, 0.4), (0.0, 0.4))
    }

    #[test]
    fn perfect_selector_recovers_core() {
        let mut s = spec(1);
        s.alpha = 0.0;
        s.beta = 0.0;
        let g = mixture_gradients(&s).unwrap();
        assert_eq!(g.z_fil, s.a());
        assert!((&g.g_fil - &g.g_core).amax() < 1e-15);
    }

    #[test]
    fn no_noise_means_no_change() {
        let mut s = spec(2);
        s.eps = 0.0;
        let g = mixture_gradients(&s).unwrap();
        assert!((&g.g_train - &g.g_core).amax() < 1e-15);
        assert!((&g.g_fil - &g.g_core).amax() < 1e-15);
    }

    #[test]
    fn normalizer_arithmetic() {
        let mut s = spec(3);
        s.eps = 0.2;
        s.alpha = 0.1;
        s.beta = 0.2;
        assert!((s.z_fil() - 0.76).abs() < 1e-15);
    }

    #[test]
    fn degenerate_selector_rejected() {
        let mut s = spec(4);
        s.eps = 0.0;
        s.alpha = 1.0;
        assert!(matches!(mixture_gradients(&s), Err(XtfError::Degenerate(_))));
    }

    #[test]
    fn gain_formula_matches_difference() {
        for seed in 0..50 {
            let s = spec(seed);
            for m in [Spd::identity(8), s.fisher(1e-3).unwrap()] {
                let g = alignment_gain_exact(&s, &m).unwrap();
                assert!((g.gain_formula - g.gain_direct).abs() <= 1e-9 * (1.0 + g.gain_direct.abs()));
            }
        }
    }

    #[test]
    fn sign_law() {
        for seed in 0..50 {
            let s = random_mixture(seed, 6, (0.1, 0.5), (0.0, 0.7), (0.0, 0.7));
            let m = Spd::identity(6);
            let g = mixture_gradients(&s).unwrap();
            let diff = m.inner(&g.g_core, &g.g_core) - m.inner(&g.g_core, &g.g_noise);
            let want = ((1.0 - s.alpha - s.beta) * diff).signum();
            let gain = alignment_gain_exact(&s, &m).unwrap().gain_direct;
            assert_eq!(gain.signum(), want);
        }
    }

    #[test]
    fn edge_cases_have_no_gain() {
        let mut s = spec(5);
        s.eps = 0.0;
        assert!(alignment_gain_exact(&s, &Spd::identity(8)).unwrap().gain_direct.abs() <= 1e-12);
        let mut s = spec(6);
        s.beta = 1.0 - s.alpha;
        let g = alignment_gain_exact(&s, &Spd::identity(8)).unwrap();
        assert!(g.gain_direct.abs() <= 1e-12 && g.gain_formula.abs() <= 1e-12);
    }

    #[test]
    fn lower_bound_extremes() {
        let mut s = spec(7);
        s.noise = s.core.clone();
        let lb = alignment_gain_lower_bound(&s, &Spd::identity(8)).unwrap();
        assert!((lb.zeta - 1.0).abs() < 1e-12);
        assert!(lb.bound.abs() < 1e-12 && lb.gain_direct.abs() < 1e-12);
        // noise orthogonal to core
        let mut s = spec(8);
        let gc = s.core.mean();
        let gn = s.noise.mean();
        let shift = &gc * (gn.dot(&gc) / gc.dot(&gc));
        for p in &mut s.noise.phis {
            for (x, sh) in p.iter_mut().zip(shift.iter()) {
                *x -= sh;
            }
        }
        let lb = alignment_gain_lower_bound(&s, &Spd::identity(8)).unwrap();
        assert!(lb.zeta.abs() < 1e-12);
        assert!((lb.bound - lb.gain_direct).abs() < 1e-12);
        let mut s = spec(9);
        s.alpha = 0.6;
        s.beta = 0.5;
        assert!(matches!(alignment_gain_lower_bound(&s, &Spd::identity(8)), Err(XtfError::Precondition(_))));
    }

    #[test]
    fn weak_bias_reduces_to_strong() {
        let s = spec(10);
        let m = s.fisher(1e-3).unwrap();
        let w = weak_bias_gain_bound(&s, &m).unwrap();
        let lb = alignment_gain_lower_bound(&s, &m).unwrap();
        assert!((w.lower_bound - lb.bound).abs() < 1e-12);
        assert!(w.holds);
        let mut s = spec(11);
        s.rho_c = 5.0;
        s.rho_n = 5.0;
        let w = weak_bias_gain_bound(&s, &m).unwrap();
        assert!(!w.positivity_condition);
        assert!(w.lower_bound < 0.0 && w.holds);
    }

    #[test]
    fn bias_vectors_have_exact_norm() {
        let s = spec(12);
        let m = s.fisher(1e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = bias_vector(&mut rng, 8, 0.37, &m);
        assert!((m.norm(&v) - 0.37).abs() < 1e-12);
    }
}
