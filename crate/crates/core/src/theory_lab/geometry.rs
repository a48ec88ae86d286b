use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Result, XtfError};

/// A factorized SPD matrix for repeated `M⁻¹`-inner products.
#[derive(Debug, Clone)]
pub struct Spd {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Spd {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(XtfError::Geometry(format!(
                "preconditioner is {}x{}, not square",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * (1.0 + matrix.amax()) {
            return Err(XtfError::Geometry(format!("preconditioner not symmetric (max asymmetry {asym:e})")));
        }
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| XtfError::Geometry("preconditioner is not positive definite".into()))?;
        Ok(Spd { matrix, chol })
    }

    pub fn identity(d: usize) -> Self {
        Spd::new(DMatrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `M⁻¹ v` by triangular solves.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// `uᵀ M⁻¹ v`
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&self.solve(v))
    }

    /// `‖v‖_{M⁻¹}`
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues.max()
    }
}

/// Weighted score population: `Σ wᵢ φᵢ φᵢᵀ + λ I`, symmetrized.
pub fn damped_fisher(phis: &[DVector<f64>], weights: &[f64], lambda: f64) -> Result<Spd> {
    if phis.is_empty() {
        return Err(XtfError::Input("fisher needs a non-empty population".into()));
    }
    if phis.len() != weights.len() {
        return Err(XtfError::Dimension(format!("{} vectors, {} weights", phis.len(), weights.len())));
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(XtfError::Config(format!("damping must be >= 0, got {lambda}")));
    }
    let d = phis[0].len();
    let mut f = DMatrix::<f64>::identity(d, d) * lambda;
    for (phi, &w) in phis.iter().zip(weights) {
        if phi.len() != d {
            return Err(XtfError::Dimension(format!("score of length {} in a {d}-dim population", phi.len())));
        }
        f.ger(w, phi, phi, 1.0);
    }
    let f = (&f + f.transpose()) * 0.5;
    Spd::new(f).map_err(|_| XtfError::Degenerate(format!("damped fisher with lambda {lambda} is singular")))
}

/// `g_coreᵀ M⁻¹ g`
pub fn alignment(g_core: &DVector<f64>, g: &DVector<f64>, m: &Spd) -> Result<f64> {
    if g_core.len() != m.dim() || g.len() != m.dim() {
        return Err(XtfError::Dimension(format!(
            "alignment of {} and {} under a {}-dim metric",
            g_core.len(),
            g.len(),
            m.dim()
        )));
    }
    Ok(m.inner(g_core, g))
}
