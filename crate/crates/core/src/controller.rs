//! Quadratic Lyapunov function and the Lyapunov tracking law
//! U = −Gᵀ(X, θ) P (X − X̃).

use nalgebra::{Matrix5, Vector5};

use crate::elements::{gve_matrix, Constants, FullState, SlowElements, ThrustAccel};
use crate::{Error, Result};

/// Symmetric positive-definite 5×5 weight matrix P.
///
/// The Cholesky factor P = LLᵀ and L⁻¹ are cached at construction; the
/// admissibility solvers work in the coordinates z = Lᵀ(X − X̃) in which
/// sublevel sets of V are balls.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    p: Matrix5<f64>,
    chol: Matrix5<f64>,
    chol_inv: Matrix5<f64>,
}

impl WeightMatrix {
    pub fn new(p: Matrix5<f64>) -> Result<Self> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidWeightMatrix("non-finite entry".into()));
        }
        let scale = p.norm();
        if scale == 0.0 {
            return Err(Error::InvalidWeightMatrix("matrix is zero".into()));
        }
        let asym = (p - p.transpose()).norm();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidWeightMatrix(format!(
                "not symmetric (‖P − Pᵀ‖ = {asym:e})"
            )));
        }
        let eig = p.symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        if min_eig <= 0.0 {
            return Err(Error::InvalidWeightMatrix(format!(
                "not positive definite (smallest eigenvalue {min_eig:e})"
            )));
        }
        let chol = p
            .cholesky()
            .ok_or_else(|| Error::InvalidWeightMatrix("Cholesky factorisation failed".into()))?
            .l();
        let chol_inv = chol
            .try_inverse()
            .ok_or_else(|| Error::InvalidWeightMatrix("singular Cholesky factor".into()))?;
        Ok(Self { p, chol, chol_inv })
    }

    pub fn from_diagonal(d: [f64; 5]) -> Result<Self> {
        Self::new(Matrix5::from_diagonal(&Vector5::from(d)))
    }

    pub fn matrix(&self) -> &Matrix5<f64> {
        &self.p
    }

    /// Lower-triangular L with P = LLᵀ.
    pub fn cholesky(&self) -> &Matrix5<f64> {
        &self.chol
    }

    pub fn cholesky_inverse(&self) -> &Matrix5<f64> {
        &self.chol_inv
    }

    /// Diagonal entry (P⁻¹)ₘₘ = ‖L⁻¹ eₘ‖².
    pub fn inverse_diagonal(&self, m: usize) -> f64 {
        self.chol_inv.column(m).norm_squared()
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.p * k)
    }
}

/// V(X, X̃, P) = ½ (X − X̃)ᵀ P (X − X̃).
pub fn lyapunov_value(x: &SlowElements, reference: &SlowElements, p: &WeightMatrix) -> f64 {
    let d = x.to_vector() - reference.to_vector();
    // Lᵀd keeps the value non-negative in floating point
    0.5 * (p.cholesky().transpose() * d).norm_squared()
}

/// Tracking law U = −Gᵀ(X, θ) P (X − X̃). No saturation is applied.
pub fn control(
    x: &FullState,
    reference: &SlowElements,
    p: &WeightMatrix,
    c: &Constants,
) -> Result<ThrustAccel> {
    let g = gve_matrix(x, c)?;
    let d = x.elements.to_vector() - reference.to_vector();
    let u = -(g.transpose() * (p.matrix() * d));
    Ok(ThrustAccel::from_vector(&u))
}
