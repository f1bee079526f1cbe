//! Built-in Mercer kernels for the spectral regression estimator.
//!
//! Each kernel provides its pointwise evaluation `K(x, y)`, the diagonal
//! `K(x, x)`, and — where a closed form exists — the gradient envelope
//!
//! ```text
//! L(x) = sup_z |∇_z K(z, x)|,
//! ```
//!
//! which feeds the Lipschitz bound of fitted estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel catalog. Symmetric and positive semidefinite by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Kernel {
    /// `K(x, y) = value` — rank-one kernel spanning the constants.
    Constant { value: f64 },
    /// Degree-1 polynomial `K(x, y) = ⟨x, y⟩ + offset` (affine functions).
    Poly1 { offset: f64 },
    /// Gaussian radial kernel `K(x, y) = exp(−|x−y|² / (2·bandwidth²))`.
    Rbf { bandwidth: f64 },
}

impl Kernel {
    /// Unit constant kernel.
    pub fn constant() -> Self {
        Kernel::Constant { value: 1.0 }
    }

    /// Degree-1 polynomial kernel with the conventional unit offset.
    pub fn poly1() -> Self {
        Kernel::Poly1 { offset: 1.0 }
    }

    pub fn rbf(bandwidth: f64) -> Self {
        Kernel::Rbf { bandwidth }
    }

    /// Validates kernel parameters (finite, positive where required).
    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Constant { value } => {
                if !(value.is_finite() && value > 0.0) {
                    return Err(Error::Configuration(format!(
                        "constant kernel needs a positive value, got {value}"
                    )));
                }
            }
            Kernel::Poly1 { offset } => {
                if !(offset.is_finite() && offset >= 0.0) {
                    return Err(Error::Configuration(format!(
                        "poly1 kernel needs a nonnegative offset, got {offset}"
                    )));
                }
            }
            Kernel::Rbf { bandwidth } => {
                if !(bandwidth.is_finite() && bandwidth > 0.0) {
                    return Err(Error::Configuration(format!(
                        "rbf kernel needs a positive bandwidth, got {bandwidth}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Evaluates `K(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match *self {
            Kernel::Constant { value } => value,
            Kernel::Poly1 { offset } => dot(x, y) + offset,
            Kernel::Rbf { bandwidth } => {
                let mut d2 = 0.0;
                for (a, b) in x.iter().zip(y) {
                    let diff = a - b;
                    d2 += diff * diff;
                }
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }

    /// Evaluates the diagonal `K(x, x)`.
    pub fn diag(&self, x: &[f64]) -> f64 {
        match *self {
            Kernel::Constant { value } => value,
            Kernel::Poly1 { offset } => dot(x, x) + offset,
            Kernel::Rbf { .. } => 1.0,
        }
    }

    /// Closed-form gradient envelope `L(x) = sup_z |∇_z K(z, x)|`, or `None`
    /// when no closed form is available.
    ///
    /// * constant: the kernel section is flat, `L ≡ 0`;
    /// * poly1: `∇_z(⟨z, x⟩ + c) = x`, so `L(x) = |x|`;
    /// * rbf: `|∇_z K| = (r/γ²)·e^{−r²/(2γ²)}` at distance `r`, maximized at
    ///   `r = γ`, giving the constant `e^{−1/2}/γ`.
    pub fn grad_sup(&self, x: &[f64]) -> Option<f64> {
        match *self {
            Kernel::Constant { .. } => Some(0.0),
            Kernel::Poly1 { .. } => Some(dot(x, x).sqrt()),
            Kernel::Rbf { bandwidth } => Some((-0.5f64).exp() / bandwidth),
        }
    }

    /// Short display name for reports and persisted documents.
    pub fn label(&self) -> &'static str {
        match self {
            Kernel::Constant { .. } => "constant",
            Kernel::Poly1 { .. } => "poly1",
            Kernel::Rbf { .. } => "rbf",
        }
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
