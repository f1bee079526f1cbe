//! Learning ergodic SDE models from path data.
//!
//! This crate simulates additive-noise Itô diffusions, learns their drift
//! from finite-difference labels with two nonparametric estimators, learns
//! their noise covariance from regression residuals, and measures how the
//! invariant (one-point) and lagged (two-point) statistics of the learned
//! model track those of the truth as estimation error shrinks.
//!
//! Module map:
//!
//! - [`sde`] — Euler–Maruyama simulation, finite-difference labels,
//!   subsampling, benchmark model catalog;
//! - [`kernel`] — the kernel catalog (constant, degree-1 polynomial, RBF)
//!   with gradient envelopes;
//! - [`spectral`] — truncated-eigenbasis kernel regression with Nyström
//!   out-of-sample extension and Lipschitz audits;
//! - [`rff`] — ReLU random-feature regression with clipping, support
//!   truncation, and weight-norm concentration reports;
//! - [`diffusion`] — residual-covariance estimation of `σσᵀ`, the spectral
//!   error metric, and factorization into a simulatable noise matrix;
//! - [`stats`] — ergodic averages, two-point correlations, and
//!   perturbation-sweep scaling harnesses;
//! - [`io`] — deterministic CSV persistence for paths, training sets, and
//!   reports;
//! - [`rng`] — seeded, stream-indexed randomness shared by everything
//!   above.
//!
//! Every random draw in the crate descends from an explicit `u64` seed
//! through counter-mode streams, so all simulations, fits, and sweeps are
//! bitwise reproducible.

pub mod diffusion;
pub mod error;
pub mod io;
pub mod kernel;
pub mod rff;
pub mod rng;
pub mod sde;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use kernel::Kernel;
pub use sde::{
    em_step, finite_difference_labels, make_benchmark_model, ou_model, simulate, subsample,
    EmConfig, SdeModel, TrainingSet, Trajectory,
};
pub use spectral::{fit_spectral, SpectralEstimator};
pub use rff::{fit_rff, sample_features, ExtensionMode, ReluFeatureMap, RffEstimator};
pub use diffusion::{
    estimate_diffusion, factor_sigma, spectral_error, DiffusionEstimate, SigmaFactor,
};
pub use stats::{
    ergodic_average, one_point_error_scaling, two_point_correlation, two_point_error_scaling,
    ErgodicAverage, Observable, ScalingReport, TwoPointReport,
};

/// Common interface of the fitted drift estimators, so simulation and
/// diffusion estimation can consume either interchangeably.
pub trait DriftEstimator: Send + Sync {
    /// Input/output dimension `d`.
    fn dim(&self) -> usize;

    /// Writes the estimated drift at `x` into `out` (both length `d`).
    fn predict_into(&self, x: &[f64], out: &mut [f64]);

    /// Allocating convenience wrapper around [`Self::predict_into`].
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.predict_into(x, &mut out);
        out
    }
}

impl DriftEstimator for SpectralEstimator {
    fn dim(&self) -> usize {
        SpectralEstimator::dim(self)
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        SpectralEstimator::predict_into(self, x, out)
    }
}

impl DriftEstimator for RffEstimator {
    fn dim(&self) -> usize {
        RffEstimator::dim(self)
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        RffEstimator::predict_into(self, x, out)
    }
}

/// Assembles a simulatable model whose drift is a fitted estimator and
/// whose noise matrix is a factored diffusion estimate — the learned
/// counterpart of the data-generating model.
pub fn learned_model(
    name: impl Into<String>,
    estimator: std::sync::Arc<dyn DriftEstimator>,
    factor: &SigmaFactor,
) -> Result<SdeModel> {
    if estimator.dim() != factor.dim() {
        return Err(Error::DimensionMismatch {
            context: "learned model noise factor",
            expected: estimator.dim(),
            actual: factor.dim(),
        });
    }
    let dim = estimator.dim();
    SdeModel::new(
        name,
        dim,
        factor.noise_dim(),
        factor.sigma_eps().to_vec(),
        move |x: &[f64], out: &mut [f64]| estimator.predict_into(x, out),
    )
}
