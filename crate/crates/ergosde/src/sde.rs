//! Euler–Maruyama simulation of additive-noise SDEs and the finite-difference
//! training data derived from simulated paths.
//!
//! The continuous model is `dX = b(X) dt + σ dW` with a globally Lipschitz
//! drift `b: ℝ^d → ℝ^d` and a constant `d×m` noise matrix `σ`. The
//! Euler–Maruyama chain advances as
//!
//! ```text
//! X_{n+1} = X_n + δ·b(X_n) + √δ·σ·ξ_n,        ξ_n ~ N(0, I_m) i.i.d.
//! ```
//!
//! Finite differences of a simulated path give regression labels
//! `Y_n = (X_{n+1} − X_n)/δ = b(X_n) + δ^{-1/2}·σ·ξ_n`, i.e. noisy point
//! evaluations of the drift; [`finite_difference_labels`] and [`subsample`]
//! turn a trajectory into the training sets consumed by the estimator
//! modules.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, GaussianStream};

/// States whose Euclidean norm passes this limit abort the simulation: the
/// models of interest are dissipative, so escape to infinity means the step
/// size or drift is wrong, and silently continuing would poison every
/// downstream statistic.
pub const EXPLOSION_LIMIT: f64 = 1e6;

type DriftFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// An additive-noise SDE: drift function plus constant noise matrix.
///
/// Models are immutable and cheap to clone (the drift closure is shared), so
/// they can be distributed across worker threads freely.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    dim: usize,
    noise_dim: usize,
    /// Row-major `dim × noise_dim` noise matrix.
    sigma: Vec<f64>,
    drift: Arc<DriftFn>,
    /// Constants `(a, d)` for which `⟨b(x), x⟩ ≤ a − d·|x|²` is documented to
    /// hold; present only for the built-in benchmark models.
    dissipative: Option<(f64, f64)>,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("sigma", &self.sigma)
            .finish_non_exhaustive()
    }
}

impl SdeModel {
    /// Builds a model from a drift closure and a row-major `dim × noise_dim`
    /// noise matrix. The closure receives the state and writes `b(x)` into
    /// the output slice.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        noise_dim: usize,
        sigma: Vec<f64>,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("model dimension must be positive".into()));
        }
        if noise_dim == 0 || noise_dim > dim {
            return Err(Error::InvalidArgument(format!(
                "noise dimension must satisfy 1 <= m <= d, got m={noise_dim}, d={dim}"
            )));
        }
        if sigma.len() != dim * noise_dim {
            return Err(Error::DimensionMismatch {
                context: "noise matrix",
                expected: dim * noise_dim,
                actual: sigma.len(),
            });
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("noise matrix has non-finite entries".into()));
        }
        Ok(Self {
            name: name.into(),
            dim,
            noise_dim,
            sigma,
            drift: Arc::new(drift),
            dissipative: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// State dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Noise dimension `m`.
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Row-major `dim × noise_dim` noise matrix.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// `σσᵀ` as a row-major `dim × dim` matrix.
    pub fn sigma_squared(&self) -> Vec<f64> {
        let (d, m) = (self.dim, self.noise_dim);
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..m {
                    s += self.sigma[i * m + k] * self.sigma[j * m + k];
                }
                out[i * d + j] = s;
            }
        }
        out
    }

    /// Documented dissipativity constants `(a, d)`, if any.
    pub fn dissipative_constants(&self) -> Option<(f64, f64)> {
        self.dissipative
    }

    /// Evaluates the drift into a caller-provided buffer.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        (self.drift)(x, out);
    }

    /// Evaluates the drift, allocating the result.
    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, &mut out);
        out
    }

    /// Derived model with drift `b(x) + shift`; noise matrix unchanged.
    /// Used by perturbation families of the statistics harnesses.
    pub fn with_drift_shift(&self, shift: &[f64]) -> Result<SdeModel> {
        if shift.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "drift shift",
                expected: self.dim,
                actual: shift.len(),
            });
        }
        let inner = Arc::clone(&self.drift);
        let shift = shift.to_vec();
        Ok(SdeModel {
            name: format!("{}+shift", self.name),
            dim: self.dim,
            noise_dim: self.noise_dim,
            sigma: self.sigma.clone(),
            drift: Arc::new(move |x: &[f64], out: &mut [f64]| {
                inner(x, out);
                for (o, s) in out.iter_mut().zip(&shift) {
                    *o += s;
                }
            }),
            dissipative: None,
        })
    }

    /// Derived model with drift `factor · b(x)`; noise matrix unchanged.
    pub fn with_drift_scale(&self, factor: f64) -> SdeModel {
        let inner = Arc::clone(&self.drift);
        SdeModel {
            name: format!("{}*scale", self.name),
            dim: self.dim,
            noise_dim: self.noise_dim,
            sigma: self.sigma.clone(),
            drift: Arc::new(move |x: &[f64], out: &mut [f64]| {
                inner(x, out);
                for o in out.iter_mut() {
                    *o *= factor;
                }
            }),
            dissipative: None,
        }
    }

    /// Derived model with the same drift but a replacement noise matrix
    /// (row-major `dim × noise_dim`). Used to pair a learned drift with a
    /// factored diffusion estimate.
    pub fn with_sigma(&self, noise_dim: usize, sigma: Vec<f64>) -> Result<SdeModel> {
        if noise_dim == 0 || noise_dim > self.dim {
            return Err(Error::InvalidArgument(format!(
                "noise dimension must satisfy 1 <= m <= d, got m={}, d={}",
                noise_dim, self.dim
            )));
        }
        if sigma.len() != self.dim * noise_dim {
            return Err(Error::DimensionMismatch {
                context: "noise matrix",
                expected: self.dim * noise_dim,
                actual: sigma.len(),
            });
        }
        Ok(SdeModel {
            name: self.name.clone(),
            dim: self.dim,
            noise_dim,
            sigma,
            drift: Arc::clone(&self.drift),
            dissipative: None,
        })
    }
}

/// Integration settings for one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// Time step `δ > 0`.
    pub delta: f64,
    /// Number of Euler–Maruyama steps; the path has `n_steps + 1` states.
    pub n_steps: usize,
    /// Initial steps discarded by statistics; `None` means the default of
    /// 10% of `n_steps`, which reaches near-stationarity for the
    /// geometrically ergodic benchmarks.
    pub burn_in: Option<usize>,
    /// Top-level RNG seed; all draws derive from it deterministically.
    pub seed: u64,
}

impl EmConfig {
    pub fn new(delta: f64, n_steps: usize, seed: u64) -> Self {
        Self { delta, n_steps, burn_in: None, seed }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = Some(burn_in);
        self
    }

    /// Burn-in actually applied (explicit value or the 10% default).
    pub fn effective_burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.n_steps / 10)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {}", self.delta)));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
        }
        if self.effective_burn_in() >= self.n_steps {
            return Err(Error::InvalidArgument(format!(
                "burn_in ({}) must be smaller than n_steps ({})",
                self.effective_burn_in(),
                self.n_steps
            )));
        }
        Ok(())
    }
}

/// A simulated path: `n_steps + 1` states of dimension `dim`, stored flat in
/// row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<f64>,
    dim: usize,
    delta: f64,
    seed: u64,
}

impl Trajectory {
    /// Wraps raw state storage; `states.len()` must be a positive multiple of
    /// `dim`.
    pub fn from_states(states: Vec<f64>, dim: usize, delta: f64, seed: u64) -> Result<Self> {
        if dim == 0 || states.is_empty() || states.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                context: "trajectory states",
                expected: dim.max(1),
                actual: states.len(),
            });
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("trajectory contains non-finite states".into()));
        }
        Ok(Self { states, dim, delta, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of stored states (`n_steps + 1`).
    pub fn n_states(&self) -> usize {
        self.states.len() / self.dim
    }

    /// The `i`-th state as a slice of length `dim`.
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.n_states() - 1)
    }

    pub fn states_flat(&self) -> &[f64] {
        &self.states
    }

    pub fn iter_states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }
}

/// Regression data: rows `(x_i, y_i)` with `x, y ∈ ℝ^d`, plus the step size
/// the labels were formed with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    points: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
    delta: f64,
}

impl TrainingSet {
    pub fn from_rows(points: Vec<f64>, labels: Vec<f64>, dim: usize, delta: f64) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                context: "training points",
                expected: dim.max(1),
                actual: points.len(),
            });
        }
        if labels.len() != points.len() {
            return Err(Error::DimensionMismatch {
                context: "training labels",
                expected: points.len(),
                actual: labels.len(),
            });
        }
        Ok(Self { points, labels, dim, delta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of samples `N`.
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> &[f64] {
        &self.labels[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn labels_flat(&self) -> &[f64] {
        &self.labels
    }

    /// Keeps only the first `n` samples. Convenience for callers that need a
    /// fixed sample budget after subsampling.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.points.truncate(n * self.dim);
            self.labels.truncate(n * self.dim);
        }
    }

    /// Largest point norm, used for truncation-radius defaults.
    pub fn max_point_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| norm(self.point(i)))
            .fold(0.0, f64::max)
    }
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One Euler–Maruyama update `x + δ·b(x) + √δ·σ·ξ`.
///
/// `xi` is a standard-normal draw of dimension `m`. Validates dimensions;
/// the internal simulation loop uses [`em_step_into`] to skip revalidation.
pub fn em_step(model: &SdeModel, x: &[f64], delta: f64, xi: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "em_step state",
            expected: model.dim(),
            actual: x.len(),
        });
    }
    if xi.len() != model.noise_dim() {
        return Err(Error::DimensionMismatch {
            context: "em_step noise",
            expected: model.noise_dim(),
            actual: xi.len(),
        });
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let mut drift = vec![0.0; model.dim()];
    let mut out = vec![0.0; model.dim()];
    em_step_into(model, x, delta, xi, &mut drift, &mut out);
    Ok(out)
}

/// Allocation-free Euler–Maruyama update for hot loops; `drift_buf` and
/// `out` must have length `d`, `xi` length `m`.
#[inline]
pub fn em_step_into(
    model: &SdeModel,
    x: &[f64],
    delta: f64,
    xi: &[f64],
    drift_buf: &mut [f64],
    out: &mut [f64],
) {
    model.drift_into(x, drift_buf);
    let sqrt_delta = delta.sqrt();
    let m = model.noise_dim();
    let sigma = model.sigma();
    for i in 0..model.dim() {
        let mut noise = 0.0;
        for j in 0..m {
            noise += sigma[i * m + j] * xi[j];
        }
        out[i] = x[i] + delta * drift_buf[i] + sqrt_delta * noise;
    }
}

/// Simulates `cfg.n_steps` Euler–Maruyama steps from `x0`.
///
/// Deterministic given `(model, x0, cfg)`: all Gaussian draws come from the
/// ChaCha stream `(cfg.seed, stream 0)` via Box–Muller (see [`crate::rng`]).
/// Aborts with [`Error::Divergence`] naming the offending step if a state
/// norm exceeds [`EXPLOSION_LIMIT`] or turns non-finite.
pub fn simulate(model: &SdeModel, x0: &[f64], cfg: &EmConfig) -> Result<Trajectory> {
    simulate_stream(model, x0, cfg, 0)
}

/// Like [`simulate`] but drawing from ChaCha stream `(cfg.seed, stream)`.
/// Distinct stream indices give independent paths under one seed, which is
/// how ensemble averaging derives its per-path randomness.
pub fn simulate_stream(
    model: &SdeModel,
    x0: &[f64],
    cfg: &EmConfig,
    stream: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    if x0.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: model.dim(),
            actual: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial state has non-finite entries".into()));
    }

    let d = model.dim();
    let mut gauss = GaussianStream::new(stream_rng(cfg.seed, stream));
    let mut states = Vec::with_capacity((cfg.n_steps + 1) * d);
    states.extend_from_slice(x0);

    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut drift_buf = vec![0.0; d];
    let mut xi = vec![0.0; model.noise_dim()];

    for step in 1..=cfg.n_steps {
        gauss.fill_gaussian(&mut xi);
        em_step_into(model, &x, cfg.delta, &xi, &mut drift_buf, &mut next);
        let norm = norm(&next);
        if !norm.is_finite() || norm > EXPLOSION_LIMIT {
            return Err(Error::Divergence { step, norm, limit: EXPLOSION_LIMIT });
        }
        states.extend_from_slice(&next);
        std::mem::swap(&mut x, &mut next);
    }

    Ok(Trajectory { states, dim: d, delta: cfg.delta, seed: cfg.seed })
}

/// Finite-difference labels of a trajectory: points are the first `n` states
/// and `labels[i] = (states[i+1] − states[i]) / δ`.
pub fn finite_difference_labels(traj: &Trajectory) -> Result<TrainingSet> {
    let n_states = traj.n_states();
    if n_states < 2 {
        return Err(Error::InvalidArgument(format!(
            "finite differences need at least 2 states, got {n_states}"
        )));
    }
    let d = traj.dim();
    let n = n_states - 1;
    let mut points = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n * d);
    let inv_delta = 1.0 / traj.delta();
    for i in 0..n {
        let x = traj.state(i);
        let x_next = traj.state(i + 1);
        points.extend_from_slice(x);
        for k in 0..d {
            labels.push((x_next[k] - x[k]) * inv_delta);
        }
    }
    Ok(TrainingSet { points, labels, dim: d, delta: traj.delta() })
}

/// Keeps rows `burn_in, burn_in + stride, …` of a training set. Subsampling
/// reduces the temporal correlation of consecutive rows; no independence is
/// claimed at any stride.
pub fn subsample(ts: &TrainingSet, stride: usize, burn_in: usize) -> Result<TrainingSet> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if burn_in >= ts.len() {
        return Err(Error::InvalidArgument(format!(
            "burn_in ({burn_in}) leaves no samples out of {}",
            ts.len()
        )));
    }
    let d = ts.dim();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut i = burn_in;
    while i < ts.len() {
        points.extend_from_slice(ts.point(i));
        labels.extend_from_slice(ts.label(i));
        i += stride;
    }
    Ok(TrainingSet { points, labels, dim: d, delta: ts.delta() })
}

/// Builds one of the built-in benchmark models from a name and parameter map.
///
/// Catalog (all dissipative, with documented `(a, d)` constants for
/// `⟨b(x), x⟩ ≤ a − d·|x|²`):
///
/// | name         | drift                                   | params           | d, m |
/// |--------------|------------------------------------------|------------------|------|
/// | `ou`         | `b(x) = −θx`                             | `theta`, `sigma` | 1, 1 |
/// | `double_well`| `b(x) = x − x³`                          | `sigma`          | 1, 1 |
/// | `gradient2d` | `b = −∇V`, `V = ¼|x|⁴ + ½x₁² + x₂²`      | `sigma`          | 2, 2 |
///
/// `gradient2d` uses an anisotropic potential so the two coordinates have
/// different relaxation rates; its noise matrix is `sigma·I₂`.
pub fn make_benchmark_model(name: &str, params: &BTreeMap<String, f64>) -> Result<SdeModel> {
    let take = |allowed: &[&str]| -> Result<()> {
        for key in params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Configuration(format!(
                    "model `{name}` does not accept parameter `{key}` (accepted: {})",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    };
    let require = |key: &str| -> Result<f64> {
        params.get(key).copied().ok_or_else(|| {
            Error::Configuration(format!("model `{name}` requires parameter `{key}`"))
        })
    };
    let check_sigma = |sigma: f64| -> Result<f64> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Configuration(format!(
                "model `{name}` requires sigma >= 0, got {sigma}"
            )));
        }
        Ok(sigma)
    };

    match name {
        "ou" => {
            take(&["theta", "sigma"])?;
            let theta = require("theta")?;
            if !(theta.is_finite() && theta > 0.0) {
                return Err(Error::Configuration(format!(
                    "model `ou` requires theta > 0, got {theta}"
                )));
            }
            let sigma = check_sigma(require("sigma")?)?;
            let mut model = SdeModel::new("ou", 1, 1, vec![sigma], move |x, out| {
                out[0] = -theta * x[0];
            })?;
            // ⟨b,x⟩ = −θx² ≤ 1 − θx².
            model.dissipative = Some((1.0, theta));
            Ok(model)
        }
        "double_well" => {
            take(&["sigma"])?;
            let sigma = check_sigma(require("sigma")?)?;
            let mut model = SdeModel::new("double_well", 1, 1, vec![sigma], |x, out| {
                out[0] = x[0] - x[0] * x[0] * x[0];
            })?;
            // ⟨b,x⟩ = x² − x⁴ ≤ 1 − x²  (2x² ≤ x⁴ + 1).
            model.dissipative = Some((1.0, 1.0));
            Ok(model)
        }
        "gradient2d" => {
            take(&["sigma"])?;
            let sigma = check_sigma(require("sigma")?)?;
            let mut model = SdeModel::new(
                "gradient2d",
                2,
                2,
                vec![sigma, 0.0, 0.0, sigma],
                |x, out| {
                    let r2 = x[0] * x[0] + x[1] * x[1];
                    out[0] = -(r2 + 1.0) * x[0];
                    out[1] = -(r2 + 2.0) * x[1];
                },
            )?;
            // ⟨b,x⟩ = −|x|⁴ − x₁² − 2x₂² ≤ ¼ − |x|²  (|x|² − |x|⁴ ≤ ¼).
            model.dissipative = Some((0.25, 1.0));
            Ok(model)
        }
        other => Err(Error::Configuration(format!(
            "unknown benchmark model `{other}` (known: ou, double_well, gradient2d)"
        ))),
    }
}

/// Convenience constructor for the Ornstein–Uhlenbeck benchmark.
pub fn ou_model(theta: f64, sigma: f64) -> Result<SdeModel> {
    let mut params = BTreeMap::new();
    params.insert("theta".to_string(), theta);
    params.insert("sigma".to_string(), sigma);
    make_benchmark_model("ou", &params)
}
