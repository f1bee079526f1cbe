//! ReLU random-feature regression: a one-layer network with frozen random
//! inner weights and least-squares outer weights.
//!
//! The feature map draws `M` rows `A_i` uniformly from the ball of radius
//! `T = M^{1/(d+3)}` and offsets `ζ_i` uniformly from `[−D·T, D·T]`, then
//!
//! ```text
//! Φ_{ij} = φ(⟨A_j, x_i⟩ + ζ_j),   φ = ReLU,
//! ```
//!
//! and the outer weights solve the (optionally ridge-regularized) normal
//! equations `ΦᵀΦ·Ŵ = Φᵀ·y`. Predictions are supported on the ball of
//! radius `D` and clipped componentwise to `±K̂₂·√(1+D²)`, the tightest cap
//! consistent with the training data's growth.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, GaussianStream};
use crate::sde::TrainingSet;

/// Relative cutoff under which Gram eigenvalues are treated as zero in the
/// pseudo-inverse path of the fit.
pub const PSEUDO_INVERSE_TOL: f64 = 1e-10;

/// Behavior of a fitted estimator outside its support ball `B_D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionMode {
    /// Return zero outside `B_D` (the indicator in the hypothesis class).
    HardZero,
    /// Return the value at the nearest boundary point `D·x/|x|`; keeps a
    /// restoring drift alive when the estimator is simulated as an SDE
    /// drift, at the cost of leaving the hypothesis class outside `B_D`.
    Boundary,
}

/// Frozen random inner layer: weights, offsets, and sampling radii.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluFeatureMap {
    /// Row-major `M × dim` inner weights.
    a: Vec<f64>,
    /// `M` offsets.
    zeta: Vec<f64>,
    t_radius: f64,
    d_radius: f64,
    dim: usize,
    seed: u64,
}

impl ReluFeatureMap {
    /// Rebuilds a map from stored parts, validating the support invariants
    /// `|A_i| ≤ T` and `|ζ_i| ≤ D·T`.
    pub fn from_parts(
        a: Vec<f64>,
        zeta: Vec<f64>,
        t_radius: f64,
        d_radius: f64,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || zeta.is_empty() || a.len() != zeta.len() * dim {
            return Err(Error::DimensionMismatch {
                context: "feature-map weights",
                expected: zeta.len() * dim.max(1),
                actual: a.len(),
            });
        }
        if !(t_radius.is_finite() && t_radius > 0.0 && d_radius.is_finite() && d_radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "feature radii must be positive, got T={t_radius}, D={d_radius}"
            )));
        }
        let map = Self { a, zeta, t_radius, d_radius, dim, seed };
        let slack = 1.0 + 1e-12;
        for i in 0..map.n_features() {
            let row_norm = map.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if row_norm > t_radius * slack {
                return Err(Error::InvalidArgument(format!(
                    "inner weight row {i} has norm {row_norm} > T = {t_radius}"
                )));
            }
            if map.zeta[i].abs() > d_radius * t_radius * slack {
                return Err(Error::InvalidArgument(format!(
                    "offset {i} is {} > D·T = {}",
                    map.zeta[i],
                    d_radius * t_radius
                )));
            }
        }
        Ok(map)
    }

    pub fn n_features(&self) -> usize {
        self.zeta.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_radius(&self) -> f64 {
        self.t_radius
    }

    pub fn d_radius(&self) -> f64 {
        self.d_radius
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Inner weight row `A_i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.dim..(i + 1) * self.dim]
    }

    pub fn offsets(&self) -> &[f64] {
        &self.zeta
    }

    /// `|A|_F`.
    pub fn weight_frobenius(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Feature vector `φ(⟨A_i, x⟩ + ζ_i)` written into `out` (length `M`).
    pub fn features_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.n_features());
        for i in 0..self.n_features() {
            let row = self.row(i);
            let mut z = self.zeta[i];
            for (a, v) in row.iter().zip(x) {
                z += a * v;
            }
            out[i] = z.max(0.0);
        }
    }
}

/// Samples a feature map with the default radius `T = M^{1/(d+3)}`.
///
/// Deterministic given the seed: directions come from the Gaussian stream
/// `(seed, 0)`, radii and offsets from the uniform stream `(seed, 1)`.
pub fn sample_features(m: usize, dim: usize, d_radius: f64, seed: u64) -> Result<ReluFeatureMap> {
    let t = (m as f64).powf(1.0 / (dim as f64 + 3.0));
    sample_features_with_radius(m, dim, d_radius, t, seed)
}

/// Samples a feature map with an explicit sampling radius `T`, for callers
/// that know the smoothness scale of their target.
pub fn sample_features_with_radius(
    m: usize,
    dim: usize,
    d_radius: f64,
    t_radius: f64,
    seed: u64,
) -> Result<ReluFeatureMap> {
    if m == 0 || dim == 0 {
        return Err(Error::InvalidArgument("need at least one feature and one dimension".into()));
    }
    if !(d_radius.is_finite() && d_radius >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "truncation radius must satisfy D >= 1, got {d_radius}"
        )));
    }
    if !(t_radius.is_finite() && t_radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling radius must be positive, got {t_radius}"
        )));
    }

    let mut dirs = GaussianStream::new(stream_rng(seed, 0));
    let mut uniforms = stream_rng(seed, 1);
    let mut a = Vec::with_capacity(m * dim);
    let mut zeta = Vec::with_capacity(m);
    for _ in 0..m {
        // Uniform in the ball: Gaussian direction, radius T·U^{1/d}.
        let mut row: Vec<f64> = (0..dim).map(|_| dirs.next_gaussian()).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let r = t_radius * uniforms.gen::<f64>().powf(1.0 / dim as f64);
        row.iter_mut().for_each(|v| *v *= r / norm);
        a.extend_from_slice(&row);
        zeta.push(d_radius * t_radius * (2.0 * uniforms.gen::<f64>() - 1.0));
    }
    ReluFeatureMap::from_parts(a, zeta, t_radius, d_radius, dim, seed)
}

/// Assembles the `N × M` design matrix `Φ_{ij} = φ(⟨A_j, x_i⟩ + ζ_j)` in
/// row-major order from row-major `points` (`N × dim`).
pub fn design_matrix(fm: &ReluFeatureMap, points: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim != fm.dim() {
        return Err(Error::DimensionMismatch {
            context: "design-matrix points",
            expected: fm.dim(),
            actual: dim,
        });
    }
    if points.is_empty() || points.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            context: "design-matrix points",
            expected: dim,
            actual: points.len(),
        });
    }
    let n = points.len() / dim;
    let m = fm.n_features();
    let mut phi = vec![0.0; n * m];
    for i in 0..n {
        fm.features_into(&points[i * dim..(i + 1) * dim], &mut phi[i * m..(i + 1) * m]);
    }
    Ok(phi)
}

/// A fitted random-feature estimator. Immutable and shareable.
#[derive(Debug, Clone, PartialEq)]
pub struct RffEstimator {
    features: ReluFeatureMap,
    /// Row-major `M × dim` outer weights (column per output component).
    w: Vec<f64>,
    clip_bound: f64,
    extension: ExtensionMode,
}

/// Solves the normal equations for the outer weights.
///
/// `ridge > 0` solves `(ΦᵀΦ + λI)·Ŵ = Φᵀy` by Cholesky; `ridge = 0` applies
/// the pseudo-inverse of `ΦᵀΦ` with eigenvalues below
/// [`PSEUDO_INVERSE_TOL`]`·λ_max` treated as zero. The clip bound is
/// `K̂₂·√(1+D²)` with `K̂₂ = max_i |y_i|/√(1+|x_i|²)`.
pub fn fit_rff(fm: &ReluFeatureMap, ts: &TrainingSet, ridge: f64) -> Result<RffEstimator> {
    if ts.dim() != fm.dim() {
        return Err(Error::DimensionMismatch {
            context: "training dimension",
            expected: fm.dim(),
            actual: ts.dim(),
        });
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be nonnegative, got {ridge}")));
    }

    let n = ts.len();
    let m = fm.n_features();
    let d = ts.dim();

    let phi_flat = design_matrix(fm, ts.points_flat(), d)?;
    let phi = DMatrix::from_row_slice(n, m, &phi_flat);
    let y = DMatrix::from_row_slice(n, d, ts.labels_flat());
    let gram = phi.transpose() * &phi;
    let rhs = phi.transpose() * &y;

    let w = if ridge > 0.0 {
        let mut reg = gram;
        for i in 0..m {
            reg[(i, i)] += ridge;
        }
        let chol = Cholesky::new(reg).ok_or_else(|| {
            Error::Numeric("ridge-regularized Gram matrix is not positive definite".into())
        })?;
        chol.solve(&rhs)
    } else {
        // (ΦᵀΦ)†·Φᵀy via the symmetric eigendecomposition of the Gram.
        let eig = SymmetricEigen::new(gram);
        let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let cutoff = PSEUDO_INVERSE_TOL * lambda_max;
        let vt_rhs = eig.eigenvectors.transpose() * &rhs;
        let mut scaled = vt_rhs;
        for i in 0..m {
            let l = eig.eigenvalues[i];
            let inv = if l > cutoff { 1.0 / l } else { 0.0 };
            for k in 0..d {
                scaled[(i, k)] *= inv;
            }
        }
        &eig.eigenvectors * scaled
    };

    // K̂₂ = max_i |y_i| / √(1+|x_i|²).
    let mut k2 = 0.0f64;
    for i in 0..n {
        let ynorm = ts.label(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        let xnorm2 = ts.point(i).iter().map(|v| v * v).sum::<f64>();
        k2 = k2.max(ynorm / (1.0 + xnorm2).sqrt());
    }
    let d_radius = fm.d_radius();
    let clip_bound = k2 * (1.0 + d_radius * d_radius).sqrt();

    let mut w_flat = vec![0.0; m * d];
    for j in 0..m {
        for k in 0..d {
            w_flat[j * d + k] = w[(j, k)];
        }
    }

    Ok(RffEstimator {
        features: fm.clone(),
        w: w_flat,
        clip_bound,
        extension: ExtensionMode::HardZero,
    })
}

impl RffEstimator {
    pub fn features(&self) -> &ReluFeatureMap {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    pub fn extension(&self) -> ExtensionMode {
        self.extension
    }

    /// Returns a copy with the out-of-support behavior switched.
    pub fn with_extension(mut self, mode: ExtensionMode) -> Self {
        self.extension = mode;
        self
    }

    /// Outer weights, row-major `M × dim`.
    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// `|Ŵ|_F`.
    pub fn weight_frobenius(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// The raw feature expansion `Σ_i Ŵ_i·φ(⟨A_i, x⟩ + ζ_i)` with no
    /// truncation or clipping; the object the Lipschitz bound speaks about.
    pub fn raw_expansion(&self, x: &[f64]) -> Vec<f64> {
        let m = self.features.n_features();
        let d = self.dim();
        let mut phi = vec![0.0; m];
        self.features.features_into(x, &mut phi);
        let mut out = vec![0.0; d];
        for j in 0..m {
            let p = phi[j];
            if p > 0.0 {
                let row = &self.w[j * d..(j + 1) * d];
                for k in 0..d {
                    out[k] += row[k] * p;
                }
            }
        }
        out
    }

    /// Evaluates the estimator at `x`: zero (or nearest-boundary, per the
    /// extension mode) outside `B_D`, otherwise the expansion clipped
    /// componentwise into `[−clip_bound, clip_bound]`.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.predict_into(x, &mut out);
        out
    }

    /// Buffer variant of [`Self::predict`].
    pub fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim(), "query dimension mismatch");
        let d_radius = self.features.d_radius();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > d_radius {
            match self.extension {
                ExtensionMode::HardZero => {
                    out.fill(0.0);
                    return;
                }
                ExtensionMode::Boundary => {
                    let scale = d_radius / norm;
                    let boundary: Vec<f64> = x.iter().map(|v| v * scale).collect();
                    let raw = self.raw_expansion(&boundary);
                    for (o, v) in out.iter_mut().zip(raw) {
                        *o = v.clamp(-self.clip_bound, self.clip_bound);
                    }
                    return;
                }
            }
        }
        let raw = self.raw_expansion(x);
        for (o, v) in out.iter_mut().zip(raw) {
            *o = v.clamp(-self.clip_bound, self.clip_bound);
        }
    }
}

/// Lipschitz bound `|Ŵ|·|A|_F` of the raw expansion; per output component
/// the bound is `|Ŵ_{·k}|·|A|_F`, and components aggregate in Euclidean
/// norm, which collapses to `|Ŵ|_F·|A|_F`.
pub fn lipschitz_bound_rff(est: &RffEstimator) -> f64 {
    est.weight_frobenius() * est.features.weight_frobenius()
}

/// Moment report for `|A|²_F` of a sampled feature map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrobeniusReport {
    /// Per-row second moment `μ_A = d·T²/(d+2)`.
    pub mu_a: f64,
    /// Per-row variance `σ²_A = 4d·T⁴/((d+4)(d+2)²)`.
    pub sigma2_a: f64,
    /// `E|A|²_F = M·μ_A`.
    pub mean: f64,
    /// `M·σ²_A`, the variance term of the Bernstein denominator.
    pub variance_term: f64,
    pub tau: f64,
    /// Bernstein tail `2·exp(−τ²/(2Mσ²_A + (2/3)μ_A·τ))` for
    /// `P(| |A|²_F − M·μ_A | > τ)`.
    pub prob_bound: f64,
}

/// Concentration report for the squared Frobenius norm of the inner
/// weights at deviation `tau`.
pub fn frobenius_concentration(fm: &ReluFeatureMap, tau: f64) -> Result<FrobeniusReport> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let d = fm.dim() as f64;
    let t2 = fm.t_radius() * fm.t_radius();
    let m = fm.n_features() as f64;
    let mu_a = d / (d + 2.0) * t2;
    let sigma2_a = 4.0 * d / ((d + 4.0) * (d + 2.0) * (d + 2.0)) * t2 * t2;
    let prob_bound =
        (2.0 * (-(tau * tau) / (2.0 * m * sigma2_a + 2.0 / 3.0 * mu_a * tau)).exp()).min(1.0);
    Ok(FrobeniusReport {
        mu_a,
        sigma2_a,
        mean: m * mu_a,
        variance_term: m * sigma2_a,
        tau,
        prob_bound,
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Document tag identifying random-feature estimator JSON files.
pub const RFF_DOC_KIND: &str = "relu_random_feature_estimator";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RffDoc {
    kind: String,
    seed: u64,
    m_features: usize,
    dim: usize,
    t_radius: f64,
    d_radius: f64,
    zeta: Vec<f64>,
    /// Row-major `M × dim`.
    a: Vec<f64>,
    /// Row-major `M × dim`.
    w: Vec<f64>,
    clip_bound: f64,
    extension: ExtensionMode,
}

impl RffEstimator {
    /// Serializes to a self-describing JSON document; loading reproduces
    /// predictions exactly (floats print in shortest round-trip form).
    pub fn to_json(&self) -> String {
        let doc = RffDoc {
            kind: RFF_DOC_KIND.to_string(),
            seed: self.features.seed(),
            m_features: self.features.n_features(),
            dim: self.dim(),
            t_radius: self.features.t_radius(),
            d_radius: self.features.d_radius(),
            zeta: self.features.offsets().to_vec(),
            a: self.features.a.clone(),
            w: self.w.clone(),
            clip_bound: self.clip_bound,
            extension: self.extension,
        };
        serde_json::to_string_pretty(&doc).expect("rff document serializes")
    }

    /// Loads an estimator previously written by [`Self::to_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: RffDoc = serde_json::from_str(text)?;
        if doc.kind != RFF_DOC_KIND {
            return Err(Error::Configuration(format!(
                "expected document kind `{RFF_DOC_KIND}`, found `{}`",
                doc.kind
            )));
        }
        if doc.zeta.len() != doc.m_features || doc.w.len() != doc.m_features * doc.dim {
            return Err(Error::Configuration("rff document shape mismatch".into()));
        }
        let features = ReluFeatureMap::from_parts(
            doc.a,
            doc.zeta,
            doc.t_radius,
            doc.d_radius,
            doc.dim,
            doc.seed,
        )?;
        if !(doc.clip_bound.is_finite() && doc.clip_bound >= 0.0) {
            return Err(Error::Configuration(format!(
                "rff document clip bound must be nonnegative, got {}",
                doc.clip_bound
            )));
        }
        Ok(RffEstimator { features, w: doc.w, clip_bound: doc.clip_bound, extension: doc.extension })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_map(a: Vec<f64>, zeta: Vec<f64>, dim: usize, d_radius: f64) -> ReluFeatureMap {
        let t = a
            .chunks(dim)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(1.0f64, f64::max);
        ReluFeatureMap::from_parts(a, zeta, t, d_radius, dim, 0).unwrap()
    }

    fn estimator_with_weights(
        a: Vec<f64>,
        zeta: Vec<f64>,
        w: Vec<f64>,
        dim: usize,
        d_radius: f64,
        clip: f64,
    ) -> RffEstimator {
        RffEstimator {
            features: tiny_map(a, zeta, dim, d_radius),
            w,
            clip_bound: clip,
            extension: ExtensionMode::HardZero,
        }
    }

    #[test]
    fn default_radius_follows_feature_count() {
        // d = 2, M = 32: T = 32^{1/5} = 2.
        let fm = sample_features(32, 2, 1.5, 0).unwrap();
        assert!((fm.t_radius() - 2.0).abs() < 1e-12, "T = {}", fm.t_radius());
    }

    #[test]
    fn samples_stay_in_support() {
        let fm = sample_features(500, 3, 2.0, 7).unwrap();
        let dt = fm.d_radius() * fm.t_radius();
        for i in 0..fm.n_features() {
            let norm = fm.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= fm.t_radius() + 1e-12, "row {i} norm {norm}");
            assert!(fm.offsets()[i].abs() <= dt + 1e-12, "offset {i}");
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let a = sample_features(64, 2, 1.5, 123).unwrap();
        let b = sample_features(64, 2, 1.5, 123).unwrap();
        assert_eq!(a, b);
        let c = sample_features(64, 2, 1.5, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn row_norm_second_moment_matches_formula() {
        // E|A_i|² = d·T²/(d+2) for uniform sampling in the T-ball.
        let fm = sample_features_with_radius(100_000, 2, 1.5, 1.3, 42).unwrap();
        let mean: f64 = (0..fm.n_features())
            .map(|i| fm.row(i).iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / fm.n_features() as f64;
        let expected = 2.0 / 4.0 * 1.3 * 1.3;
        assert!(
            (mean - expected).abs() < 0.01 * expected,
            "mean {mean} vs expected {expected}"
        );
    }

    #[test]
    fn design_matrix_applies_relu() {
        // A₁ = (1,0), ζ₁ = 0 at x = (3,5) gives entry 3; a negative
        // pre-activation gives 0 and a positive one passes through.
        let fm = tiny_map(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, -6.0], 2, 10.0);
        let phi = design_matrix(&fm, &[3.0, 5.0], 2).unwrap();
        assert_eq!(phi, vec![3.0, 0.0]);
        let phi = design_matrix(&fm, &[0.0, 8.0], 2).unwrap();
        assert_eq!(phi, vec![0.0, 2.0]);
    }

    #[test]
    fn design_matrix_entries_respect_support_bound() {
        let fm = sample_features(64, 2, 2.0, 3).unwrap();
        let mut g = GaussianStream::new(stream_rng(9, 0));
        let points: Vec<f64> = (0..200).map(|_| g.next_gaussian()).collect();
        let max_norm = points
            .chunks(2)
            .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
            .fold(0.0f64, f64::max);
        let cap = fm.t_radius() * max_norm + fm.d_radius() * fm.t_radius();
        let phi = design_matrix(&fm, &points, 2).unwrap();
        for &v in &phi {
            assert!((0.0..=cap + 1e-9).contains(&v), "entry {v} outside [0, {cap}]");
        }
    }

    fn ou_like_training(n: usize, seed: u64) -> TrainingSet {
        let mut g = GaussianStream::new(stream_rng(seed, 0));
        let points: Vec<f64> = (0..n).map(|_| g.next_gaussian()).collect();
        let labels: Vec<f64> = points.iter().map(|&x| -x + 0.05 * g.next_gaussian()).collect();
        TrainingSet::from_rows(points, labels, 1, 0.01).unwrap()
    }

    #[test]
    fn zero_labels_give_zero_weights() {
        let ts = TrainingSet::from_rows(vec![0.1, 0.5, -0.4], vec![0.0; 3], 1, 0.01).unwrap();
        let fm = sample_features(8, 1, 1.5, 1).unwrap();
        for ridge in [0.0, 1e-3] {
            let est = fit_rff(&fm, &ts, ridge).unwrap();
            assert!(est.weights().iter().all(|&w| w.abs() < 1e-14));
        }
    }

    #[test]
    fn ridge_path_is_monotone() {
        let ts = ou_like_training(200, 2);
        let fm = sample_features(32, 1, 2.0, 5).unwrap();
        let lambdas = [0.0, 1e-4, 1e-2, 1.0];
        let mut last_residual = -1.0;
        let mut last_wnorm = f64::INFINITY;
        for &l in &lambdas {
            let est = fit_rff(&fm, &ts, l).unwrap();
            let phi = design_matrix(&fm, ts.points_flat(), 1).unwrap();
            let m = fm.n_features();
            let mut residual = 0.0;
            for i in 0..ts.len() {
                let mut pred = 0.0;
                for j in 0..m {
                    pred += phi[i * m + j] * est.weights()[j];
                }
                let r = ts.label(i)[0] - pred;
                residual += r * r;
            }
            let wnorm = est.weight_frobenius();
            assert!(
                residual >= last_residual - 1e-9,
                "residual decreased along ridge path: {residual} < {last_residual}"
            );
            assert!(
                wnorm <= last_wnorm + 1e-9,
                "weight norm increased along ridge path: {wnorm} > {last_wnorm}"
            );
            last_residual = residual;
            last_wnorm = wnorm;
        }
    }

    #[test]
    fn square_system_interpolates_noise_free_labels() {
        // M = N with a nonsingular Φ: the solve reproduces the labels.
        // Hinge features relu(x − j + 1/2) at points x_i = i give a lower
        // triangular design matrix with 1/2 on the diagonal.
        let n = 8;
        let points: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let labels: Vec<f64> = points.iter().map(|&x| x.sin()).collect();
        let ts = TrainingSet::from_rows(points.clone(), labels.clone(), 1, 0.01).unwrap();
        let zeta: Vec<f64> = (1..=n).map(|j| 0.5 - j as f64).collect();
        let fm = ReluFeatureMap::from_parts(vec![1.0; n], zeta, 1.0, 8.0, 1, 0).unwrap();
        let est = fit_rff(&fm, &ts, 0.0).unwrap();
        let phi = design_matrix(&fm, ts.points_flat(), 1).unwrap();
        let ynorm = labels.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut err = 0.0;
        for i in 0..n {
            let mut pred = 0.0;
            for j in 0..n {
                pred += phi[i * n + j] * est.weights()[j];
            }
            err += (pred - labels[i]) * (pred - labels[i]);
        }
        assert!(
            err.sqrt() <= 1e-6 * ynorm,
            "interpolation residual {} vs labels {ynorm}",
            err.sqrt()
        );
    }

    #[test]
    fn ridge_normal_equations_are_satisfied() {
        let ts = ou_like_training(300, 8);
        let fm = sample_features(24, 1, 2.0, 8).unwrap();
        let ridge = 1e-3;
        let est = fit_rff(&fm, &ts, ridge).unwrap();
        let phi_flat = design_matrix(&fm, ts.points_flat(), 1).unwrap();
        let phi = DMatrix::from_row_slice(ts.len(), 24, &phi_flat);
        let y = DMatrix::from_row_slice(ts.len(), 1, ts.labels_flat());
        let w = DMatrix::from_row_slice(24, 1, est.weights());
        let rhs = phi.transpose() * &y;
        let mut lhs = phi.transpose() * &phi * &w;
        lhs += ridge * &w;
        let resid = (&lhs - &rhs).norm();
        assert!(resid <= 1e-8 * rhs.norm(), "normal-equation residual {resid}");
    }

    #[test]
    fn prediction_truncates_clips_and_extends() {
        // Single unit feature: raw expansion is relu(x).
        let est = estimator_with_weights(vec![1.0], vec![0.0], vec![1.0], 1, 10.0, 1e9);
        assert_eq!(est.predict(&[3.0]), vec![3.0]);
        assert_eq!(est.predict(&[-3.0]), vec![0.0]);
        assert_eq!(est.predict(&[11.0]), vec![0.0], "outside B_D is hard zero");

        // Clipping: raw value 6 with clip bound 3 lands on 3.
        let clipped = estimator_with_weights(vec![1.0], vec![0.0], vec![2.0], 1, 10.0, 3.0);
        assert_eq!(clipped.predict(&[3.0]), vec![3.0]);

        // Boundary extension returns the value at D·x/|x|.
        let extended = estimator_with_weights(vec![1.0], vec![0.0], vec![1.0], 1, 10.0, 1e9)
            .with_extension(ExtensionMode::Boundary);
        assert_eq!(extended.predict(&[25.0]), vec![10.0]);
    }

    #[test]
    fn raw_expansion_is_homogeneous_in_weights() {
        let ts = ou_like_training(50, 3);
        let fm = sample_features(16, 1, 2.0, 3).unwrap();
        let est = fit_rff(&fm, &ts, 1e-6).unwrap();
        let mut scaled = est.clone();
        for w in scaled.w.iter_mut() {
            *w *= 2.5;
        }
        for x in [-1.0, 0.2, 0.9] {
            let a = est.raw_expansion(&[x])[0];
            let b = scaled.raw_expansion(&[x])[0];
            assert!((b - 2.5 * a).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn lipschitz_bound_examples_and_audit() {
        let zero = estimator_with_weights(vec![1.0], vec![0.0], vec![0.0], 1, 5.0, 1.0);
        assert_eq!(lipschitz_bound_rff(&zero), 0.0);

        let unit = estimator_with_weights(vec![1.0], vec![0.0], vec![1.0], 1, 5.0, 1.0);
        assert_eq!(lipschitz_bound_rff(&unit), 1.0);

        let ts = ou_like_training(150, 4);
        let fm = sample_features(32, 1, 2.5, 4).unwrap();
        let est = fit_rff(&fm, &ts, 1e-6).unwrap();
        let bound = lipschitz_bound_rff(&est);
        let mut g = GaussianStream::new(stream_rng(6, 0));
        for _ in 0..2000 {
            let a = g.next_gaussian().clamp(-2.4, 2.4);
            let b = g.next_gaussian().clamp(-2.4, 2.4);
            if (a - b).abs() < 1e-9 {
                continue;
            }
            let q = (est.raw_expansion(&[a])[0] - est.raw_expansion(&[b])[0]).abs() / (a - b).abs();
            assert!(q <= bound * (1.0 + 1e-10), "quotient {q} exceeds bound {bound}");
        }
    }

    #[test]
    fn frobenius_report_closed_forms() {
        // d = 2, T = 1: μ_A = 1/2 and σ²_A = 8/96 = 1/12.
        let fm = ReluFeatureMap::from_parts(vec![0.1, 0.1], vec![0.0], 1.0, 2.0, 2, 0).unwrap();
        let report = frobenius_concentration(&fm, 1.0).unwrap();
        assert!((report.mu_a - 0.5).abs() < 1e-15);
        assert!((report.sigma2_a - 1.0 / 12.0).abs() < 1e-15);
        assert!((report.mean - 0.5).abs() < 1e-15, "M = 1 here");
        let denom: f64 = 2.0 * (1.0 / 12.0) + 2.0 / 3.0 * 0.5;
        assert!((report.prob_bound - 2.0 * (-1.0 / denom).exp()).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_reproduces_predictions() {
        let ts = ou_like_training(100, 5);
        let fm = sample_features(24, 1, 2.0, 5).unwrap();
        let est = fit_rff(&fm, &ts, 1e-8).unwrap().with_extension(ExtensionMode::Boundary);
        let loaded = RffEstimator::from_json(&est.to_json()).unwrap();
        assert_eq!(est, loaded);
        for x in [-3.0, -0.7, 0.0, 1.1, 9.0] {
            assert_eq!(est.predict(&[x]), loaded.predict(&[x]));
        }
    }

    #[test]
    fn malformed_documents_are_rejected() {
        let ts = ou_like_training(20, 6);
        let fm = sample_features(4, 1, 1.5, 6).unwrap();
        let est = fit_rff(&fm, &ts, 0.0).unwrap();
        let wrong = est.to_json().replace(RFF_DOC_KIND, "other");
        assert!(RffEstimator::from_json(&wrong).is_err());
        assert!(RffEstimator::from_json("{\"kind\": 3}").is_err());
    }
}
