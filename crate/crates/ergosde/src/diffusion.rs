//! Diffusion (noise covariance) estimation from regression residuals, the
//! spectral error metric between covariance matrices, and factorization of
//! an estimated covariance into a simulatable `d × m` noise matrix.
//!
//! The estimator is the scaled residual covariance
//!
//! ```text
//! Σ̂ = (δ/N) · Σ_i (y_i − b̂(x_i))(y_i − b̂(x_i))ᵀ,
//! ```
//!
//! which targets `σσᵀ` because finite-difference labels carry noise of
//! magnitude `δ^{-1/2}·σ`. Factorization follows a thin-SVD/Cholesky
//! construction when the true `σ` is available, and a truncated symmetric
//! eigendecomposition when it is not.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen, SVD};

use crate::error::{Error, Result};
use crate::sde::TrainingSet;

/// Relative eigenvalue cutoff used by rank checks in the factorization.
pub const FACTOR_RANK_TOL: f64 = 1e-10;

/// Relative asymmetry beyond which [`spectral_error`] rejects its inputs.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Relative Frobenius tolerance for the factor round-trip invariant.
pub const REBUILD_TOL: f64 = 1e-10;

/// Residual-covariance estimate of `σσᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionEstimate {
    /// Row-major `d × d`, exactly symmetric.
    sigma2_hat: Vec<f64>,
    dim: usize,
    n_used: usize,
    delta: f64,
}

impl DiffusionEstimate {
    /// Wraps an externally computed covariance matrix, validating symmetry
    /// (to `1e-12` relative) and near-positive-semidefiniteness
    /// (eigenvalues ≥ `−1e-10·λ_max`).
    pub fn from_matrix(sigma2_hat: Vec<f64>, dim: usize, n_used: usize, delta: f64) -> Result<Self> {
        if dim == 0 || sigma2_hat.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                context: "diffusion estimate matrix",
                expected: dim * dim,
                actual: sigma2_hat.len(),
            });
        }
        let scale = sigma2_hat.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for i in 0..dim {
            for j in (i + 1)..dim {
                let gap = (sigma2_hat[i * dim + j] - sigma2_hat[j * dim + i]).abs();
                if gap > 1e-12 * scale.max(1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "diffusion estimate is asymmetric at ({i},{j}): gap {gap}"
                    )));
                }
            }
        }
        let est = Self { sigma2_hat, dim, n_used, delta };
        let eigs = est.eigenvalues();
        let lambda_max = eigs.iter().cloned().fold(0.0f64, f64::max);
        if let Some(&min) = eigs.last() {
            if min < -FACTOR_RANK_TOL * lambda_max.max(1.0) {
                return Err(Error::Numeric(format!(
                    "diffusion estimate has negative eigenvalue {min}"
                )));
            }
        }
        Ok(est)
    }

    /// Row-major `d × d` matrix entries.
    pub fn matrix(&self) -> &[f64] {
        &self.sigma2_hat
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_used(&self) -> usize {
        self.n_used
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.sigma2_hat[i * self.dim + j]
    }

    /// Sum of diagonal entries; a truth-free scale diagnostic.
    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.entry(i, i)).sum()
    }

    /// Eigenvalues in descending order; truth-free spectrum diagnostic.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mat = DMatrix::from_row_slice(self.dim, self.dim, &self.sigma2_hat);
        let mut eigs: Vec<f64> = SymmetricEigen::new(mat).eigenvalues.iter().cloned().collect();
        eigs.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        eigs
    }
}

/// Estimates `σσᵀ` as `(δ/N)·Σ r_i r_iᵀ` with residuals
/// `r_i = y_i − b̂(x_i)` against the supplied drift estimate.
///
/// The drift callback writes `b̂(x)` into its second argument, matching the
/// calling convention of both model drifts and fitted estimators. Requires
/// `N ≥ 2`; the output is exactly symmetric and PSD by construction.
pub fn estimate_diffusion<F>(ts: &TrainingSet, drift_estimate: F) -> Result<DiffusionEstimate>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = ts.len();
    let d = ts.dim();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "diffusion estimation needs at least 2 samples, got {n}"
        )));
    }
    let mut upper = vec![0.0; d * d];
    let mut drift = vec![0.0; d];
    let mut resid = vec![0.0; d];
    for i in 0..n {
        drift_estimate(ts.point(i), &mut drift);
        for (k, (y, b)) in ts.label(i).iter().zip(&drift).enumerate() {
            resid[k] = y - b;
        }
        for a in 0..d {
            for b in a..d {
                upper[a * d + b] += resid[a] * resid[b];
            }
        }
    }
    let scale = ts.delta() / n as f64;
    let mut sigma2 = vec![0.0; d * d];
    for a in 0..d {
        for b in a..d {
            let v = upper[a * d + b] * scale;
            sigma2[a * d + b] = v;
            sigma2[b * d + a] = v;
        }
    }
    DiffusionEstimate::from_matrix(sigma2, d, n, ts.delta())
}

/// Largest absolute eigenvalue of `est − truth` (the matrix 2-norm of the
/// difference of two symmetric matrices). Inputs are row-major `d × d` and
/// must be symmetric to [`SYMMETRY_TOL`] relative.
pub fn spectral_error(est: &[f64], truth: &[f64], dim: usize) -> Result<f64> {
    if dim == 0 || est.len() != dim * dim || truth.len() != dim * dim {
        return Err(Error::DimensionMismatch {
            context: "spectral-error operands",
            expected: dim * dim,
            actual: est.len().max(truth.len()),
        });
    }
    for (name, mat) in [("estimate", est), ("truth", truth)] {
        let scale = mat.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
        for i in 0..dim {
            for j in (i + 1)..dim {
                let gap = (mat[i * dim + j] - mat[j * dim + i]).abs();
                if gap > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidArgument(format!(
                        "spectral_error {name} operand is asymmetric at ({i},{j}): gap {gap}"
                    )));
                }
            }
        }
    }
    let mut diff = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            // Symmetrize so rounding-level asymmetry cannot leak into the
            // eigensolver.
            let a = est[i * dim + j] - truth[i * dim + j];
            let b = est[j * dim + i] - truth[j * dim + i];
            diff[(i, j)] = 0.5 * (a + b);
        }
    }
    let eigs = SymmetricEigen::new(diff).eigenvalues;
    Ok(eigs.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
}

/// A factor `σ_ε` with `σ_εσ_εᵀ` reproducing its source covariance.
///
/// In benchmark mode (truth supplied) the factor is `U·L_ε·Vᵀ`, where
/// `σ = UΛVᵀ` is the thin SVD of the truth, `Σ_ε = Uᵀ·Σ̂·U`, and
/// `L_εL_εᵀ = Σ_ε` is its Cholesky factorization; the internals are
/// retained for stability audits. In truth-free mode the factor is the
/// rank-`m` eigendecomposition square root, and only the singular values
/// are retained.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaFactor {
    /// Row-major `d × m`.
    sigma_eps: Vec<f64>,
    dim: usize,
    m: usize,
    /// The `d × d` matrix the factor must reproduce: the `U`-projected
    /// estimate in benchmark mode, the rank-`m` truncation otherwise.
    source_product: Vec<f64>,
    u: Option<Vec<f64>>,
    lambda: Vec<f64>,
    v_t: Option<Vec<f64>>,
    sigma_proj: Option<Vec<f64>>,
    l_eps: Option<Vec<f64>>,
}

impl SigmaFactor {
    /// Row-major `d × m` factor entries.
    pub fn sigma_eps(&self) -> &[f64] {
        &self.sigma_eps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    /// `σ_εσ_εᵀ`, row-major `d × d`.
    pub fn product(&self) -> Vec<f64> {
        let s = DMatrix::from_row_slice(self.dim, self.m, &self.sigma_eps);
        let p = &s * s.transpose();
        (0..self.dim * self.dim).map(|k| p[(k / self.dim, k % self.dim)]).collect()
    }

    /// The matrix `σ_εσ_εᵀ` is required to reproduce.
    pub fn source_product(&self) -> &[f64] {
        &self.source_product
    }

    /// Relative Frobenius distance between `σ_εσ_εᵀ` and its source.
    pub fn rebuild_error(&self) -> f64 {
        let product = self.product();
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, s) in product.iter().zip(&self.source_product) {
            num += (p - s) * (p - s);
            den += s * s;
        }
        (num / den.max(1e-300)).sqrt()
    }

    /// Singular values of the factored object: `Λ` from the truth's thin
    /// SVD in benchmark mode, `√λ_j` of the estimate otherwise.
    pub fn singular_values(&self) -> &[f64] {
        &self.lambda
    }

    /// Thin-SVD left factor `U` (row-major `d × m`), benchmark mode only.
    pub fn u(&self) -> Option<&[f64]> {
        self.u.as_deref()
    }

    /// Thin-SVD right factor `Vᵀ` (row-major `m × m`), benchmark mode only.
    pub fn v_t(&self) -> Option<&[f64]> {
        self.v_t.as_deref()
    }

    /// Projected estimate `Σ_ε = Uᵀ·Σ̂·U` (row-major `m × m`), benchmark
    /// mode only.
    pub fn sigma_proj(&self) -> Option<&[f64]> {
        self.sigma_proj.as_deref()
    }

    /// Cholesky factor `L_ε` of `Σ_ε` (row-major `m × m` lower triangle),
    /// benchmark mode only.
    pub fn l_eps(&self) -> Option<&[f64]> {
        self.l_eps.as_deref()
    }
}

/// Factors a diffusion estimate into a simulatable `d × m` noise matrix.
///
/// `sigma_true` is the true noise matrix as a row-major `d × m` slice with
/// its column count; when present the factorization follows the
/// thin-SVD/Cholesky construction and requires `σ` to have full column
/// rank and `Σ_ε` to be positive definite. When absent the factor is the
/// square root of the rank-`d` eigendecomposition; use
/// [`factor_sigma_with_rank`] for a smaller target rank.
pub fn factor_sigma(
    est: &DiffusionEstimate,
    sigma_true: Option<(&[f64], usize)>,
) -> Result<SigmaFactor> {
    match sigma_true {
        Some((sigma, m)) => factor_with_truth(est, sigma, m),
        None => factor_sigma_with_rank(est, est.dim()),
    }
}

/// Truth-free factorization truncated to the top `m` eigenpairs; requires
/// `m` eigenvalues above `1e-10·λ_max`.
pub fn factor_sigma_with_rank(est: &DiffusionEstimate, m: usize) -> Result<SigmaFactor> {
    let d = est.dim();
    if m == 0 || m > d {
        return Err(Error::InvalidArgument(format!(
            "factor rank must be in 1..={d}, got {m}"
        )));
    }
    let mat = DMatrix::from_row_slice(d, d, est.matrix());
    let eig = SymmetricEigen::new(mat);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal)
    });
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let cutoff = FACTOR_RANK_TOL * lambda_max;
    let rank = order.iter().filter(|&&j| eig.eigenvalues[j] > cutoff).count();
    if rank < m {
        return Err(Error::RankDeficient { requested: m, rank });
    }

    let mut sigma_eps = vec![0.0; d * m];
    let mut lambda = Vec::with_capacity(m);
    for (col, &j) in order.iter().take(m).enumerate() {
        let root = eig.eigenvalues[j].sqrt();
        lambda.push(root);
        for i in 0..d {
            sigma_eps[i * m + col] = eig.eigenvectors[(i, j)] * root;
        }
    }

    // Source: the rank-m truncation V_m·diag(λ)·V_mᵀ.
    let mut source = vec![0.0; d * d];
    for &j in order.iter().take(m) {
        let l = eig.eigenvalues[j];
        for a in 0..d {
            for b in 0..d {
                source[a * d + b] += l * eig.eigenvectors[(a, j)] * eig.eigenvectors[(b, j)];
            }
        }
    }

    let factor = SigmaFactor {
        sigma_eps,
        dim: d,
        m,
        source_product: source,
        u: None,
        lambda,
        v_t: None,
        sigma_proj: None,
        l_eps: None,
    };
    check_rebuild(&factor)?;
    Ok(factor)
}

fn factor_with_truth(est: &DiffusionEstimate, sigma: &[f64], m: usize) -> Result<SigmaFactor> {
    let d = est.dim();
    if m == 0 || m > d || sigma.len() != d * m {
        return Err(Error::DimensionMismatch {
            context: "true noise matrix",
            expected: d * m.max(1),
            actual: sigma.len(),
        });
    }

    let svd = SVD::new(DMatrix::from_row_slice(d, m, sigma), true, true);
    let mut u = svd.u.ok_or_else(|| Error::Numeric("SVD did not produce U".into()))?;
    let mut v_t = svd.v_t.ok_or_else(|| Error::Numeric("SVD did not produce Vᵀ".into()))?;
    let singular: Vec<f64> = svd.singular_values.iter().cloned().collect();
    let s_max = singular.iter().cloned().fold(0.0f64, f64::max);
    let rank = singular.iter().filter(|&&s| s > FACTOR_RANK_TOL * s_max.max(1e-300)).count();
    if rank < m {
        return Err(Error::RankDeficient { requested: m, rank });
    }

    // Sign convention: largest-magnitude entry of each U column positive;
    // the matching Vᵀ row flips too so UΛVᵀ is unchanged.
    for j in 0..m {
        let mut pivot = 0;
        for i in 1..d {
            if u[(i, j)].abs() > u[(pivot, j)].abs() {
                pivot = i;
            }
        }
        if u[(pivot, j)] < 0.0 {
            for i in 0..d {
                u[(i, j)] = -u[(i, j)];
            }
            for k in 0..m {
                v_t[(j, k)] = -v_t[(j, k)];
            }
        }
    }

    let est_mat = DMatrix::from_row_slice(d, d, est.matrix());
    let sigma_proj = u.transpose() * &est_mat * &u;

    // Reject non-PD projections before factoring so the failure mode is a
    // diagnosis rather than a Cholesky panic path.
    let proj_eigs = SymmetricEigen::new(sigma_proj.clone()).eigenvalues;
    if proj_eigs.iter().any(|&l| l <= 0.0) {
        return Err(Error::Degenerate(
            "projected diffusion estimate Σ_ε is not positive definite; \
             increase the sample size or decrease the step size"
                .into(),
        ));
    }
    let chol = Cholesky::new(sigma_proj.clone()).ok_or_else(|| {
        Error::Degenerate(
            "Cholesky factorization of Σ_ε failed; increase the sample size \
             or decrease the step size"
                .into(),
        )
    })?;
    let l_eps = chol.l();

    let sigma_eps_mat = &u * &l_eps * &v_t;
    let source_mat = &u * &sigma_proj * u.transpose();

    let flatten = |mat: &DMatrix<f64>| -> Vec<f64> {
        let (r, c) = mat.shape();
        (0..r * c).map(|k| mat[(k / c, k % c)]).collect()
    };

    let factor = SigmaFactor {
        sigma_eps: flatten(&sigma_eps_mat),
        dim: d,
        m,
        source_product: flatten(&source_mat),
        u: Some(flatten(&u)),
        lambda: singular,
        v_t: Some(flatten(&v_t)),
        sigma_proj: Some(flatten(&sigma_proj)),
        l_eps: Some(flatten(&l_eps)),
    };
    check_rebuild(&factor)?;
    Ok(factor)
}

fn check_rebuild(factor: &SigmaFactor) -> Result<()> {
    let err = factor.rebuild_error();
    if err > REBUILD_TOL {
        return Err(Error::Numeric(format!(
            "factor round-trip error {err} exceeds {REBUILD_TOL}"
        )));
    }
    Ok(())
}
