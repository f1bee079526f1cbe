//! Invariant statistics of simulated SDE models: one-point ergodic
//! averages, two-point (lagged) correlations, and perturbation-sweep
//! harnesses that measure how those statistics move as a model family is
//! pushed away from a base model.
//!
//! All estimators are time averages over a single long path (the
//! geometrically ergodic regime these models live in makes that
//! consistent); an ensemble variant is available for cross-checking.
//! Standard errors come from batch means with `⌈√n⌉` batches. Sweeps use
//! common random numbers — every member of a family is driven by the same
//! noise stream — so statistic differences are paired and the `ε = 0`
//! member differs from the base by exactly zero.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, GaussianStream};
use crate::sde::{simulate, simulate_stream, EmConfig, SdeModel, Trajectory};
use crate::spectral::least_squares_slope;

/// Factor separating "signal" from "noise floor" in sweep slope fits: a
/// point enters the log-log fit only if its error exceeds this many of its
/// own standard errors.
pub const NOISE_FLOOR_FACTOR: f64 = 3.0;

type ObservableFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A named scalar function of the state, `f: ℝ^d → ℝ`.
#[derive(Clone)]
pub struct Observable {
    name: String,
    f: Arc<ObservableFn>,
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observable").field("name", &self.name).finish_non_exhaustive()
    }
}

impl Observable {
    /// Coordinate `x_k`.
    pub fn coordinate(k: usize) -> Self {
        Self { name: format!("x{k}"), f: Arc::new(move |x: &[f64]| x[k]) }
    }

    /// Square `x_k²`.
    pub fn square(k: usize) -> Self {
        Self { name: format!("x{k}^2"), f: Arc::new(move |x: &[f64]| x[k] * x[k]) }
    }

    /// Product `x_j·x_k`.
    pub fn product(j: usize, k: usize) -> Self {
        Self { name: format!("x{j}*x{k}"), f: Arc::new(move |x: &[f64]| x[j] * x[k]) }
    }

    /// Constant function `c`.
    pub fn constant(c: f64) -> Self {
        Self { name: format!("const({c})"), f: Arc::new(move |_: &[f64]| c) }
    }

    /// User-supplied function.
    pub fn custom(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    /// Pointwise product `A(x)·B(x)`; evaluating it reproduces the lag-0
    /// two-point accumulation term for term.
    pub fn product_of(a: &Observable, b: &Observable) -> Self {
        let (fa, fb) = (Arc::clone(&a.f), Arc::clone(&b.f));
        Self {
            name: format!("{}*{}", a.name, b.name),
            f: Arc::new(move |x: &[f64]| fa(x) * fb(x)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// A time-average estimate with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicAverage {
    pub estimate: f64,
    pub std_error: f64,
    /// Post-burn-in samples entering the average.
    pub n_samples: usize,
    /// Batches used for the standard error.
    pub n_batches: usize,
}

/// Splits `n` samples into `⌈√n⌉` equal batches (trailing remainder
/// dropped from the variance estimate only).
fn batch_partition(n: usize) -> (usize, usize) {
    let k = (n as f64).sqrt().ceil() as usize;
    (k, n / k.max(1))
}

/// Sequential mean plus batch-means standard error of an ordered sample.
fn mean_and_batch_se(values: &[f64]) -> (f64, f64, usize) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let (k, m) = batch_partition(n);
    if k < 2 || m == 0 {
        return (mean, 0.0, k);
    }
    let mut batch_means = Vec::with_capacity(k);
    for b in 0..k {
        let chunk = &values[b * m..(b + 1) * m];
        batch_means.push(chunk.iter().sum::<f64>() / m as f64);
    }
    let grand = batch_means.iter().sum::<f64>() / k as f64;
    let var = batch_means.iter().map(|v| (v - grand) * (v - grand)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt(), k)
}

/// Time average of `f` over the post-burn-in states of an existing path.
pub fn ergodic_average_on(traj: &Trajectory, f: &Observable, burn_in: usize) -> Result<ErgodicAverage> {
    let n_states = traj.n_states();
    if burn_in >= n_states {
        return Err(Error::InvalidArgument(format!(
            "burn_in ({burn_in}) leaves no states out of {n_states}"
        )));
    }
    let values: Vec<f64> = (burn_in..n_states).map(|i| f.eval(traj.state(i))).collect();
    let (estimate, std_error, n_batches) = mean_and_batch_se(&values);
    Ok(ErgodicAverage { estimate, std_error, n_samples: values.len(), n_batches })
}

/// Simulates from the origin and time-averages `f` after burn-in.
pub fn ergodic_average(model: &SdeModel, f: &Observable, cfg: &EmConfig) -> Result<ErgodicAverage> {
    let traj = simulate(model, &vec![0.0; model.dim()], cfg)?;
    ergodic_average_on(&traj, f, cfg.effective_burn_in())
}

/// Ensemble cross-check: averages `f` over `n_paths` independent paths
/// (streams `0..n_paths` of the seed), with the standard error taken
/// across per-path means.
pub fn ensemble_average(
    model: &SdeModel,
    f: &Observable,
    cfg: &EmConfig,
    n_paths: usize,
) -> Result<ErgodicAverage> {
    if n_paths < 2 {
        return Err(Error::InvalidArgument(format!(
            "ensemble averaging needs at least 2 paths, got {n_paths}"
        )));
    }
    let x0 = vec![0.0; model.dim()];
    let burn_in = cfg.effective_burn_in();
    let path_means: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|stream| -> Result<f64> {
            let traj = simulate_stream(model, &x0, cfg, stream)?;
            Ok(ergodic_average_on(&traj, f, burn_in)?.estimate)
        })
        .collect::<Result<_>>()?;
    let mean = path_means.iter().sum::<f64>() / n_paths as f64;
    let var = path_means.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (n_paths - 1) as f64;
    Ok(ErgodicAverage {
        estimate: mean,
        std_error: (var / n_paths as f64).sqrt(),
        n_samples: n_paths * (cfg.n_steps - burn_in + 1),
        n_batches: n_paths,
    })
}

/// Lagged correlation estimates `k̂_{A,B}(nδ)` for lags `0..=max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPointReport {
    pub model_name: String,
    pub observable_a: String,
    pub observable_b: String,
    pub delta: f64,
    pub seed: u64,
    pub n_steps: usize,
    pub burn_in: usize,
    /// Strictly increasing from 0.
    pub lags: Vec<usize>,
    /// `k̂(nδ)` per lag.
    pub values: Vec<f64>,
    /// Batch-means standard error per lag.
    pub std_errors: Vec<f64>,
    /// Post-burn-in products entering each lag's average.
    pub n_samples: Vec<usize>,
}

impl TwoPointReport {
    /// Physical times `nδ` for each lag.
    pub fn times(&self) -> Vec<f64> {
        self.lags.iter().map(|&l| l as f64 * self.delta).collect()
    }

    pub fn value_at(&self, lag: usize) -> Option<f64> {
        self.lags.iter().position(|&l| l == lag).map(|i| self.values[i])
    }
}

/// Evaluates `A` and `B` along a path once; shared by the correlation
/// estimators and the sweep harness.
fn observable_track(traj: &Trajectory, f: &Observable) -> Vec<f64> {
    (0..traj.n_states()).map(|i| f.eval(traj.state(i))).collect()
}

/// Mean and batch means of the lag-`n` product stream
/// `A(X_{k+n})·B(X_k)`, `k = burn_in ..= n_states−1−n`.
fn lagged_products(
    a_vals: &[f64],
    b_vals: &[f64],
    burn_in: usize,
    lag: usize,
) -> (f64, f64, usize) {
    let last_k = a_vals.len() - 1 - lag;
    let values: Vec<f64> = (burn_in..=last_k).map(|k| a_vals[k + lag] * b_vals[k]).collect();
    mean_and_batch_se(&values)
}

/// Estimates `k_{A,B}(nδ) = E_π[A(X(nδ))·B(X(0))]` by the stationary time
/// average of `A(X_{k+n})·B(X_k)` over post-burn-in `k`, for every lag
/// `n ≤ max_lag`. Requires `max_lag ≤ n_steps − burn_in` so each lag
/// retains at least one product.
///
/// The lag-0 entry shares its accumulation with [`ergodic_average_on`] of
/// [`Observable::product_of`]`(A, B)`: same window, same order, bitwise
/// equal.
pub fn two_point_correlation(
    model: &SdeModel,
    a: &Observable,
    b: &Observable,
    cfg: &EmConfig,
    max_lag: usize,
) -> Result<TwoPointReport> {
    cfg.validate()?;
    let burn_in = cfg.effective_burn_in();
    if max_lag > cfg.n_steps - burn_in {
        return Err(Error::InvalidArgument(format!(
            "max_lag ({max_lag}) exceeds the post-burn-in length ({})",
            cfg.n_steps - burn_in
        )));
    }
    let traj = simulate(model, &vec![0.0; model.dim()], cfg)?;
    let a_vals = observable_track(&traj, a);
    let b_vals = observable_track(&traj, b);

    let mut lags = Vec::with_capacity(max_lag + 1);
    let mut values = Vec::with_capacity(max_lag + 1);
    let mut std_errors = Vec::with_capacity(max_lag + 1);
    let mut n_samples = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let (mean, se, _) = lagged_products(&a_vals, &b_vals, burn_in, lag);
        lags.push(lag);
        values.push(mean);
        std_errors.push(se);
        n_samples.push(a_vals.len() - lag - burn_in);
    }

    Ok(TwoPointReport {
        model_name: model.name().to_string(),
        observable_a: a.name().to_string(),
        observable_b: b.name().to_string(),
        delta: cfg.delta,
        seed: cfg.seed,
        n_steps: cfg.n_steps,
        burn_in,
        lags,
        values,
        std_errors,
        n_samples,
    })
}

/// Measured statistic errors across a perturbation grid, with the fitted
/// log-log scaling exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    /// `None` for one-point sweeps; `Some(n)` for the lag-`n` row of a
    /// two-point sweep.
    pub lag: Option<usize>,
    /// Strictly increasing positive perturbation sizes.
    pub epsilons: Vec<f64>,
    /// `|statistic(family(ε)) − statistic(base)|` per grid point, computed
    /// on seed-matched paired differences.
    pub errors: Vec<f64>,
    /// Paired batch-means standard error per grid point.
    pub std_errors: Vec<f64>,
    /// Least-squares slope of `log error` vs `log ε` over the points whose
    /// error clears [`NOISE_FLOOR_FACTOR`]× their standard error; `None`
    /// when fewer than two points survive.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Points entering the fit.
    pub points_used: usize,
}

fn validate_eps_grid(eps_grid: &[f64]) -> Result<()> {
    if eps_grid.is_empty() {
        return Err(Error::InvalidArgument("perturbation grid is empty".into()));
    }
    for (i, &e) in eps_grid.iter().enumerate() {
        if !(e.is_finite() && e > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "perturbation grid entries must be positive, got {e} at index {i}"
            )));
        }
        if i > 0 && e <= eps_grid[i - 1] {
            return Err(Error::InvalidArgument(
                "perturbation grid must be strictly increasing".into(),
            ));
        }
    }
    Ok(())
}

/// Verifies `family(0)` coincides with the base model: equal dimensions,
/// identical noise matrix, and drift agreement at seeded probe states.
fn check_family_base<F>(base: &SdeModel, family: &F) -> Result<()>
where
    F: Fn(f64) -> SdeModel,
{
    let zero = family(0.0);
    if zero.dim() != base.dim() || zero.noise_dim() != base.noise_dim() {
        return Err(Error::Configuration(
            "family(0) does not match the base model's dimensions".into(),
        ));
    }
    if zero.sigma() != base.sigma() {
        return Err(Error::Configuration(
            "family(0) does not match the base model's noise matrix".into(),
        ));
    }
    let mut g = GaussianStream::new(stream_rng(0x70726f62, 0));
    let mut probe = vec![0.0; base.dim()];
    let mut b0 = vec![0.0; base.dim()];
    let mut b1 = vec![0.0; base.dim()];
    for trial in 0..5 {
        if trial > 0 {
            for p in probe.iter_mut() {
                *p = 1.5 * g.next_gaussian();
            }
        }
        base.drift_into(&probe, &mut b0);
        zero.drift_into(&probe, &mut b1);
        for (u, v) in b0.iter().zip(&b1) {
            if (u - v).abs() > 1e-12 * u.abs().max(1.0) {
                return Err(Error::Configuration(format!(
                    "family(0) drift disagrees with the base model at {probe:?}: {u} vs {v}"
                )));
            }
        }
    }
    Ok(())
}

fn fit_report(
    lag: Option<usize>,
    eps_grid: &[f64],
    errors: Vec<f64>,
    std_errors: Vec<f64>,
) -> ScalingReport {
    let mut points = Vec::new();
    for ((&e, &err), &se) in eps_grid.iter().zip(&errors).zip(&std_errors) {
        if err > NOISE_FLOOR_FACTOR * se && err > 0.0 {
            points.push((e.ln(), err.ln()));
        }
    }
    let (slope, intercept) = if points.len() >= 2 {
        let (s, i) = least_squares_slope(&points);
        (Some(s), Some(i))
    } else {
        (None, None)
    };
    ScalingReport {
        lag,
        epsilons: eps_grid.to_vec(),
        errors,
        std_errors,
        slope,
        intercept,
        points_used: points.len(),
    }
}

/// Per-ε one-point errors `|π̂_ε(f) − π̂_0(f)|` and their paired standard
/// errors, without the slope fit. Seed-matched: every family member is
/// simulated with the base model's noise stream, so differences are paired
/// sample by sample and an unperturbed family yields exact zeros.
pub fn one_point_errors<F>(
    base: &SdeModel,
    family: F,
    f: &Observable,
    eps_grid: &[f64],
    cfg: &EmConfig,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(f64) -> SdeModel + Sync,
{
    cfg.validate()?;
    validate_eps_grid(eps_grid)?;
    check_family_base(base, &family)?;

    let x0 = vec![0.0; base.dim()];
    let burn_in = cfg.effective_burn_in();
    let base_traj = simulate(base, &x0, cfg)?;
    let base_vals = observable_track(&base_traj, f);
    drop(base_traj);

    let per_eps: Vec<(f64, f64)> = eps_grid
        .par_iter()
        .map(|&eps| -> Result<(f64, f64)> {
            let model = family(eps);
            let traj = simulate(&model, &x0, cfg)?;
            let diffs: Vec<f64> = (burn_in..traj.n_states())
                .map(|i| f.eval(traj.state(i)) - base_vals[i])
                .collect();
            let (mean, se, _) = mean_and_batch_se(&diffs);
            Ok((mean.abs(), se))
        })
        .collect::<Result<_>>()?;

    Ok(per_eps.into_iter().unzip())
}

/// Sweeps a model family across `eps_grid`, measures the one-point error
/// of `f` at each ε with common random numbers, and fits the log-log
/// scaling exponent.
///
/// Errors with [`Error::InconclusiveScaling`] when fewer than two grid
/// points clear the noise floor — the run is too short to resolve the
/// scaling, not evidence against it.
pub fn one_point_error_scaling<F>(
    base: &SdeModel,
    family: F,
    f: &Observable,
    eps_grid: &[f64],
    cfg: &EmConfig,
) -> Result<ScalingReport>
where
    F: Fn(f64) -> SdeModel + Sync,
{
    let (errors, std_errors) = one_point_errors(base, family, f, eps_grid, cfg)?;
    let report = fit_report(None, eps_grid, errors, std_errors);
    if report.points_used < 2 {
        return Err(Error::InconclusiveScaling(format!(
            "{} of {} one-point errors clear the noise floor; increase n_steps or the grid",
            report.points_used,
            eps_grid.len()
        )));
    }
    Ok(report)
}

/// Per-lag, per-ε two-point errors `|k̂_ε(nδ) − k̂_0(nδ)|`; rows are lags,
/// columns follow `eps_grid`. Returns `(errors, std_errors)` matrices.
#[allow(clippy::type_complexity)]
pub fn two_point_errors<F>(
    base: &SdeModel,
    family: F,
    a: &Observable,
    b: &Observable,
    eps_grid: &[f64],
    max_lag: usize,
    cfg: &EmConfig,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)>
where
    F: Fn(f64) -> SdeModel + Sync,
{
    cfg.validate()?;
    validate_eps_grid(eps_grid)?;
    check_family_base(base, &family)?;
    let burn_in = cfg.effective_burn_in();
    if max_lag > cfg.n_steps - burn_in {
        return Err(Error::InvalidArgument(format!(
            "max_lag ({max_lag}) exceeds the post-burn-in length ({})",
            cfg.n_steps - burn_in
        )));
    }

    let x0 = vec![0.0; base.dim()];

    // Per-lag batch means for one simulated path.
    let lag_stats = |model: &SdeModel| -> Result<Vec<(f64, Vec<f64>)>> {
        let traj = simulate(model, &x0, cfg)?;
        let a_vals = observable_track(&traj, a);
        let b_vals = observable_track(&traj, b);
        drop(traj);
        let mut stats = Vec::with_capacity(max_lag + 1);
        for lag in 0..=max_lag {
            let last_k = a_vals.len() - 1 - lag;
            let n = last_k + 1 - burn_in;
            let (k, m) = batch_partition(n);
            let mut batch_means = Vec::with_capacity(k);
            let mut total = 0.0;
            for kk in burn_in..=last_k {
                total += a_vals[kk + lag] * b_vals[kk];
            }
            for bi in 0..k {
                let start = burn_in + bi * m;
                let sum: f64 = (start..start + m).map(|kk| a_vals[kk + lag] * b_vals[kk]).sum();
                batch_means.push(sum / m as f64);
            }
            stats.push((total / n as f64, batch_means));
        }
        Ok(stats)
    };

    let base_stats = lag_stats(base)?;
    let eps_stats: Vec<Vec<(f64, Vec<f64>)>> = eps_grid
        .par_iter()
        .map(|&eps| lag_stats(&family(eps)))
        .collect::<Result<_>>()?;

    let mut errors = vec![Vec::with_capacity(eps_grid.len()); max_lag + 1];
    let mut std_errors = vec![Vec::with_capacity(eps_grid.len()); max_lag + 1];
    for stats in &eps_stats {
        for lag in 0..=max_lag {
            let (base_mean, base_batches) = &base_stats[lag];
            let (eps_mean, eps_batches) = &stats[lag];
            errors[lag].push((eps_mean - base_mean).abs());
            let k = base_batches.len();
            let se = if k >= 2 {
                let diffs: Vec<f64> = eps_batches
                    .iter()
                    .zip(base_batches)
                    .map(|(e, b)| e - b)
                    .collect();
                let grand = diffs.iter().sum::<f64>() / k as f64;
                let var = diffs.iter().map(|v| (v - grand) * (v - grand)).sum::<f64>()
                    / (k - 1) as f64;
                (var / k as f64).sqrt()
            } else {
                0.0
            };
            std_errors[lag].push(se);
        }
    }
    Ok((errors, std_errors))
}

/// Two-point analogue of [`one_point_error_scaling`]: one [`ScalingReport`]
/// per lag `0..=max_lag`, each fitted on seed-matched correlation errors.
///
/// A lag with fewer than two above-noise points gets `slope: None`; the
/// call only fails with [`Error::InconclusiveScaling`] when every lag is in
/// that state.
pub fn two_point_error_scaling<F>(
    base: &SdeModel,
    family: F,
    a: &Observable,
    b: &Observable,
    eps_grid: &[f64],
    max_lag: usize,
    cfg: &EmConfig,
) -> Result<Vec<ScalingReport>>
where
    F: Fn(f64) -> SdeModel + Sync,
{
    let (errors, std_errors) = two_point_errors(base, family, a, b, eps_grid, max_lag, cfg)?;
    let reports: Vec<ScalingReport> = errors
        .into_iter()
        .zip(std_errors)
        .enumerate()
        .map(|(lag, (errs, ses))| fit_report(Some(lag), eps_grid, errs, ses))
        .collect();
    if reports.iter().all(|r| r.points_used < 2) {
        return Err(Error::InconclusiveScaling(format!(
            "no lag out of {} clears the noise floor; increase n_steps or the grid",
            max_lag + 1
        )));
    }
    Ok(reports)
}
