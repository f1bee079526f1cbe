//! Pipeline orchestration: runs the configured stages in order, writes
//! one artifact file per stage into the output directory, and finishes
//! with a manifest listing everything produced.
//!
//! Stage order is `simulate → training → fit → diffusion → statistics`,
//! with `sweep` as a separate single-stage task. Each subcommand runs a
//! prefix of the chain, so `diffusion` implies a fresh simulate/fit and
//! artifacts never mix data from different runs. All artifact files are
//! deterministic functions of the config and effective seed; timestamps
//! appear only in the manifest.
//!
//! Artifact files:
//!
//! | stage      | file                                         |
//! |------------|----------------------------------------------|
//! | simulate   | `trajectory.csv`                             |
//! | training   | `training.csv`                               |
//! | fit        | `estimator.json`                             |
//! | diffusion  | `diffusion.csv`                              |
//! | statistics | `statistics.csv`, `twopoint.csv` + `.json`   |
//! | sweep      | `sweep.csv`, `scaling.json`, `scaling_report.json` |
//! | (always)   | `run_manifest.json`                          |

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ergosde::diffusion::{estimate_diffusion, factor_sigma, spectral_error, DiffusionEstimate};
use ergosde::sde::{finite_difference_labels, simulate, subsample, EmConfig, TrainingSet};
use ergosde::stats::{
    ergodic_average, one_point_error_scaling, two_point_correlation, two_point_error_scaling,
    Observable, ScalingReport, TwoPointReport,
};
use ergosde::{fit_rff, fit_spectral, io, learned_model, sample_features};
use ergosde::{DriftEstimator, Error, SdeModel};

use crate::config::{
    EstimatorConfig, ExperimentConfig, FamilyChoice, IntegratorConfig, SweepStatistic,
};

/// File name of the run manifest written at the end of every task.
pub const MANIFEST_FILE: &str = "run_manifest.json";

/// An error tagged with the pipeline stage that produced it.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

fn at<T>(stage: &'static str, result: ergosde::Result<T>) -> Result<T, StageError> {
    result.map_err(|source| StageError { stage, source })
}

/// How far along the stage chain a subcommand runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Task {
    Simulate,
    Fit,
    Diffusion,
    Stats,
    Sweep,
}

/// Out-of-config run controls from the command line.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
    pub quiet: bool,
}

/// Record of a completed run: what was written, from which config, and
/// when. Every listed artifact exists once the manifest is on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_sha256: String,
    /// Effective seed (config seed unless overridden on the command line).
    pub seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn em_config(integrator: &IntegratorConfig, seed: u64) -> EmConfig {
    let mut em = EmConfig::new(integrator.delta, integrator.n_steps, seed);
    em.burn_in = integrator.burn_in;
    em
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Shared context threaded through the stages of one run.
struct RunContext<'a> {
    cfg: &'a ExperimentConfig,
    out_dir: &'a Path,
    seed: u64,
    quiet: bool,
    artifacts: Vec<String>,
}

impl RunContext<'_> {
    fn note(&self, stage: &str, message: String) {
        if !self.quiet {
            println!("[{stage}] {message}");
        }
    }

    fn write(&mut self, stage: &'static str, name: &str, text: String) -> Result<(), StageError> {
        let path = self.out_dir.join(name);
        at(stage, std::fs::write(&path, text).map_err(Error::from))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }
}

/// Runs `task` from `cfg`, writing artifacts and the manifest into
/// `opts.out_dir`. Returns the manifest that was written.
pub fn run_task(
    cfg: &ExperimentConfig,
    config_bytes: &[u8],
    opts: &RunOptions,
    task: Task,
) -> Result<RunManifest, StageError> {
    let started = now_ms();
    at("output", std::fs::create_dir_all(&opts.out_dir).map_err(Error::from))?;
    let seed = opts.seed_override.unwrap_or(cfg.seed);
    let model = at("config", cfg.build_model())?;

    let mut ctx = RunContext {
        cfg,
        out_dir: &opts.out_dir,
        seed,
        quiet: opts.quiet,
        artifacts: Vec::new(),
    };

    if task == Task::Sweep {
        run_sweep(&mut ctx, &model)?;
    } else {
        run_chain(&mut ctx, &model, task)?;
    }

    for name in &ctx.artifacts {
        let path = opts.out_dir.join(name);
        if !path.is_file() {
            return Err(StageError {
                stage: "manifest",
                source: Error::Numeric(format!("artifact `{name}` missing after run")),
            });
        }
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: sha256_hex(config_bytes),
        seed,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        artifacts: ctx.artifacts.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| StageError {
        stage: "manifest",
        source: Error::from(e),
    })?;
    at(
        "manifest",
        std::fs::write(opts.out_dir.join(MANIFEST_FILE), text + "\n").map_err(Error::from),
    )?;
    ctx.note(
        "done",
        format!("{} artifact(s) in {}", manifest.artifacts.len(), opts.out_dir.display()),
    );
    Ok(manifest)
}

/// The simulate → training → fit → diffusion → statistics chain, cut off
/// after `task`'s stage.
fn run_chain(ctx: &mut RunContext, model: &SdeModel, task: Task) -> Result<(), StageError> {
    let em = em_config(&ctx.cfg.integrator, ctx.seed);
    let x0 = vec![0.0; model.dim()];

    let traj = at("simulate", simulate(model, &x0, &em))?;
    ctx.note(
        "simulate",
        format!("{} steps of `{}` at δ={} → trajectory.csv", em.n_steps, model.name(), em.delta),
    );
    ctx.write("simulate", "trajectory.csv", io::trajectory_to_csv(&traj))?;
    if task == Task::Simulate {
        return Ok(());
    }

    let fitted = if let Some(est_cfg) = &ctx.cfg.estimator {
        let ts = make_training(ctx, &traj)?;
        drop(traj);
        Some(fit_stage(ctx, est_cfg, &ts)?)
    } else {
        match task {
            // Statistics fall back to the benchmark model itself, so a
            // missing estimator only blocks the fitting tasks.
            Task::Stats => None,
            _ => {
                return Err(StageError {
                    stage: "fit",
                    source: Error::Configuration(
                        "this task needs an `estimator` section in the config".into(),
                    ),
                })
            }
        }
    };
    if task == Task::Fit {
        return Ok(());
    }

    let diffusion = match &fitted {
        Some((drift, ts)) => Some(diffusion_stage(ctx, model, drift.clone(), ts)?),
        None => None,
    };
    if task == Task::Diffusion {
        return Ok(());
    }

    statistics_stage(ctx, model, fitted.map(|(d, _)| d), diffusion)
}

fn make_training(
    ctx: &mut RunContext,
    traj: &ergosde::sde::Trajectory,
) -> Result<TrainingSet, StageError> {
    let labels = at("training", finite_difference_labels(traj))?;
    let em = em_config(&ctx.cfg.integrator, ctx.seed);
    let mut ts = at(
        "training",
        subsample(&labels, ctx.cfg.sampling.stride, em.effective_burn_in()),
    )?;
    if let Some(max) = ctx.cfg.sampling.max_samples {
        ts.truncate(max);
    }
    ctx.note("training", format!("{} pairs after thinning → training.csv", ts.len()));
    ctx.write("training", "training.csv", io::training_to_csv(&ts))?;
    Ok(ts)
}

/// Fits the configured estimator and persists it. Returns the drift
/// estimate (shared, for the later stages) together with the training
/// set it was fitted on.
fn fit_stage(
    ctx: &mut RunContext,
    est_cfg: &EstimatorConfig,
    ts: &TrainingSet,
) -> Result<(Arc<dyn DriftEstimator>, TrainingSet), StageError> {
    let (drift, json, label): (Arc<dyn DriftEstimator>, String, String) = match est_cfg {
        EstimatorConfig::Spectral(spec) => {
            let kernel = at("fit", spec.kernel.to_kernel())?;
            let est = at("fit", fit_spectral(ts, kernel, spec.order as usize))?;
            let json = est.to_json();
            let label = format!("spectral `{}` order {}", spec.kernel.name, spec.order);
            (Arc::new(est), json, label)
        }
        EstimatorConfig::Rff(rff) => {
            let d_radius = rff.d_radius.unwrap_or_else(|| {
                let max_norm = (0..ts.len())
                    .map(|i| ts.point(i).iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0f64, f64::max);
                1.05 * max_norm
            });
            let fm = at(
                "fit",
                sample_features(rff.features as usize, ts.dim(), d_radius, ctx.seed.wrapping_add(1)),
            )?;
            let mut est = at("fit", fit_rff(&fm, ts, rff.ridge))?;
            if let Some(choice) = rff.extension {
                est = est.with_extension(choice.into());
            }
            let json = est.to_json();
            let label = format!("{} random features, ridge {}", rff.features, rff.ridge);
            (Arc::new(est), json, label)
        }
    };
    ctx.note("fit", format!("{label} on {} samples → estimator.json", ts.len()));
    ctx.write("fit", "estimator.json", json)?;
    Ok((drift, ts.clone()))
}

/// Estimates `σσᵀ` from the fit residuals and writes it with the
/// benchmark spectral error in the last row.
fn diffusion_stage(
    ctx: &mut RunContext,
    model: &SdeModel,
    drift: Arc<dyn DriftEstimator>,
    ts: &TrainingSet,
) -> Result<DiffusionEstimate, StageError> {
    let est = at(
        "diffusion",
        estimate_diffusion(ts, |x, out| drift.predict_into(x, out)),
    )?;
    let truth = model.sigma_squared();
    let eps = at("diffusion", spectral_error(est.matrix(), &truth, est.dim()))?;

    let d = est.dim();
    let mut text = format!("# d={d} n={} delta={}\n", est.n_used(), fmt(est.delta()));
    text.push_str("kind,i,j,value\n");
    for i in 0..d {
        for j in 0..d {
            text.push_str(&format!("sigma_squared,{i},{j},{}\n", fmt(est.entry(i, j))));
        }
    }
    text.push_str(&format!("benchmark_epsilon,,,{}\n", fmt(eps)));
    ctx.note(
        "diffusion",
        format!("trace {:.4}, benchmark ε = {:.3e} → diffusion.csv", est.trace(), eps),
    );
    ctx.write("diffusion", "diffusion.csv", text)?;
    Ok(est)
}

/// Measures the configured invariant statistics — on the learned model
/// when an estimator was fitted, on the benchmark model otherwise — and
/// writes ergodic averages plus an optional lagged-correlation report.
fn statistics_stage(
    ctx: &mut RunContext,
    model: &SdeModel,
    drift: Option<Arc<dyn DriftEstimator>>,
    diffusion: Option<DiffusionEstimate>,
) -> Result<(), StageError> {
    let stats_cfg = &ctx.cfg.statistics;
    if stats_cfg.observables.is_empty() {
        return Err(StageError {
            stage: "statistics",
            source: Error::Configuration(
                "the stats task needs at least one observable in `statistics.observables`".into(),
            ),
        });
    }
    let integrator = stats_cfg.integrator.as_ref().unwrap_or(&ctx.cfg.integrator);
    let em = em_config(integrator, ctx.seed.wrapping_add(2));

    let target: SdeModel = match (drift, diffusion) {
        (Some(drift), Some(est)) => {
            let factor = at("statistics", factor_sigma(&est, None))?;
            at(
                "statistics",
                learned_model(format!("learned-{}", model.name()), drift, &factor),
            )?
        }
        _ => model.clone(),
    };

    let observables: Vec<Observable> =
        stats_cfg.observables.iter().map(|o| o.to_observable()).collect();
    let mut text = format!(
        "# model={} delta={} n_steps={} seed={}\n",
        target.name(),
        fmt(em.delta),
        em.n_steps,
        em.seed
    );
    text.push_str("observable,estimate,std_error,n_samples,n_batches\n");
    for obs in &observables {
        let avg = at("statistics", ergodic_average(&target, obs, &em))?;
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            obs.name(),
            fmt(avg.estimate),
            fmt(avg.std_error),
            avg.n_samples,
            avg.n_batches
        ));
        ctx.note("statistics", format!("⟨{}⟩ = {:.6} ± {:.2e}", obs.name(), avg.estimate, avg.std_error));
    }
    ctx.write("statistics", "statistics.csv", text)?;

    if stats_cfg.max_lag > 0 {
        let a = &observables[0];
        let report = at("statistics", two_point_correlation(&target, a, a, &em, stats_cfg.max_lag))?;
        ctx.note(
            "statistics",
            format!(
                "autocorrelation of {} over {} lags → twopoint.csv",
                report.observable_a, stats_cfg.max_lag
            ),
        );
        ctx.write("statistics", "twopoint.csv", io::two_point_to_csv(&report))?;
        let json = at("statistics", serde_json::to_string_pretty(&report).map_err(Error::from))?;
        ctx.write("statistics", "twopoint.json", json + "\n")?;
    }
    Ok(())
}

/// Runs the perturbation-response sweep: fits the log-log response
/// slope of the chosen statistic across the ε grid.
fn run_sweep(ctx: &mut RunContext, model: &SdeModel) -> Result<(), StageError> {
    let sweep = ctx.cfg.sweep.as_ref().ok_or(StageError {
        stage: "sweep",
        source: Error::Configuration("the sweep task needs a `sweep` section in the config".into()),
    })?;
    let em = em_config(&ctx.cfg.integrator, ctx.seed);
    let observables: Vec<Observable> =
        ctx.cfg.statistics.observables.iter().map(|o| o.to_observable()).collect();
    let a = &observables[0];

    let dim = model.dim();
    let choice = sweep.family;
    let base = model.clone();
    let family = move |eps: f64| -> SdeModel {
        match choice {
            FamilyChoice::Shift => {
                let mut shift = vec![0.0; dim];
                shift[0] = eps;
                base.with_drift_shift(&shift).expect("shift length matches the model dimension")
            }
            FamilyChoice::Damping => base.with_drift_scale(1.0 + eps),
        }
    };

    let reports: Vec<ScalingReport> = match sweep.statistic {
        SweepStatistic::OnePoint => {
            let report = at(
                "sweep",
                one_point_error_scaling(model, &family, a, &sweep.epsilons, &em),
            )?;
            vec![report]
        }
        SweepStatistic::TwoPoint => at(
            "sweep",
            two_point_error_scaling(model, &family, a, a, &sweep.epsilons, sweep.max_lag, &em),
        )?,
    };

    for report in &reports {
        if let Some(slope) = report.slope {
            let lag = report.lag.map(|l| format!("lag {l}")).unwrap_or_else(|| "one-point".into());
            ctx.note("sweep", format!("{lag}: slope {slope:.4} from {} points", report.points_used));
        }
    }
    ctx.write("sweep", "sweep.csv", io::scaling_to_csv(&reports))?;
    ctx.write("sweep", "scaling.json", io::scaling_summary_json(&reports) + "\n")?;
    let full = at("sweep", serde_json::to_string_pretty(&reports).map_err(Error::from))?;
    ctx.write("sweep", "scaling_report.json", full + "\n")?;
    Ok(())
}

/// Renders SVG plots from the report artifacts already in `out_dir`:
/// `scaling_report.json` → `scaling*.svg`, `twopoint.json` →
/// `twopoint.svg`. Errors when neither artifact is present.
pub fn run_report(out_dir: &Path, quiet: bool) -> Result<(), StageError> {
    let mut written = Vec::new();

    let scaling_path = out_dir.join("scaling_report.json");
    if scaling_path.is_file() {
        let text = at("report", std::fs::read_to_string(&scaling_path).map_err(Error::from))?;
        let reports: Vec<ScalingReport> =
            at("report", serde_json::from_str(&text).map_err(Error::from))?;
        for report in &reports {
            let svg = at("report", crate::plot::scaling_plot_svg(report))?;
            let name = match report.lag {
                Some(lag) => format!("scaling_lag{lag}.svg"),
                None => "scaling.svg".to_string(),
            };
            at("report", std::fs::write(out_dir.join(&name), svg).map_err(Error::from))?;
            written.push(name);
        }
    }

    let twopoint_path = out_dir.join("twopoint.json");
    if twopoint_path.is_file() {
        let text = at("report", std::fs::read_to_string(&twopoint_path).map_err(Error::from))?;
        let report: TwoPointReport =
            at("report", serde_json::from_str(&text).map_err(Error::from))?;
        let svg = at("report", crate::plot::two_point_plot_svg(&report))?;
        at("report", std::fs::write(out_dir.join("twopoint.svg"), svg).map_err(Error::from))?;
        written.push("twopoint.svg".to_string());
    }

    if written.is_empty() {
        return Err(StageError {
            stage: "report",
            source: Error::Configuration(format!(
                "no report artifacts (scaling_report.json or twopoint.json) in `{}`; run `sweep` or `stats` first",
                out_dir.display()
            )),
        });
    }
    if !quiet {
        println!("[report] wrote {}", written.join(", "));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_matches_known_vector() {
        // SHA-256 of the empty string, from the FIPS 180 test vectors.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn em_config_carries_burn_in_override() {
        let integrator = IntegratorConfig { delta: 0.02, n_steps: 500, burn_in: Some(100) };
        let em = em_config(&integrator, 9);
        assert_eq!(em.effective_burn_in(), 100);
        assert_eq!(em.seed, 9);
        let defaulted = em_config(&IntegratorConfig { burn_in: None, ..integrator }, 9);
        assert_eq!(defaulted.effective_burn_in(), 50);
    }
}
