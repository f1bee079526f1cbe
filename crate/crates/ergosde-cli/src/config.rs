//! Experiment configuration: the JSON schema every subcommand consumes.
//!
//! A config file is a single JSON object. Only `model` and `seed` are
//! required; every other section has defaults:
//!
//! ```json
//! {
//!   "model":      { "name": "ou", "params": { "theta": 1.0, "sigma": 1.4142135623730951 } },
//!   "integrator": { "delta": 0.01, "n_steps": 100000, "burn_in": null },
//!   "sampling":   { "stride": 1, "max_samples": null },
//!   "estimator":  { "spectral": { "kernel": { "name": "rbf", "bandwidth": 1.4 }, "order": 6 } },
//!   "statistics": { "observables": [ { "square": 0 } ], "max_lag": 50, "integrator": null },
//!   "sweep":      { "family": "shift", "epsilons": [0.02, 0.04], "statistic": "one_point", "max_lag": 0 },
//!   "seed": 7,
//!   "out_dir": "runs/example"
//! }
//! ```
//!
//! Unknown keys are rejected everywhere with an error naming the key, so
//! a typo cannot silently fall back to a default. Count-valued fields
//! that a fit consumes (`order`, `features`) are parsed as signed
//! integers and range-checked, so `-1` produces a range error rather
//! than a type error.
//!
//! All randomness in a run derives from the single top-level `seed`:
//! the primary simulation uses it directly, feature sampling uses
//! `seed + 1`, and the statistics-stage simulation uses `seed + 2`, so
//! two runs with the same config are bit-identical and the statistics
//! trajectory is never the training trajectory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ergosde::sde::make_benchmark_model;
use ergosde::stats::Observable;
use ergosde::{Error, ExtensionMode, Kernel, Result, SdeModel};

/// Step size used when the `integrator` section is omitted.
pub const DEFAULT_DELTA: f64 = 0.01;
/// Step count used when the `integrator` section is omitted.
pub const DEFAULT_N_STEPS: usize = 100_000;

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_n_steps() -> usize {
    DEFAULT_N_STEPS
}

fn default_stride() -> usize {
    1
}

/// Top-level experiment description; see the module docs for the full
/// JSON layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default)]
    pub statistics: StatisticsConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
}

/// Benchmark model selection: a catalog name plus its named constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// Time step, horizon, and burn-in of an Euler–Maruyama run. `burn_in`
/// of `null` means the integrator default of 10% of the steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub burn_in: Option<usize>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { delta: DEFAULT_DELTA, n_steps: DEFAULT_N_STEPS, burn_in: None }
    }
}

/// Thinning applied to the finite-difference training pairs: keep every
/// `stride`-th post-burn-in pair, then at most `max_samples` of those.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub max_samples: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { stride: 1, max_samples: None }
    }
}

/// Drift-estimator choice, externally tagged:
/// `{"spectral": {...}}` or `{"rff": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorConfig {
    Spectral(SpectralConfig),
    Rff(RffConfig),
}

/// Kernel-spectral estimator: eigensystem of `kernel` truncated at
/// `order` modes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    pub kernel: KernelConfig,
    pub order: i64,
}

/// Random-feature estimator: `features` ReLU features on the ball of
/// radius `d_radius` (default: 1.05 × the largest training-sample norm),
/// ridge-regularized least squares, and the configured out-of-ball
/// extension (default `"hard_zero"`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RffConfig {
    pub features: i64,
    pub ridge: f64,
    #[serde(default)]
    pub d_radius: Option<f64>,
    #[serde(default)]
    pub extension: Option<ExtensionChoice>,
}

/// Kernel catalog entry: `constant` and `poly1` take no bandwidth,
/// `rbf` requires one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub name: String,
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

impl KernelConfig {
    pub fn to_kernel(&self) -> Result<Kernel> {
        match (self.name.as_str(), self.bandwidth) {
            ("constant", None) => Ok(Kernel::constant()),
            ("poly1", None) => Ok(Kernel::poly1()),
            ("rbf", Some(b)) if b > 0.0 && b.is_finite() => Ok(Kernel::rbf(b)),
            ("rbf", Some(b)) => Err(Error::Configuration(format!(
                "kernel.bandwidth = {b} is out of range (expected a positive number)"
            ))),
            ("rbf", None) => {
                Err(Error::Configuration("kernel `rbf` requires a bandwidth".into()))
            }
            ("constant" | "poly1", Some(_)) => Err(Error::Configuration(format!(
                "kernel `{}` takes no bandwidth",
                self.name
            ))),
            (other, _) => Err(Error::Configuration(format!(
                "unknown kernel `{other}` (known: constant, poly1, rbf)"
            ))),
        }
    }
}

/// Out-of-ball behavior of a fitted random-feature drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionChoice {
    HardZero,
    Boundary,
}

impl From<ExtensionChoice> for ExtensionMode {
    fn from(choice: ExtensionChoice) -> Self {
        match choice {
            ExtensionChoice::HardZero => ExtensionMode::HardZero,
            ExtensionChoice::Boundary => ExtensionMode::Boundary,
        }
    }
}

/// Which invariant statistics to report. `observables` are monomials in
/// the state, externally tagged: `{"coordinate": k}`, `{"square": k}`,
/// or `{"product": [j, k]}`. A `max_lag > 0` adds an autocorrelation
/// report of the first observable; cross-moments are available as
/// `product` observables. The optional `integrator` overrides the main
/// one for the statistics-stage simulation, so a model can be fitted
/// from coarse data and its statistics still measured on a fine grid.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticsConfig {
    #[serde(default)]
    pub observables: Vec<ObservableConfig>,
    #[serde(default)]
    pub max_lag: usize,
    #[serde(default)]
    pub integrator: Option<IntegratorConfig>,
}

/// Monomial observable selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableConfig {
    Coordinate(usize),
    Square(usize),
    Product([usize; 2]),
}

impl ObservableConfig {
    pub fn to_observable(&self) -> Observable {
        match *self {
            ObservableConfig::Coordinate(k) => Observable::coordinate(k),
            ObservableConfig::Square(k) => Observable::square(k),
            ObservableConfig::Product([j, k]) => Observable::product(j, k),
        }
    }

    /// Largest coordinate index the observable reads.
    fn max_index(&self) -> usize {
        match *self {
            ObservableConfig::Coordinate(k) | ObservableConfig::Square(k) => k,
            ObservableConfig::Product([j, k]) => j.max(k),
        }
    }
}

/// Perturbation-response sweep over a one-parameter model family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub family: FamilyChoice,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub statistic: SweepStatistic,
    #[serde(default)]
    pub max_lag: usize,
}

/// Family catalog: `shift` adds `ε` to the first drift coordinate,
/// `damping` scales the whole drift by `1 + ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyChoice {
    Shift,
    Damping,
}

/// Whether the sweep compares stationary averages or lagged
/// correlations between the perturbed and unperturbed models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStatistic {
    #[default]
    OnePoint,
    TwoPoint,
}

impl ExperimentConfig {
    /// Builds the configured benchmark model, resolving the catalog name
    /// and its parameters.
    pub fn build_model(&self) -> Result<SdeModel> {
        make_benchmark_model(&self.model.name, &self.model.params)
    }

    /// Checks every cross-field constraint the serde layer cannot: value
    /// ranges, catalog names, and observable indices against the model
    /// dimension.
    pub fn validate(&self) -> Result<()> {
        let model = self.build_model()?;
        check_integrator(&self.integrator, "integrator")?;
        if self.sampling.stride == 0 {
            return Err(Error::Configuration(
                "sampling.stride = 0 is out of range (expected an integer ≥ 1)".into(),
            ));
        }
        if let Some(est) = &self.estimator {
            check_estimator(est)?;
        }
        check_statistics(&self.statistics, model.dim())?;
        if let Some(sweep) = &self.sweep {
            check_sweep(sweep, &self.statistics)?;
        }
        Ok(())
    }
}

fn check_integrator(cfg: &IntegratorConfig, section: &str) -> Result<()> {
    if !(cfg.delta > 0.0 && cfg.delta.is_finite()) {
        return Err(Error::Configuration(format!(
            "{section}.delta = {} is out of range (expected a positive number)",
            cfg.delta
        )));
    }
    if cfg.n_steps == 0 {
        return Err(Error::Configuration(format!(
            "{section}.n_steps = 0 is out of range (expected an integer ≥ 1)"
        )));
    }
    if let Some(burn) = cfg.burn_in {
        if burn >= cfg.n_steps {
            return Err(Error::Configuration(format!(
                "{section}.burn_in = {burn} must be smaller than n_steps = {}",
                cfg.n_steps
            )));
        }
    }
    Ok(())
}

fn check_estimator(est: &EstimatorConfig) -> Result<()> {
    match est {
        EstimatorConfig::Spectral(spec) => {
            spec.kernel.to_kernel()?;
            if spec.order < 1 {
                return Err(Error::Configuration(format!(
                    "estimator.order = {} is out of range (expected an integer ≥ 1)",
                    spec.order
                )));
            }
        }
        EstimatorConfig::Rff(rff) => {
            if rff.features < 1 {
                return Err(Error::Configuration(format!(
                    "estimator.features = {} is out of range (expected an integer ≥ 1)",
                    rff.features
                )));
            }
            if !(rff.ridge >= 0.0 && rff.ridge.is_finite()) {
                return Err(Error::Configuration(format!(
                    "estimator.ridge = {} is out of range (expected a number ≥ 0)",
                    rff.ridge
                )));
            }
            if let Some(d) = rff.d_radius {
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::Configuration(format!(
                        "estimator.d_radius = {d} is out of range (expected a positive number)"
                    )));
                }
            }
        }
    }
    Ok(())
}

fn check_statistics(stats: &StatisticsConfig, dim: usize) -> Result<()> {
    for obs in &stats.observables {
        if obs.max_index() >= dim {
            return Err(Error::Configuration(format!(
                "observable index {} is out of range for a {dim}-dimensional model",
                obs.max_index()
            )));
        }
    }
    if stats.max_lag > 0 && stats.observables.is_empty() {
        return Err(Error::Configuration(
            "statistics.max_lag > 0 requires at least one observable".into(),
        ));
    }
    if let Some(integrator) = &stats.integrator {
        check_integrator(integrator, "statistics.integrator")?;
    }
    Ok(())
}

fn check_sweep(sweep: &SweepConfig, stats: &StatisticsConfig) -> Result<()> {
    if sweep.epsilons.is_empty() {
        return Err(Error::Configuration("sweep.epsilons must not be empty".into()));
    }
    for &eps in &sweep.epsilons {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Configuration(format!(
                "sweep.epsilons entry {eps} is out of range (expected a positive number)"
            )));
        }
    }
    if stats.observables.is_empty() {
        return Err(Error::Configuration(
            "a sweep requires at least one observable in `statistics.observables`".into(),
        ));
    }
    Ok(())
}

/// Parses and validates a config from JSON text. Serde-level problems
/// (unknown keys, wrong types, missing fields) surface as configuration
/// errors carrying serde's message, which names the offending key.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| Error::Configuration(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses, and validates a config file, returning the raw bytes
/// alongside for manifest hashing.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| {
        Error::Configuration(format!("cannot read config `{}`: {e}", path.display()))
    })?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| Error::Configuration(format!("config `{}` is not UTF-8", path.display())))?;
    let cfg = parse_config(text)?;
    Ok((cfg, bytes))
}
