//! End-to-end tests of the `ergosde` binary: spawn the compiled
//! executable against small configs in temp directories and check exit
//! codes, error messages, artifact files, and rerun determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ergosde::diffusion::{estimate_diffusion, spectral_error};
use ergosde::io::read_training;
use ergosde::RffEstimator;
use ergosde_cli::pipeline::RunManifest;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ergosde"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name))
        .unwrap_or_else(|e| panic!("artifact `{name}` unreadable: {e}"))
}

/// Small full-pipeline config: coarse OU training run, spectral fit,
/// fine statistics run. Seconds, not minutes.
const STATS_CONFIG: &str = r#"{
    "model": { "name": "ou", "params": { "theta": 1.0, "sigma": 1.4142135623730951 } },
    "integrator": { "delta": 0.05, "n_steps": 4000, "burn_in": 400 },
    "sampling": { "stride": 2 },
    "estimator": { "spectral": { "kernel": { "name": "rbf", "bandwidth": 1.2 }, "order": 5 } },
    "statistics": {
        "observables": [ { "coordinate": 0 }, { "square": 0 } ],
        "max_lag": 5,
        "integrator": { "delta": 0.02, "n_steps": 5000 }
    },
    "seed": 31
}"#;

#[test]
fn minimal_config_applies_integrator_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), include_str!("../../../configs/minimal.json"));
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));

    // Default δ=0.01 and n_steps=100000 show up in the trajectory header.
    let header = read(dir.path(), "trajectory.csv").lines().next().unwrap().to_string();
    assert!(header.contains("delta=1.0000000000000000e-2"), "{header}");
    assert!(header.contains("n=100001"), "{header}");

    let manifest: RunManifest =
        serde_json::from_str(&read(dir.path(), "run_manifest.json")).unwrap();
    assert_eq!(manifest.seed, 7);
    assert_eq!(manifest.artifacts, vec!["trajectory.csv"]);
}

#[test]
fn unknown_config_key_exits_2_and_cites_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"modle": {"name": "ou"}, "seed": 1}"#);
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("modle"), "{}", stderr_of(&out));
}

#[test]
fn negative_feature_count_exits_2_with_range_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "model": { "name": "ou", "params": { "theta": 1.0, "sigma": 1.0 } },
            "estimator": { "rff": { "features": -1, "ridge": 1.0 } },
            "seed": 1
        }"#,
    );
    let out = bin()
        .args(["fit", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("features = -1") && err.contains("out of range"), "{err}");
}

#[test]
fn stats_pipeline_writes_every_manifest_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), STATS_CONFIG);
    let out = bin()
        .args(["stats", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(out.stdout.is_empty(), "--quiet must silence progress lines");

    let manifest: RunManifest =
        serde_json::from_str(&read(dir.path(), "run_manifest.json")).unwrap();
    let expected = [
        "trajectory.csv",
        "training.csv",
        "estimator.json",
        "diffusion.csv",
        "statistics.csv",
        "twopoint.csv",
        "twopoint.json",
    ];
    assert_eq!(manifest.artifacts, expected);
    for name in &manifest.artifacts {
        assert!(dir.path().join(name).is_file(), "missing artifact {name}");
    }
    assert_eq!(manifest.config_sha256.len(), 64);
    assert!(manifest.finished_unix_ms >= manifest.started_unix_ms);

    // Both configured observables appear in the statistics table.
    let stats = read(dir.path(), "statistics.csv");
    assert!(stats.contains("x0,") && stats.contains("x0^2,"), "{stats}");
}

#[test]
fn rerun_with_same_config_is_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let cfg = write_config(dir.path(), STATS_CONFIG);
        let out = bin()
            .args(["stats", "--quiet", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    for name in ["trajectory.csv", "training.csv", "estimator.json", "diffusion.csv", "statistics.csv", "twopoint.csv"] {
        assert_eq!(
            read(dir_a.path(), name),
            read(dir_b.path(), name),
            "artifact `{name}` differs between identical runs"
        );
    }
}

#[test]
fn seed_override_changes_the_run_and_the_manifest() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let text = r#"{
        "model": { "name": "ou", "params": { "theta": 1.0, "sigma": 1.0 } },
        "integrator": { "n_steps": 200 },
        "seed": 5
    }"#;
    for (dir, seed_args) in [(&dir_a, None), (&dir_b, Some(["--seed", "6"]))] {
        let cfg = write_config(dir.path(), text);
        let mut cmd = bin();
        cmd.args(["simulate", "--quiet", "--config"]).arg(&cfg).arg("--out").arg(dir.path());
        if let Some(args) = seed_args {
            cmd.args(args);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    let manifest: RunManifest =
        serde_json::from_str(&read(dir_b.path(), "run_manifest.json")).unwrap();
    assert_eq!(manifest.seed, 6);
    assert_ne!(read(dir_a.path(), "trajectory.csv"), read(dir_b.path(), "trajectory.csv"));
}

#[test]
fn diffusion_benchmark_epsilon_matches_a_library_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "model": { "name": "ou", "params": { "theta": 1.0, "sigma": 1.4142135623730951 } },
            "integrator": { "delta": 0.05, "n_steps": 4000, "burn_in": 400 },
            "sampling": { "stride": 2 },
            "estimator": { "rff": { "features": 16, "ridge": 5.0 } },
            "seed": 13
        }"#,
    );
    let out = bin()
        .args(["diffusion", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));

    // Recompute the estimate from the persisted artifacts; the CSV must
    // carry the bit-identical numbers.
    let ts = read_training(&dir.path().join("training.csv")).unwrap();
    let est = RffEstimator::load(&dir.path().join("estimator.json")).unwrap();
    let recomputed = estimate_diffusion(&ts, |x, out| est.predict_into(x, out)).unwrap();
    // The benchmark row compares against σσᵀ as the model computes it,
    // i.e. the square of the config's sigma — not the exact 2.0 it
    // approximates.
    let sigma = 1.4142135623730951_f64;
    let eps = spectral_error(recomputed.matrix(), &[sigma * sigma], 1).unwrap();

    let csv = read(dir.path(), "diffusion.csv");
    let mut entry = None;
    let mut benchmark_eps = None;
    for line in csv.lines() {
        if let Some(rest) = line.strip_prefix("sigma_squared,0,0,") {
            entry = Some(rest.parse::<f64>().unwrap());
        }
        if let Some(rest) = line.strip_prefix("benchmark_epsilon,,,") {
            benchmark_eps = Some(rest.parse::<f64>().unwrap());
        }
    }
    assert_eq!(entry.unwrap().to_bits(), recomputed.entry(0, 0).to_bits());
    assert_eq!(benchmark_eps.unwrap().to_bits(), eps.to_bits());
}

#[test]
fn sweep_then_report_draws_one_marker_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "model": { "name": "ou", "params": { "theta": 1.0, "sigma": 1.0 } },
            "integrator": { "delta": 0.02, "n_steps": 20000 },
            "statistics": { "observables": [ { "coordinate": 0 } ] },
            "sweep": { "family": "shift", "epsilons": [0.1, 0.2, 0.4], "statistic": "one_point" },
            "seed": 3
        }"#,
    );
    let out = bin()
        .args(["sweep", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert_eq!(read(dir.path(), "sweep.csv").lines().count(), 4, "header + one row per ε");
    assert!(read(dir.path(), "scaling.json").contains("slope"));

    let rep = bin().arg("report").arg("--out").arg(dir.path()).output().unwrap();
    assert!(rep.status.success(), "{}", stderr_of(&rep));
    let svg = read(dir.path(), "scaling.svg");
    assert_eq!(svg.matches("<circle").count(), 3);
    assert!(svg.contains("scaling-report"), "embedded data block missing");
}

#[test]
fn stats_without_estimator_reports_the_benchmark_autocorrelation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "model": { "name": "ou", "params": { "theta": 1.0, "sigma": 1.0 } },
            "integrator": { "delta": 0.02, "n_steps": 5000 },
            "statistics": { "observables": [ { "coordinate": 0 } ], "max_lag": 5 },
            "seed": 11
        }"#,
    );
    let out = bin()
        .args(["stats", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    // No estimator: the model under measurement is the benchmark itself.
    assert!(read(dir.path(), "statistics.csv").starts_with("# model=ou"));
    assert!(!dir.path().join("estimator.json").exists());

    let rep = bin().arg("report").arg("--out").arg(dir.path()).output().unwrap();
    assert!(rep.status.success(), "{}", stderr_of(&rep));
    let svg = read(dir.path(), "twopoint.svg");
    let vertices = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    assert_eq!(vertices.split(' ').count(), 6, "one vertex per lag 0..=5");
}

#[test]
fn diverging_simulation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // δ far above the double-well stability threshold: the cubic term
    // overshoots and the explosion guard trips within a few steps.
    let cfg = write_config(
        dir.path(),
        r#"{
            "model": { "name": "double_well", "params": { "sigma": 1.0 } },
            "integrator": { "delta": 5.0, "n_steps": 1000 },
            "seed": 2
        }"#,
    );
    let out = bin()
        .args(["simulate", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_of(&out).contains("diverged"), "{}", stderr_of(&out));
}

#[test]
fn report_without_artifacts_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("report").arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("no report artifacts"), "{}", stderr_of(&out));
}

#[test]
fn fit_without_estimator_section_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "model": { "name": "ou", "params": { "theta": 1.0, "sigma": 1.0 } },
            "integrator": { "n_steps": 200 },
            "seed": 1
        }"#,
    );
    let out = bin()
        .args(["fit", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("estimator"), "{}", stderr_of(&out));
}

/// The repository's ready-made configs must stay valid as the schema
/// evolves.
#[test]
fn checked_in_configs_parse_and_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(&path).unwrap();
            ergosde_cli::parse_config(&text)
                .unwrap_or_else(|e| panic!("{} does not parse: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5, "expected the experiment config set, found {seen}");
}
