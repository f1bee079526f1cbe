//! Shared oracles for the integration suites.
//!
//! Everything here is deterministic given its seed arguments, so the suites
//! can pin tolerances against values that never drift between runs.
#![allow(dead_code)]

use ergosde::rng::{stream_rng, GaussianStream};
use ergosde::sde::{finite_difference_labels, ou_model, simulate, subsample, EmConfig, TrainingSet};

/// RMS gap at time `T = 1` between the Euler–Maruyama chain and the exact
/// OU transition driven by the *same* Gaussian increments.
///
/// The exact chain uses the closed-form conditional law
/// `X(t+δ) = e^{-θδ}·X(t) + √((1 - e^{-2θδ})·σ²/(2θ))·ξ`, so each path pair
/// differs only through the integrator, not the noise. Path `p` draws from
/// stream `(seed, p)`; both chains start at `x₀ = 1`.
pub fn ou_strong_rms_error(theta: f64, sigma: f64, delta: f64, n_paths: usize, seed: u64) -> f64 {
    let n_steps = (1.0 / delta).round() as usize;
    let em_decay = 1.0 - theta * delta;
    let em_noise = delta.sqrt() * sigma;
    let exact_decay = (-theta * delta).exp();
    let exact_noise = ((1.0 - (-2.0 * theta * delta).exp()) * sigma * sigma / (2.0 * theta)).sqrt();

    let mut sum_sq = 0.0;
    for p in 0..n_paths {
        let mut gauss = GaussianStream::new(stream_rng(seed, p as u64));
        let mut x_em = 1.0;
        let mut x_exact = 1.0;
        for _ in 0..n_steps {
            let xi = gauss.next_gaussian();
            x_em = em_decay * x_em + em_noise * xi;
            x_exact = exact_decay * x_exact + exact_noise * xi;
        }
        let gap = x_em - x_exact;
        sum_sq += gap * gap;
    }
    (sum_sq / n_paths as f64).sqrt()
}

/// OU training data: a long path at step `delta`, finite-difference labels,
/// then a strided subsample of `n_samples` rows after `burn_in` steps.
pub fn ou_training_set(
    theta: f64,
    sigma: f64,
    delta: f64,
    n_samples: usize,
    stride: usize,
    burn_in: usize,
    seed: u64,
) -> TrainingSet {
    let model = ou_model(theta, sigma).expect("valid OU parameters");
    let cfg = EmConfig::new(delta, burn_in + n_samples * stride, seed).with_burn_in(burn_in);
    let traj = simulate(&model, &[0.0], &cfg).expect("OU path stays finite");
    let ts = finite_difference_labels(&traj).expect("labels from a simulated path");
    let mut ts = subsample(&ts, stride, burn_in).expect("subsample fits the path");
    ts.truncate(n_samples);
    assert_eq!(ts.len(), n_samples, "requested sample count must be exact");
    ts
}

/// RMS of `predict - truth` over an equispaced grid on `[lo, hi]`.
pub fn grid_rms_error(
    predict: impl Fn(f64) -> f64,
    truth: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let e = predict(x) - truth(x);
        acc += e * e;
    }
    (acc / n as f64).sqrt()
}

/// Lag-`k` sample autocorrelation of a scalar series.
pub fn autocorrelation(series: &[f64], lag: usize) -> f64 {
    assert!(lag < series.len(), "lag exceeds series length");
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let c = series[i] - mean;
        den += c * c;
        if i + lag < n {
            num += c * (series[i + lag] - mean);
        }
    }
    num / den
}
