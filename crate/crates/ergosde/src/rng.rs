//! Deterministic random-number plumbing.
//!
//! All randomness in the crate flows from a single 64-bit seed through
//! ChaCha12, a counter-based stream cipher: `stream_rng(seed, k)` returns the
//! k-th of 2^64 independent streams of the same seed, so parallel workers
//! (Monte Carlo paths, sweep runs) can derive non-overlapping generators
//! without coordination.
//!
//! Gaussian variates are produced by the basic Box–Muller transform,
//!
//! ```text
//! z0 = sqrt(-2 ln u1) * cos(2*pi*u2),   z1 = sqrt(-2 ln u1) * sin(2*pi*u2),
//! ```
//!
//! with `u1 ∈ (0,1]`, `u2 ∈ [0,1)` read from the uniform stream. The
//! transform is a fixed arithmetic expression over IEEE-754 doubles, so a
//! given (seed, stream) pair reproduces bit-identical draws on every
//! platform; table-driven samplers make no such guarantee.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Returns the ChaCha12 generator for `(seed, stream)`.
///
/// Streams with the same seed but different indices are independent; the
/// same pair always yields the same sequence.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `u ∈ [0, 1)` with 53 random bits, the full precision of an `f64`.
#[inline]
fn uniform53<R: RngCore>(rng: &mut R) -> f64 {
    // 53 high bits of a u64, scaled by 2^-53.
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Gaussian stream over any uniform generator via Box–Muller.
///
/// Draws are consumed in pairs internally; the second member of each pair is
/// cached so single-draw call sites stay cheap and the consumption order
/// stays deterministic.
#[derive(Debug, Clone)]
pub struct GaussianStream<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> GaussianStream<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    /// Next standard-normal draw.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 ∈ (0, 1]: shift the half-open uniform away from zero so the log
        // is finite; u2 ∈ [0, 1).
        let u1 = 1.0 - uniform53(&mut self.rng);
        let u2 = uniform53(&mut self.rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fills `out` with independent standard-normal draws.
    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for z in out.iter_mut() {
            *z = self.next_gaussian();
        }
    }
}
