//! Shared helpers for the integration and acceptance tests.
#![allow(dead_code)]

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use sparsematch::signal::{plant_matches, MatchSpec};
use sparsematch::Signal;

/// Linear cross-correlation `r[m] = sum_i x[m + i] y[i]` for every window
/// start `m in [0, N - M]`, through one dense FFT of length `N + M`.
pub fn fft_correlation(x: &Signal, y: &Signal) -> Vec<f64> {
    let (n, m) = (x.len(), y.len());
    let len = n + m;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut a: Vec<Complex64> = x.samples().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(len, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = y.samples().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(len, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    let mut c: Vec<Complex64> = a.iter().zip(&b).map(|(p, q)| p * q.conj()).collect();
    inv.process(&mut c);
    c[..=n - m].iter().map(|v| (v.re / len as f64).round()).collect()
}

/// Window starts within Hamming distance `k` of the ±1 query.
pub fn hamming_oracle(x: &Signal, y: &Signal, k: usize) -> Vec<usize> {
    let m = y.len() as f64;
    fft_correlation(x, y)
        .iter()
        .enumerate()
        .filter(|(_, &r)| r >= m - 2.0 * k as f64)
        .map(|(p, _)| p)
        .collect()
}

/// A random planted instance with `l` matches and `flips` flipped symbols each.
pub fn instance(n: usize, m: usize, l: usize, flips: usize, seed: u64) -> (Signal, Signal, MatchSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_0000);
    let spec = MatchSpec::random(n, m, l, flips, &mut rng).unwrap();
    let (x, y) = plant_matches(n, m, &spec, seed).unwrap();
    (x, y, spec)
}
