//! Subsampled DFT sketches.
//!
//! For stage `i` and branch `j` the sketch holds `V[s_j + k g_i]`,
//! `k = 0..f_i`, where `V` is the `padded_n`-point DFT (kernel
//! `e^{-j 2 pi n k / N}`, no normalization) of the zero-padded signal.
//!
//! Those values come from folding: modulate by `e^{-j 2 pi s_j n / N}`, cut
//! into `g_i` segments of length `f_i`, add the segments, then take an
//! `f_i`-point FFT. A signal with `M` non-zeros folds in `O(M)`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::params::StagePlan;
use crate::signal::{reversed_support, Signal};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SketchKind {
    Database,
    Query,
}

/// How `sketch_signal` computes the branches. Both give the same values up to
/// rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SketchMethod {
    /// Fold for sparse or short signals, one full FFT otherwise.
    #[default]
    Auto,
    Fold,
    /// One `padded_n`-point FFT, then gather. Only sensible offline.
    FullTransform,
}

/// Per-(stage, branch) frequency samples of one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    pub plan: StagePlan,
    pub kind: SketchKind,
    /// Stage-major, shift-minor; each entry has `f_i` values in sampling-set
    /// order.
    branches: Vec<Vec<Complex64>>,
}

impl Sketch {
    pub fn from_branches(
        plan: StagePlan,
        kind: SketchKind,
        branches: Vec<Vec<Complex64>>,
    ) -> Result<Self> {
        if branches.len() != plan.d * plan.b_shifts {
            return Err(Error::PlanMismatch(format!(
                "expected {} branches, got {}",
                plan.d * plan.b_shifts,
                branches.len()
            )));
        }
        for (idx, b) in branches.iter().enumerate() {
            let f = plan.stage_lengths[idx / plan.b_shifts];
            if b.len() != f {
                return Err(Error::PlanMismatch(format!(
                    "branch {idx} has {} samples, stage length is {f}",
                    b.len()
                )));
            }
        }
        Ok(Self { plan, kind, branches })
    }

    pub fn branch(&self, stage: usize, shift: usize) -> &[Complex64] {
        &self.branches[stage * self.plan.b_shifts + shift]
    }

    pub fn branches(&self) -> &[Vec<Complex64>] {
        &self.branches
    }

    /// Number of stored complex samples.
    pub fn sample_count(&self) -> usize {
        self.branches.iter().map(Vec::len).sum()
    }

    /// `mean |V|^2 / padded_n` over all samples, an estimate of the per-symbol
    /// power of the zero-padded signal.
    pub fn mean_power(&self) -> f64 {
        let total: f64 = self.branches.iter().flatten().map(|c| c.norm_sqr()).sum();
        total / (self.sample_count() as f64 * self.plan.padded_n as f64)
    }
}

/// `S_{i,j} = { s_j + k g_i mod padded_n : k in [f_i] }`.
pub fn sampling_set(plan: &StagePlan, stage: usize, shift: usize) -> Vec<usize> {
    let f = plan.stage_lengths[stage];
    let g = plan.downsample_factors[stage];
    let s = plan.shifts[shift];
    (0..f).map(|k| (s + k * g) % plan.padded_n).collect()
}

/// `e^{sign j 2 pi (a b mod n) / n}` with exact integer reduction.
#[inline]
pub(crate) fn root_of_unity(a: usize, b: usize, n: usize, sign: f64) -> Complex64 {
    let idx = ((a as u128 * b as u128) % n as u128) as f64;
    Complex64::from_polar(1.0, sign * 2.0 * PI * idx / n as f64)
}

/// Folds the modulated signal `v[n] e^{-j 2 pi s n / N}` (with `N = v.len()`)
/// into `f` bins: `out[l] = sum_m v[m f + l] w^{m f + l}`. Zero samples are
/// skipped.
pub fn fold_modulate(v: &[f64], f: usize, shift: usize) -> Result<Vec<Complex64>> {
    let n = v.len();
    fold_modulate_sparse(
        v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, &x)| (i, x)),
        n,
        f,
        shift,
    )
}

/// [`fold_modulate`] over explicit `(index, value)` entries of a length
/// `padded_n` signal.
pub fn fold_modulate_sparse<I>(
    entries: I,
    padded_n: usize,
    f: usize,
    shift: usize,
) -> Result<Vec<Complex64>>
where
    I: IntoIterator<Item = (usize, f64)>,
{
    if f == 0 || !padded_n.is_multiple_of(f) {
        return Err(Error::InvalidInput(format!(
            "fold length {f} does not divide signal length {padded_n}"
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); f];
    let mut visited = 0u64;
    for (n, x) in entries {
        out[n % f] += root_of_unity(shift, n, padded_n, -1.0) * x;
        visited += 1;
    }
    stats::add_fold_muladds(visited);
    Ok(out)
}

/// Sketch of `v` (length at most `padded_n`, zero-padded) on the plan's
/// sampling sets.
pub fn sketch_signal(v: &Signal, plan: &StagePlan, kind: SketchKind) -> Result<Sketch> {
    sketch_signal_with(v, plan, kind, SketchMethod::Auto)
}

pub fn sketch_signal_with(
    v: &Signal,
    plan: &StagePlan,
    kind: SketchKind,
    method: SketchMethod,
) -> Result<Sketch> {
    if v.len() > plan.padded_n {
        return Err(Error::InvalidInput(format!(
            "signal length {} exceeds padded length {}",
            v.len(),
            plan.padded_n
        )));
    }
    if kind == SketchKind::Database {
        stats::add_db_reads(v.len() as u64);
    }
    let method = match method {
        SketchMethod::Auto => {
            let nnz = v.samples().iter().filter(|x| **x != 0.0).count() as f64;
            let fold_cost = nnz * (plan.d * plan.b_shifts) as f64;
            let n = plan.padded_n as f64;
            if fold_cost <= 4.0 * n * n.log2().max(1.0) {
                SketchMethod::Fold
            } else {
                SketchMethod::FullTransform
            }
        }
        m => m,
    };
    let branches = match method {
        SketchMethod::FullTransform => full_transform_branches(v.samples(), plan),
        _ => {
            let entries: Vec<(usize, f64)> = v
                .samples()
                .iter()
                .enumerate()
                .filter(|(_, x)| **x != 0.0)
                .map(|(i, &x)| (i, x))
                .collect();
            fold_branches(&entries, plan)?
        }
    };
    Sketch::from_branches(plan.clone(), kind, branches)
}

/// Sketch of the reversed query `y'[n] = y[-n]` without building the padded
/// vector: `O(M)` folding per branch.
pub fn sketch_query(y: &Signal, plan: &StagePlan) -> Result<Sketch> {
    if y.len() > plan.padded_n {
        return Err(Error::InvalidInput(format!(
            "query length {} exceeds padded length {}",
            y.len(),
            plan.padded_n
        )));
    }
    let entries: Vec<(usize, f64)> =
        reversed_support(y, plan.padded_n).filter(|(_, v)| *v != 0.0).collect();
    let branches = fold_branches(&entries, plan)?;
    Sketch::from_branches(plan.clone(), SketchKind::Query, branches)
}

fn fold_branches(entries: &[(usize, f64)], plan: &StagePlan) -> Result<Vec<Vec<Complex64>>> {
    let mut planner = FftPlanner::<f64>::new();
    let mut out = Vec::with_capacity(plan.d * plan.b_shifts);
    for &f in &plan.stage_lengths {
        let fft: Arc<dyn Fft<f64>> = planner.plan_fft_forward(f);
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for &s in &plan.shifts {
            let mut folded =
                fold_modulate_sparse(entries.iter().copied(), plan.padded_n, f, s)?;
            fft.process_with_scratch(&mut folded, &mut scratch);
            stats::add_fft_points(f as u64);
            out.push(folded);
        }
    }
    Ok(out)
}

fn full_transform_branches(v: &[f64], plan: &StagePlan) -> Vec<Vec<Complex64>> {
    let n = plan.padded_n;
    let mut spectrum: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    spectrum.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut spectrum);
    let mut out = Vec::with_capacity(plan.d * plan.b_shifts);
    for stage in 0..plan.d {
        for shift in 0..plan.b_shifts {
            out.push(sampling_set(plan, stage, shift).into_iter().map(|k| spectrum[k]).collect());
        }
    }
    out
}

/// Brute-force reference: the `padded_n`-point DFT of `v` evaluated on
/// `S_{stage, shift}`, `O(padded_n f_i)` with a twiddle table.
pub fn direct_subsampled_dft(
    v: &[f64],
    plan: &StagePlan,
    stage: usize,
    shift: usize,
) -> Vec<Complex64> {
    let n = plan.padded_n;
    let table: Vec<Complex64> =
        (0..n).map(|t| Complex64::from_polar(1.0, -2.0 * PI * t as f64 / n as f64)).collect();
    sampling_set(plan, stage, shift)
        .into_iter()
        .map(|k| {
            let mut idx = 0usize;
            let mut acc = Complex64::new(0.0, 0.0);
            for &x in v {
                acc += table[idx] * x;
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ProblemDims, StageLayout};
    use crate::signal::reverse_conjugate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plan(n: usize, lengths: &[usize], shifts: &[usize]) -> StagePlan {
        let dims = ProblemDims::exact(n, 1).unwrap();
        StagePlan::from_parts(
            dims,
            n,
            lengths.to_vec(),
            shifts.to_vec(),
            2.0,
            0,
            StageLayout::CoprimeLengths,
        )
        .unwrap()
    }

    fn random_real(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Plain `O(N^2)` DFT, independent of the sketch code path.
    fn naive_dft(v: &[f64]) -> Vec<Complex64> {
        let n = v.len();
        (0..n)
            .map(|k| {
                v.iter()
                    .enumerate()
                    .map(|(t, &x)| {
                        let ph = -2.0 * PI * ((t * k) % n) as f64 / n as f64;
                        Complex64::new(ph.cos(), ph.sin()) * x
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn sampling_sets_on_six() {
        let p = plan(6, &[2, 3], &[0, 1]);
        assert_eq!(sampling_set(&p, 0, 0), vec![0, 3]);
        assert_eq!(sampling_set(&p, 1, 0), vec![0, 2, 4]);
        assert_eq!(sampling_set(&p, 0, 1), vec![1, 4]);
    }

    #[test]
    fn fold_without_shift_is_aliasing() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let out = fold_modulate(&v, 2, 0).unwrap();
        assert_eq!(out, vec![Complex64::new(9.0, 0.0), Complex64::new(12.0, 0.0)]);
        let zeros = fold_modulate(&[0.0; 6], 3, 4).unwrap();
        assert!(zeros.iter().all(|c| c.norm() == 0.0));
        assert!(fold_modulate(&v, 4, 0).is_err());
    }

    #[test]
    fn fold_dft_identity_twelve() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let v = random_real(12, &mut rng);
        let full = naive_dft(&v);
        let mut folded = fold_modulate(&v, 4, 5).unwrap();
        FftPlanner::<f64>::new().plan_fft_forward(4).process(&mut folded);
        for (k, c) in folded.iter().enumerate() {
            assert!((c - full[(5 + 3 * k) % 12]).norm() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn impulse_sketch_is_all_ones() {
        let p = plan(30, &[5, 6], &[0, 7, 13]);
        let mut v = vec![0.0; 30];
        v[0] = 1.0;
        for method in [SketchMethod::Fold, SketchMethod::FullTransform] {
            let s = sketch_signal_with(&Signal::real(v.clone()), &p, SketchKind::Database, method)
                .unwrap();
            for b in s.branches() {
                assert!(b.iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-12));
            }
        }
    }

    #[test]
    fn two_impulses_alternate() {
        let p = plan(12, &[3, 4], &[0, 1, 2]);
        let mut v = vec![0.0; 12];
        v[0] = 1.0;
        v[6] = 1.0;
        for stage in 0..2 {
            for shift in 0..3 {
                let set = sampling_set(&p, stage, shift);
                let d = direct_subsampled_dft(&v, &p, stage, shift);
                for (k, c) in set.iter().zip(&d) {
                    let expect = if k % 2 == 0 { 2.0 } else { 0.0 };
                    assert!((c - Complex64::new(expect, 0.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sketch_matches_naive_dft_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (n, lengths) in [(6usize, vec![2, 3]), (12, vec![3, 4]), (30, vec![5, 6])] {
            let shifts: Vec<usize> = (0..n).collect();
            let p = plan(n, &lengths, &shifts);
            for _ in 0..5 {
                let v = random_real(n, &mut rng);
                let full = naive_dft(&v);
                let s = sketch_signal_with(&Signal::real(v), &p, SketchKind::Query, SketchMethod::Fold)
                    .unwrap();
                for stage in 0..p.d {
                    for shift in 0..p.b_shifts {
                        for (c, k) in s.branch(stage, shift).iter().zip(sampling_set(&p, stage, shift)) {
                            assert!((c - full[k]).norm() < 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn query_sketch_equals_sketch_of_reversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = plan(2310, &[154, 165, 210], &[0, 17, 999, 2000]);
        let y = Signal::random_binary(40, &mut rng);
        let a = sketch_query(&y, &p).unwrap();
        let rev = reverse_conjugate(&y, 2310).unwrap();
        let b = sketch_signal_with(&rev, &p, SketchKind::Query, SketchMethod::FullTransform).unwrap();
        for (x, z) in a.branches().iter().flatten().zip(b.branches().iter().flatten()) {
            assert!((x - z).norm() < 1e-8);
        }
    }

    #[test]
    fn query_fold_cost_is_linear_in_m() {
        let p = plan(2310, &[154, 165, 210], &[0, 5, 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = Signal::random_binary(50, &mut rng);
        stats::reset();
        sketch_query(&y, &p).unwrap();
        let c = stats::snapshot();
        assert_eq!(c.fold_muladds, (50 * p.d * p.b_shifts) as u64);
        assert_eq!(c.db_sample_reads, 0);
        assert_eq!(c.fft_points, (p.b_shifts * (154 + 165 + 210)) as u64);
    }

    #[test]
    fn mean_power_of_binary_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = plan(2310, &[154, 165, 210], &(0..20).map(|s| s * 7).collect::<Vec<_>>());
        let x = Signal::random_binary(2310, &mut rng);
        let s = sketch_signal(&x, &p, SketchKind::Database).unwrap();
        assert!((s.mean_power() - 1.0).abs() < 0.15, "{}", s.mean_power());
    }
}
