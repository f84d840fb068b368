//! Bin formation, classification and the peeling decoder.
//!
//! Multiplying the database and query sketches on a sampling set and taking
//! an `f_i`-point transform yields, for every bin `k` of stage `i`,
//!
//! ```text
//! z_{i,k}[j] = sum_m r[k + m f_i] e^{+j 2 pi (k + m f_i) s_j / N}
//! ```
//!
//! so each bin observes the correlation lags `p = k (mod f_i)` through the
//! sensing columns `w^p[j] = e^{+j 2 pi p s_j / N}`. Matches are the few lags
//! where `r` is close to `M`. A bin holding exactly one of them is a singleton
//! and reveals its lag by an argmax over the `g_i` candidate columns; peeling
//! subtracts that lag from its bins in the other stages and repeats.
//!
//! Two classifiers are available. [`Classifier::ZeroShift`] thresholds the
//! real part of the zero-shift observation only. [`Classifier::Matched`] (the
//! default) uses all `B` observations: it removes the expected noise energy,
//! then explains the bin with up to two sensing columns. At moderate `N` the
//! zero-shift statistic carries noise of order `sqrt(g M)`, which is
//! comparable to `M`, while the matched statistic averages that down by `B`.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::params::{Mode, ProblemDims, StagePlan};
use crate::signal::Signal;
use crate::sketch::{root_of_unity, sketch_query, Sketch, SketchKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinState {
    ZeroTon,
    Singleton,
    DoubleTon,
    MultiTon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinObservation {
    pub stage: usize,
    pub bin: usize,
    /// One observation per branch; `z[0]` is the zero-shift branch.
    pub z: Vec<Complex64>,
    pub state: BinState,
    /// State after the first classification pass, never updated by peeling.
    pub original_state: BinState,
}

impl BinObservation {
    pub fn new(stage: usize, bin: usize, z: Vec<Complex64>) -> Self {
        Self { stage, bin, z, state: BinState::ZeroTon, original_state: BinState::ZeroTon }
    }
}

/// `w[b] = e^{+j 2 pi p s_b / N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingColumn {
    pub position: usize,
    pub w: Vec<Complex64>,
}

impl SensingColumn {
    pub fn new(plan: &StagePlan, position: usize) -> Self {
        let w = plan
            .shifts
            .iter()
            .map(|&s| root_of_unity(position, s, plan.padded_n, 1.0))
            .collect();
        Self { position, w }
    }
}

/// Classification thresholds `((1-2 eta)/2, (3-4 eta)/2, (5-6 eta)/2)` in
/// units of `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub gamma: [f64; 3],
}

impl Thresholds {
    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..1.0 / 6.0).contains(&eta) {
            return Err(Error::InvalidDimensions(format!(
                "mismatch fraction {eta} must lie in [0, 1/6)"
            )));
        }
        Ok(Self {
            gamma: [(1.0 - 2.0 * eta) / 2.0, (3.0 - 4.0 * eta) / 2.0, (5.0 - 6.0 * eta) / 2.0],
        })
    }

    /// State for a normalized amplitude `value / M`.
    pub fn state_of(&self, ratio: f64) -> BinState {
        let [g1, g2, g3] = self.gamma;
        if ratio < g1 {
            BinState::ZeroTon
        } else if ratio < g2 {
            BinState::Singleton
        } else if ratio < g3 {
            BinState::DoubleTon
        } else {
            BinState::MultiTon
        }
    }
}

/// Zero-shift classification: thresholds on `Re(z[0]) / M`.
pub fn classify_bin(bin: &BinObservation, m_query: usize, eta: f64) -> Result<BinState> {
    let th = Thresholds::new(eta)?;
    let z0 = bin.z.first().map_or(0.0, |c| c.re);
    Ok(th.state_of(z0 / m_query as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Classifier {
    ZeroShift,
    #[default]
    Matched,
}

/// Which bins receive a decoded lag's contribution in approximate mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PeelRule {
    /// Bins whose first classification was singleton or double-ton.
    #[default]
    OriginalState,
    /// Bins currently classified singleton or double-ton.
    CurrentState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub classifier: Classifier,
    pub peel_rule: PeelRule,
    /// Defaults to `padded_n`.
    pub max_iterations: Option<usize>,
    /// Variance of one non-matching correlation lag. Estimated from the
    /// sketches when absent.
    pub lag_noise: Option<f64>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            classifier: Classifier::Matched,
            peel_rule: PeelRule::OriginalState,
            max_iterations: None,
            lag_noise: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub classifications: u64,
    pub peels: u64,
    /// Singleton decodes that landed on an already recovered position.
    pub duplicates: u64,
    /// Recovered lags outside `[0, n_db - M]`.
    pub filtered: u64,
    pub iteration_cap_hit: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchReport {
    pub positions: Vec<usize>,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub unresolved_bins: usize,
    pub diagnostics: Diagnostics,
}

impl MatchReport {
    /// Sorts by position and drops repeated positions, keeping the first.
    pub(crate) fn normalize(&mut self) {
        let mut pairs: Vec<(usize, f64)> =
            self.positions.iter().copied().zip(self.values.iter().copied()).collect();
        pairs.sort_by_key(|p| p.0);
        pairs.dedup_by_key(|p| p.0);
        (self.positions, self.values) = pairs.into_iter().unzip();
    }
}

fn check_same_plan(a: &StagePlan, b: &StagePlan) -> Result<()> {
    if a.padded_n != b.padded_n || a.stage_lengths != b.stage_lengths || a.shifts != b.shifts {
        return Err(Error::PlanMismatch(
            "database and query sketches use different sampling sets".into(),
        ));
    }
    Ok(())
}

/// Aliased correlation bins from a database sketch and a query sketch.
pub fn form_bins(xs: &Sketch, ys: &Sketch) -> Result<Vec<BinObservation>> {
    check_same_plan(&xs.plan, &ys.plan)?;
    if xs.kind != SketchKind::Database || ys.kind != SketchKind::Query {
        return Err(Error::PlanMismatch("expected a database and a query sketch".into()));
    }
    let plan = &xs.plan;
    let b = plan.b_shifts;
    let mut planner = FftPlanner::<f64>::new();
    let ffts: Vec<Arc<dyn Fft<f64>>> =
        plan.stage_lengths.iter().map(|&f| planner.plan_fft_forward(f)).collect();

    // z = (1/f) FFT_f(conj(X Y')) per branch, since the lags are real.
    let branch_bins: Vec<Vec<Complex64>> = (0..plan.d * b)
        .into_par_iter()
        .map(|idx| {
            let (stage, shift) = (idx / b, idx % b);
            let f = plan.stage_lengths[stage];
            let mut buf: Vec<Complex64> = xs
                .branch(stage, shift)
                .iter()
                .zip(ys.branch(stage, shift))
                .map(|(x, y)| (x * y).conj() / f as f64)
                .collect();
            ffts[stage].process(&mut buf);
            buf
        })
        .collect();

    let mut bins = Vec::with_capacity(plan.stage_lengths.iter().sum());
    for (stage, &f) in plan.stage_lengths.iter().enumerate() {
        let rows = &branch_bins[stage * b..(stage + 1) * b];
        for k in 0..f {
            let z = rows.iter().map(|row| row[k]).collect();
            bins.push(BinObservation::new(stage, k, z));
        }
    }
    Ok(bins)
}

/// Bins computed straight from a sparse list of correlation lags, without
/// any transform. Used to inject synthetic correlations.
pub fn bins_from_lags(plan: &StagePlan, lags: &[(usize, f64)]) -> Vec<BinObservation> {
    let b = plan.b_shifts;
    let mut bins = Vec::new();
    for (stage, &f) in plan.stage_lengths.iter().enumerate() {
        let mut zs = vec![vec![Complex64::new(0.0, 0.0); b]; f];
        for &(p, v) in lags {
            let col = SensingColumn::new(plan, p % plan.padded_n);
            for (acc, w) in zs[p % f].iter_mut().zip(&col.w) {
                *acc += w * v;
            }
        }
        bins.extend(zs.into_iter().enumerate().map(|(k, z)| BinObservation::new(stage, k, z)));
    }
    bins
}

/// Scores every candidate column of a bin at once.
///
/// With `N = f g`, `w^{k + l f}[b] = w^k[b] e^{+j 2 pi l (s_b mod g) / g}`, so
/// the scores over `l` are one `g`-point inverse DFT of the branch terms
/// `conj(z_b) w^k[b]` accumulated by shift residue.
struct CandidateScanner {
    ffts: Vec<Arc<dyn Fft<f64>>>,
    residues: Vec<Vec<usize>>,
}

impl CandidateScanner {
    fn new(plan: &StagePlan) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let ffts = plan.downsample_factors.iter().map(|&g| planner.plan_fft_inverse(g)).collect();
        let residues = plan
            .downsample_factors
            .iter()
            .map(|&g| plan.shifts.iter().map(|&s| s % g).collect())
            .collect();
        Self { ffts, residues }
    }

    /// Argmax of `Re(z^H w^p) / B` over `p = bin + l f_i`; near-ties go to the
    /// smallest position.
    fn best(&self, z: &[Complex64], plan: &StagePlan, stage: usize, bin: usize) -> (usize, f64) {
        let f = plan.stage_lengths[stage];
        let g = plan.downsample_factors[stage];
        let mut acc = vec![Complex64::new(0.0, 0.0); g];
        let mut scale = 0.0;
        for ((zb, &s), &t) in z.iter().zip(&plan.shifts).zip(&self.residues[stage]) {
            acc[t] += zb.conj() * root_of_unity(bin, s, plan.padded_n, 1.0);
            scale += zb.norm();
        }
        self.ffts[stage].process(&mut acc);
        let top = acc.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-12 * (scale + 1.0);
        let l = acc.iter().position(|c| c.re >= top - tol).unwrap_or(0);
        (bin + l * f, acc[l].re / plan.b_shifts as f64)
    }
}

/// Singleton position and value estimate for a bin.
pub fn singleton_decode(bin: &BinObservation, plan: &StagePlan, dims: &ProblemDims) -> (usize, f64) {
    let (p, _) = CandidateScanner::new(plan).best(&bin.z, plan, bin.stage, bin.bin);
    (p, value_estimate(dims))
}

fn value_estimate(dims: &ProblemDims) -> f64 {
    match dims.mode {
        Mode::Exact => dims.m_query as f64,
        Mode::Approximate => (dims.m_query - dims.k_mismatch) as f64,
    }
}

/// Largest normalized inner product between distinct sensing columns of one
/// bin of `stage`. Refuses when `g_i` exceeds `cap`.
pub fn mutual_incoherence(plan: &StagePlan, stage: usize, cap: usize) -> Result<f64> {
    let g = plan.downsample_factors[stage];
    if g > cap {
        return Err(Error::InvalidInput(format!(
            "incoherence diagnostic limited to {cap} columns, stage has {g}"
        )));
    }
    if g < 2 {
        return Ok(0.0);
    }
    // |w_a^H w_b| depends only on the candidate offset (b - a) f_i.
    let f = plan.stage_lengths[stage];
    let b = plan.b_shifts as f64;
    Ok((1..g)
        .map(|l| {
            let col = SensingColumn::new(plan, l * f);
            col.w.iter().sum::<Complex64>().norm() / b
        })
        .fold(0.0, f64::max))
}

/// Cached result of a matched classification.
#[derive(Debug, Clone, Copy)]
struct Lead {
    position: usize,
}

struct Peeler<'a> {
    plan: &'a StagePlan,
    dims: ProblemDims,
    cfg: &'a DecoderConfig,
    thresholds: Thresholds,
    lag_noise: f64,
    scanner: CandidateScanner,
    offsets: Vec<usize>,
    leads: Vec<Option<Lead>>,
    diag: Diagnostics,
}

fn energy(z: &[Complex64]) -> f64 {
    z.iter().map(|c| c.norm_sqr()).sum::<f64>() / z.len() as f64
}

impl<'a> Peeler<'a> {
    fn index(&self, stage: usize, bin: usize) -> usize {
        self.offsets[stage] + bin
    }

    fn classify(&mut self, bin: &BinObservation) -> (BinState, Option<Lead>) {
        self.diag.classifications += 1;
        let m = self.dims.m_query as f64;
        match self.cfg.classifier {
            Classifier::ZeroShift => {
                let z0 = bin.z.first().map_or(0.0, |c| c.re);
                let state = self.thresholds.state_of(z0 / m);
                (state, None)
            }
            Classifier::Matched => self.classify_matched(bin),
        }
    }

    fn classify_matched(&self, bin: &BinObservation) -> (BinState, Option<Lead>) {
        let m = self.dims.m_query as f64;
        let [g1, g2, _] = self.thresholds.gamma;
        let floor = self.plan.downsample_factors[bin.stage] as f64 * self.lag_noise;
        let limit = (g1 * m).powi(2);
        if energy(&bin.z) - floor < limit {
            return (BinState::ZeroTon, None);
        }
        let (p1, a1) = self.scanner.best(&bin.z, self.plan, bin.stage, bin.bin);
        if a1 < g1 * m {
            return (BinState::ZeroTon, None);
        }
        let residual = subtract(&bin.z, self.plan, p1, a1);
        if energy(&residual) - floor < limit {
            return if a1 < g2 * m {
                (BinState::Singleton, Some(Lead { position: p1 }))
            } else {
                (BinState::MultiTon, None)
            };
        }
        let (p2, a2) = self.scanner.best(&residual, self.plan, bin.stage, bin.bin);
        if a2 < g1 * m {
            return (BinState::MultiTon, None);
        }
        let residual = subtract(&residual, self.plan, p2, a2);
        if energy(&residual) - floor < limit {
            (BinState::DoubleTon, None)
        } else {
            (BinState::MultiTon, None)
        }
    }

    fn decode(&self, bin: &BinObservation, lead: Option<Lead>) -> usize {
        match lead {
            Some(l) => l.position,
            None => {
                self.scanner.best(&bin.z, self.plan, bin.stage, bin.bin).0
            }
        }
    }
}

fn subtract(z: &[Complex64], plan: &StagePlan, p: usize, value: f64) -> Vec<Complex64> {
    let col = SensingColumn::new(plan, p);
    z.iter().zip(&col.w).map(|(a, w)| a - w * value).collect()
}

fn offsets_of(plan: &StagePlan) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(plan.d);
    let mut acc = 0;
    for &f in &plan.stage_lengths {
        offsets.push(acc);
        acc += f;
    }
    (offsets, acc)
}

/// One classification pass with no peeling.
pub fn classify_bins(
    bins: &[BinObservation],
    plan: &StagePlan,
    dims: &ProblemDims,
    cfg: &DecoderConfig,
    lag_noise: f64,
) -> Result<Vec<BinState>> {
    let (offsets, total) = offsets_of(plan);
    let mut peeler = Peeler {
        plan,
        dims: *dims,
        cfg,
        thresholds: Thresholds::new(dims.eta())?,
        lag_noise,
        scanner: CandidateScanner::new(plan),
        offsets,
        leads: vec![None; total],
        diag: Diagnostics::default(),
    };
    Ok(bins.iter().map(|b| peeler.classify(b).0).collect())
}

/// Classifies every bin, then peels singletons until none remain.
///
/// Reported positions are raw lags in `[0, padded_n)`; [`recover`] filters
/// them to valid window starts.
pub fn peel(
    mut bins: Vec<BinObservation>,
    plan: &StagePlan,
    dims: &ProblemDims,
    cfg: &DecoderConfig,
    lag_noise: f64,
) -> Result<MatchReport> {
    let (offsets, acc) = offsets_of(plan);
    if bins.len() != acc {
        return Err(Error::PlanMismatch(format!("expected {acc} bins, got {}", bins.len())));
    }
    bins.sort_by_key(|b| (b.stage, b.bin));
    let mut peeler = Peeler {
        plan,
        dims: *dims,
        cfg,
        thresholds: Thresholds::new(dims.eta())?,
        lag_noise,
        scanner: CandidateScanner::new(plan),
        offsets,
        leads: vec![None; acc],
        diag: Diagnostics::default(),
    };

    let mut singles = BTreeSet::new();
    for (idx, bin) in bins.iter_mut().enumerate() {
        let (state, lead) = peeler.classify(bin);
        bin.state = state;
        bin.original_state = state;
        peeler.leads[idx] = lead;
        if state == BinState::Singleton {
            singles.insert(idx);
        }
    }

    let cap = cfg.max_iterations.unwrap_or(plan.padded_n);
    let value = value_estimate(dims);
    let mut found: HashSet<usize> = HashSet::new();
    let mut report = MatchReport::default();
    while let Some(idx) = singles.pop_first() {
        if report.iterations >= cap {
            peeler.diag.iteration_cap_hit = true;
            break;
        }
        report.iterations += 1;
        let p = peeler.decode(&bins[idx], peeler.leads[idx]);
        if !found.insert(p) {
            peeler.diag.duplicates += 1;
            bins[idx].state = BinState::ZeroTon;
            peeler.leads[idx] = None;
            continue;
        }
        report.positions.push(p);
        report.values.push(value);

        for stage in 0..plan.d {
            let nb = peeler.index(stage, p % plan.stage_lengths[stage]);
            let bin = &bins[nb];
            let eligible = match (dims.mode, cfg.peel_rule) {
                (Mode::Exact, _) => true,
                (Mode::Approximate, PeelRule::OriginalState) => {
                    matches!(bin.original_state, BinState::Singleton | BinState::DoubleTon)
                }
                (Mode::Approximate, PeelRule::CurrentState) => {
                    matches!(bin.state, BinState::Singleton | BinState::DoubleTon)
                }
            };
            if !eligible {
                if nb == idx {
                    bins[nb].state = BinState::ZeroTon;
                    peeler.leads[nb] = None;
                }
                continue;
            }
            peeler.diag.peels += 1;
            let z = subtract(&bins[nb].z, plan, p, value);
            bins[nb].z = z;
            let (state, lead) = peeler.classify(&bins[nb]);
            bins[nb].state = state;
            peeler.leads[nb] = lead;
            if state == BinState::Singleton {
                singles.insert(nb);
            } else {
                singles.remove(&nb);
            }
        }
    }

    report.unresolved_bins = bins.iter().filter(|b| b.state == BinState::MultiTon).count();
    report.diagnostics = peeler.diag;
    report.normalize();
    Ok(report)
}

/// Variance of a non-matching lag: `||y||^2` times the database power per
/// padded sample.
pub fn estimate_lag_noise(db_sketch: &Sketch, query: &Signal) -> f64 {
    query.energy() * db_sketch.mean_power()
}

/// Full query path: sketch the reversed query, form bins, peel, and keep
/// positions in `[0, n_db - M]`.
pub fn recover(
    db_sketch: &Sketch,
    query: &Signal,
    dims: &ProblemDims,
    cfg: &DecoderConfig,
) -> Result<MatchReport> {
    let plan = &db_sketch.plan;
    if query.len() != dims.m_query {
        return Err(Error::InvalidInput(format!(
            "query has {} samples, expected {}",
            query.len(),
            dims.m_query
        )));
    }
    if dims.n_db > plan.padded_n {
        return Err(Error::PlanMismatch(format!(
            "database length {} exceeds the sketch's padded length {}",
            dims.n_db, plan.padded_n
        )));
    }
    let ys = sketch_query(query, plan)?;
    let bins = form_bins(db_sketch, &ys)?;
    let noise = cfg.lag_noise.unwrap_or_else(|| estimate_lag_noise(db_sketch, query));
    let mut report = peel(bins, plan, dims, cfg, noise)?;
    let last = dims.n_db - dims.m_query;
    let keep: Vec<bool> = report.positions.iter().map(|&p| p <= last).collect();
    report.diagnostics.filtered = keep.iter().filter(|k| !**k).count() as u64;
    let mut it = keep.iter();
    report.positions.retain(|_| *it.next().unwrap());
    let mut it = keep.iter();
    report.values.retain(|_| *it.next().unwrap());
    Ok(report)
}
