//! Monte Carlo harness: plant matches, sketch, recover, count misses.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{draw_shifts, plan_stages, Mode, PlanConfig, ProblemDims, StagePlan};
use crate::rsidft::{recover, DecoderConfig};
use crate::signal::{plant_matches, MatchSpec};
use crate::sketch::{sketch_signal, SketchKind};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub n: usize,
    pub m: usize,
    pub matches: usize,
    pub mode: Mode,
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
    pub plan: PlanConfig,
    pub decoder: DecoderConfig,
    /// Refuse points whose estimated peak memory exceeds this many bytes.
    pub memory_budget: Option<u64>,
}

impl Scenario {
    pub fn dims(&self) -> Result<ProblemDims> {
        ProblemDims::new(self.n, self.m, self.k, self.mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    /// Requested sampling exponent; `None` means the planner default.
    pub alpha: Option<f64>,
    /// `log f_min / log padded_n` of the plan actually used.
    pub plan_alpha: f64,
    pub d: usize,
    pub b_shifts: usize,
    pub samples: usize,
    pub sample_gain: f64,
    pub trials: usize,
    pub p_miss: f64,
    /// Trials in which the recovered set equals the planted set.
    pub exact_trials: usize,
    pub mean_false_positives: f64,
    pub mean_query_secs: f64,
}

pub const CSV_HEADER: &str = "n,m,alpha,plan_alpha,d,B,samples,sample_gain,trials,p_miss,exact_trials,mean_false_positives,mean_query_secs";

impl BenchRow {
    pub fn to_csv(&self) -> String {
        let alpha = self.alpha.map(|a| format!("{a}")).unwrap_or_default();
        format!(
            "{},{},{},{:.6},{},{},{},{:.6},{},{:.6},{},{:.4},{:.6}",
            self.n,
            self.m,
            alpha,
            self.plan_alpha,
            self.d,
            self.b_shifts,
            self.samples,
            self.sample_gain,
            self.trials,
            self.p_miss,
            self.exact_trials,
            self.mean_false_positives,
            self.mean_query_secs
        )
    }
}

/// Rough peak bytes for one trial: database, its full transform, and four
/// sketch-sized buffers (two sketches, branch transforms, bins).
pub fn estimate_memory(plan: &StagePlan) -> u64 {
    let sketch = 16 * plan.sample_count() as u64;
    8 * plan.n_db as u64 + 16 * plan.padded_n as u64 + 4 * sketch
}

struct Outcome {
    missed: usize,
    false_positives: usize,
    query_secs: f64,
}

fn run_trial(sc: &Scenario, dims: &ProblemDims, base: &StagePlan, t: usize) -> Result<Outcome> {
    let seed = sc.seed.wrapping_add(t as u64);
    let mut plan = base.clone();
    plan.shifts = draw_shifts(plan.padded_n, plan.b_shifts, seed);
    plan.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fc0_ffee);
    let spec = MatchSpec::random(sc.n, sc.m, sc.matches, sc.k, &mut rng)?;
    let (x, y) = plant_matches(sc.n, sc.m, &spec, seed)?;
    let xs = sketch_signal(&x, &plan, SketchKind::Database)?;
    drop(x);
    let start = Instant::now();
    let report = recover(&xs, &y, dims, &sc.decoder)?;
    let query_secs = start.elapsed().as_secs_f64();
    let found = spec
        .positions
        .iter()
        .filter(|p| report.positions.binary_search(p).is_ok())
        .count();
    Ok(Outcome {
        missed: sc.matches - found,
        false_positives: report.positions.len() - found,
        query_secs,
    })
}

/// Runs `sc.trials` independent trials at one sampling exponent.
pub fn run_point(sc: &Scenario, alpha: Option<f64>) -> Result<BenchRow> {
    let dims = sc.dims()?;
    let cfg = PlanConfig { alpha, ..sc.plan.clone() };
    let plan = plan_stages(&dims, &cfg, sc.seed)?;
    if let Some(budget) = sc.memory_budget {
        let need = estimate_memory(&plan) * rayon::current_num_threads() as u64;
        if need > budget {
            return Err(Error::InvalidInput(format!(
                "scenario needs about {} MiB, budget is {} MiB",
                need >> 20,
                budget >> 20
            )));
        }
    }
    let outcomes = (0..sc.trials)
        .into_par_iter()
        .map(|t| run_trial(sc, &dims, &plan, t))
        .collect::<Result<Vec<_>>>()?;
    let trials = outcomes.len().max(1) as f64;
    let miss_fraction = |o: &Outcome| {
        if sc.matches == 0 {
            0.0
        } else {
            o.missed as f64 / sc.matches as f64
        }
    };
    Ok(BenchRow {
        n: sc.n,
        m: sc.m,
        alpha,
        plan_alpha: plan.alpha,
        d: plan.d,
        b_shifts: plan.b_shifts,
        samples: plan.sample_count(),
        sample_gain: plan.sample_gain(),
        trials: outcomes.len(),
        p_miss: outcomes.iter().map(miss_fraction).sum::<f64>() / trials,
        exact_trials: outcomes.iter().filter(|o| o.missed == 0 && o.false_positives == 0).count(),
        mean_false_positives: outcomes.iter().map(|o| o.false_positives as f64).sum::<f64>()
            / trials,
        mean_query_secs: outcomes.iter().map(|o| o.query_secs).sum::<f64>() / trials,
    })
}

/// Parses `lo:hi:steps` into `steps` evenly spaced values.
pub fn parse_sweep(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidInput(format!("sweep must look like lo:hi:steps, got {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, steps] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let steps: usize = steps.parse().map_err(|_| bad())?;
    if steps == 0 || !(lo > 0.0 && hi < 1.0 && lo <= hi) {
        return Err(bad());
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    // Rounded so that 0.35 prints as 0.35 in the CSV.
    let round = |v: f64| (v * 1e9).round() / 1e9;
    Ok((0..steps).map(|i| round(lo + (hi - lo) * i as f64 / (steps - 1) as f64)).collect())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `NaN` when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Sample-gain ratio between the largest gain with `p_miss < low` and the
/// smallest gain with `p_miss > high`, or `None` if either side is missing.
pub fn transition_width(rows: &[BenchRow], low: f64, high: f64) -> Option<f64> {
    let good = rows
        .iter()
        .filter(|r| r.p_miss < low)
        .map(|r| r.sample_gain)
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.max(g))))?;
    let bad = rows
        .iter()
        .filter(|r| r.p_miss > high && r.sample_gain > good)
        .map(|r| r.sample_gain)
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.min(g))))?;
    Some(bad / good)
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}
