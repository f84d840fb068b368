//! End-to-end acceptance suite. Each test prints one `PASS`/`FAIL` line with
//! the measured quantity next to its threshold, then asserts the threshold.
//!
//! The heavy tests share one lock so wall-clock measurements are not skewed by
//! other tests running on the same cores.

mod common;

use std::collections::BTreeSet;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use sparsematch::blocks::{recover_blocks, sketch_blocks};
use sparsematch::cli::bench::{self, Scenario};
use sparsematch::params::{draw_shifts, default_branch_count, StageLayout, DEFAULT_C1};
use sparsematch::rsidft::{
    classify_bin, classify_bins, form_bins, mutual_incoherence, BinObservation, BinState,
    SensingColumn,
};
use sparsematch::signal::MatchSpec;
use sparsematch::sketch::{direct_subsampled_dft, sketch_query, sketch_signal_with, SketchMethod};
use sparsematch::{
    plan_stages, recover, sketch_signal, stats, DecoderConfig, Mode, PlanConfig, ProblemDims, Signal,
    SketchKind, StagePlan,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(name: &str, pass: bool, detail: String) {
    println!("{name}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

const N_DESK: usize = 1_000_000;
const M_DESK: usize = 1000;

fn fixed_plan(n: usize, m: usize, lengths: &[usize], shifts: Vec<usize>) -> StagePlan {
    StagePlan::from_parts(
        ProblemDims::exact(n, m).unwrap(),
        n,
        lengths.to_vec(),
        shifts,
        DEFAULT_C1,
        0,
        StageLayout::CoprimeLengths,
    )
    .unwrap()
}

#[test]
fn c01_fold_matches_direct_transform() {
    let _g = serial();
    let start = Instant::now();
    let cases: [(usize, &[usize], usize); 4] =
        [(6, &[2, 3], 3), (12, &[3, 4], 4), (30, &[5, 6], 6), (2310, &[154, 165, 210], 8)];
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for (n, lengths, b) in cases {
        let plan = fixed_plan(n, 1, lengths, draw_shifts(n, b, n as u64));
        for _ in 0..100 {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let signal = Signal::real(v.clone());
            for method in [SketchMethod::Fold, SketchMethod::FullTransform] {
                let sk = sketch_signal_with(&signal, &plan, SketchKind::Database, method).unwrap();
                for stage in 0..plan.d {
                    for shift in 0..plan.b_shifts {
                        let want = direct_subsampled_dft(&v, &plan, stage, shift);
                        let got = sk.branch(stage, shift);
                        let scale = want.iter().map(|c| c.norm()).fold(1e-300, f64::max);
                        let err =
                            got.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                        worst = worst.max(err / scale);
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "c01 fold identity",
        worst < 1e-9 && secs < 10.0,
        format!("max relative error {worst:.2e} (< 1e-9), {secs:.2} s (< 10 s)"),
    );
}

/// Peeling on the bipartite graph alone: any bin holding exactly one
/// unresolved lag resolves it.
fn graph_resolved(lengths: &[usize], support: &[usize]) -> BTreeSet<usize> {
    let mut left: BTreeSet<usize> = support.iter().copied().collect();
    let mut done = BTreeSet::new();
    loop {
        let next = lengths.iter().find_map(|&f| {
            (0..f).find_map(|k| {
                let here: Vec<usize> = left.iter().copied().filter(|p| p % f == k).collect();
                (here.len() == 1).then(|| here[0])
            })
        });
        match next {
            Some(p) => {
                left.remove(&p);
                done.insert(p);
            }
            None => return done,
        }
    }
}

#[test]
fn c02_six_point_trace() {
    let _g = serial();
    let lengths = [2, 3];
    let plan = fixed_plan(6, 1, &lengths, vec![0, 1]);
    let unit = Signal::real(vec![1.0]);
    let ys = sketch_query(&unit, &plan).unwrap();
    let w = |e: usize| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * e as f64 / 6.0);

    // A basis lag e_p must land in bin p mod f of every stage with weight w^p.
    let mut symbolic_err: f64 = 0.0;
    for p in 0..6 {
        let mut x = vec![0.0; 6];
        x[p] = 1.0;
        let xs = sketch_signal(&Signal::real(x), &plan, SketchKind::Database).unwrap();
        for bin in form_bins(&xs, &ys).unwrap() {
            let f = lengths[bin.stage];
            for (j, &s) in plan.shifts.iter().enumerate() {
                let want = if p % f == bin.bin { w(p * s % 6) } else { Complex64::new(0.0, 0.0) };
                symbolic_err = symbolic_err.max((bin.z[j] - want).norm());
            }
        }
    }
    let r = [3.0, -1.0, 4.0, 1.0, -5.0, 9.0];
    let xs = sketch_signal(&Signal::real(r.to_vec()), &plan, SketchKind::Database).unwrap();
    let bins = form_bins(&xs, &ys).unwrap();
    let b = bins.iter().find(|b| b.stage == 1 && b.bin == 0).unwrap();
    let pattern_err = (b.z[0] - Complex64::new(r[0] + r[3], 0.0)).norm()
        + (b.z[1] - Complex64::new(r[0] - r[3], 0.0)).norm();

    let dims = ProblemDims::exact(6, 1).unwrap();
    let cfg = DecoderConfig { lag_noise: Some(0.0), ..Default::default() };
    let mut supports: Vec<Vec<usize>> = vec![vec![]];
    for a in 0..6 {
        supports.push(vec![a]);
        for c in a + 1..6 {
            supports.push(vec![a, c]);
        }
    }
    let mut checked = 0;
    let mut wrong = Vec::new();
    for support in &supports {
        let graph = graph_resolved(&lengths, support);
        if graph.len() != support.len() {
            continue;
        }
        checked += 1;
        let mut x = vec![0.0; 6];
        for &p in support {
            x[p] = 1.0;
        }
        let xs = sketch_signal(&Signal::real(x), &plan, SketchKind::Database).unwrap();
        let report = recover(&xs, &unit, &dims, &cfg).unwrap();
        if report.positions.iter().copied().collect::<BTreeSet<_>>() != graph {
            wrong.push(support.clone());
        }
    }
    verdict(
        "c02 six-point trace",
        symbolic_err < 1e-12 && pattern_err < 1e-12 && wrong.is_empty() && checked == supports.len(),
        format!(
            "basis error {symbolic_err:.1e}, r0+r3 pattern error {pattern_err:.1e}, \
             {checked}/{} supports resolvable, failures {wrong:?}",
            supports.len()
        ),
    );
}

#[test]
fn c03_exact_matching_at_desk_scale() {
    let _g = serial();
    let dims = ProblemDims::exact(N_DESK, M_DESK).unwrap();
    let cfg = PlanConfig::default();
    let decoder = DecoderConfig::default();
    let mut exact = 0;
    let mut slowest: f64 = 0.0;
    let mut plan_alpha = f64::INFINITY;
    let mut coprime = true;
    for t in 0..100u64 {
        let plan = plan_stages(&dims, &cfg, 3000 + t).unwrap();
        plan_alpha = plan_alpha.min(plan.alpha);
        coprime &= matches!(plan.layout, StageLayout::CoprimeLengths | StageLayout::CoprimeCofactors);
        let (x, y, spec) = common::instance(N_DESK, M_DESK, 100, 0, 3000 + t);
        let xs = sketch_signal(&x, &plan, SketchKind::Database).unwrap();
        drop(x);
        let start = Instant::now();
        let report = recover(&xs, &y, &dims, &decoder).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        if report.positions == spec.positions {
            exact += 1;
        }
    }
    verdict(
        "c03 exact matching",
        exact >= 99 && slowest < 5.0 && coprime && plan_alpha >= 0.6,
        format!(
            "{exact}/100 exact (>= 99), slowest query {slowest:.3} s (< 5 s), \
             coprime {coprime}, plan alpha {plan_alpha:.3} (>= 0.6)"
        ),
    );
}

#[test]
fn c04_approximate_matching() {
    let _g = serial();
    let k = M_DESK / 8;
    let dims = ProblemDims::approximate(N_DESK, M_DESK, k).unwrap();
    let cfg = PlanConfig { stages: Some(8), alpha: Some(0.6), ..Default::default() };
    let decoder = DecoderConfig::default();
    let mut success = 0;
    let mut oracle_agrees = 0;
    let mut d_used = 0;
    for t in 0..100u64 {
        let plan = plan_stages(&dims, &cfg, 4000 + t).unwrap();
        d_used = plan.d;
        let (x, y, spec) = common::instance(N_DESK, M_DESK, 50, k, 4000 + t);
        let oracle = common::hamming_oracle(&x, &y, k);
        let xs = sketch_signal(&x, &plan, SketchKind::Database).unwrap();
        drop(x);
        let report = recover(&xs, &y, &dims, &decoder).unwrap();
        if oracle == spec.positions {
            oracle_agrees += 1;
        }
        if report.positions == oracle && spec.positions.iter().all(|p| oracle.contains(p)) {
            success += 1;
        }
    }
    verdict(
        "c04 approximate matching",
        success >= 95 && d_used == 8,
        format!(
            "{success}/100 equal to the Hamming oracle (>= 95), d = {d_used}, \
             oracle equals planted set in {oracle_agrees}/100"
        ),
    );
}

fn desk_scenario(trials: usize, seed: u64) -> Scenario {
    Scenario {
        n: N_DESK,
        m: M_DESK,
        matches: 100,
        mode: Mode::Exact,
        k: 0,
        trials,
        seed,
        plan: PlanConfig { allow_undersampled: true, ..Default::default() },
        decoder: DecoderConfig::default(),
        memory_budget: None,
    }
}

#[test]
fn c05_undersampling_fails() {
    let _g = serial();
    let sc = desk_scenario(50, 5000);
    let mu = sc.dims().unwrap().mu();
    let alpha = (1.0 - mu - 0.15).max(0.3);
    let row = bench::run_point(&sc, Some(alpha)).unwrap();
    verdict(
        "c05 under-sampling",
        row.p_miss > 0.5,
        format!(
            "alpha {alpha:.3} (plan {:.3}), p_miss {:.4} (> 0.5), sample gain {:.2}",
            row.plan_alpha, row.p_miss, row.sample_gain
        ),
    );
}

#[test]
fn c06_miss_rate_tracks_sample_gain() {
    let _g = serial();
    let sc = desk_scenario(50, 6000);
    let alphas = bench::parse_sweep("0.34:0.44:11").unwrap();
    let rows: Vec<_> = alphas.iter().map(|&a| bench::run_point(&sc, Some(a)).unwrap()).collect();
    let mut csv = Vec::new();
    bench::write_csv(&rows, &mut csv).unwrap();
    print!("{}", String::from_utf8(csv).unwrap());
    let gains: Vec<f64> = rows.iter().map(|r| r.sample_gain).collect();
    let misses: Vec<f64> = rows.iter().map(|r| r.p_miss).collect();
    let rho = bench::spearman(&gains, &misses);
    let width = bench::transition_width(&rows, 0.01, 0.10);
    verdict(
        "c06 threshold trend",
        rows.len() >= 6 && rho > 0.8 && width.is_some_and(|w| w <= 2.0),
        format!("{} points, spearman {rho:.3} (> 0.8), transition width {width:?} (<= 2)", rows.len()),
    );
}

#[test]
fn c07_mutual_incoherence() {
    let _g = serial();
    let n = 2310;
    let b = 64;
    let bound = 2.0 * ((5.0 * n as f64).ln() / b as f64).sqrt();
    let mut worst: f64 = 0.0;
    let mut consistent = true;
    for draw in 0..100u64 {
        let plan = fixed_plan(n, 1, &[154, 165, 210], draw_shifts(n, b, 7000 + draw));
        let cols: Vec<Vec<Complex64>> = (0..n).map(|p| SensingColumn::new(&plan, p).w).collect();
        // The normalized inner product of columns p and q depends only on q - p.
        let by_offset: Vec<f64> = (0..n)
            .map(|delta| {
                cols[0].iter().zip(&cols[delta]).map(|(u, v)| u.conj() * v).sum::<Complex64>().norm()
                    / b as f64
            })
            .collect();
        let mu_max = by_offset[1..].iter().copied().fold(0.0, f64::max);
        worst = worst.max(mu_max);
        if draw == 0 {
            let mut pairwise: f64 = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    let ip: Complex64 = cols[p].iter().zip(&cols[q]).map(|(u, v)| u.conj() * v).sum();
                    pairwise = pairwise.max(ip.norm() / b as f64);
                }
            }
            consistent &= (pairwise - mu_max).abs() < 1e-9;
        }
        for stage in 0..plan.d {
            let f = plan.stage_lengths[stage];
            let within = (f..n).step_by(f).map(|d| by_offset[d]).fold(0.0, f64::max);
            consistent &= (mutual_incoherence(&plan, stage, n).unwrap() - within).abs() < 1e-9;
        }
    }
    verdict(
        "c07 mutual incoherence",
        worst < bound && consistent,
        format!("worst mu_max {worst:.4} (< {bound:.4}), library diagnostic consistent {consistent}"),
    );
}

#[test]
fn c08_zero_ton_classification() {
    let _g = serial();
    let (m, g, f) = (10_000usize, 100usize, 101usize);
    let n = f * g;
    let b = default_branch_count(DEFAULT_C1, n);
    let plan = StagePlan::from_parts(
        ProblemDims::exact(n, m).unwrap(),
        n,
        vec![g, f],
        draw_shifts(n, b, 8000),
        DEFAULT_C1,
        8000,
        StageLayout::CoprimeLengths,
    )
    .unwrap();
    let stage = plan.stage_lengths.iter().position(|&x| x == f).unwrap();
    assert_eq!(plan.downsample_factors[stage], g);
    let dims = plan.dims();
    let cols: Vec<Vec<Complex64>> = (0..n).map(|p| SensingColumn::new(&plan, p).w).collect();
    let lag = Binomial::new(m as u64, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8001);
    let mut bins = Vec::with_capacity(10_000);
    while bins.len() < 10_000 {
        let mut zs = vec![vec![Complex64::new(0.0, 0.0); b]; f];
        for (p, col) in cols.iter().enumerate() {
            let v = 2.0 * lag.sample(&mut rng) as f64 - m as f64;
            for (acc, w) in zs[p % f].iter_mut().zip(col) {
                *acc += w * v;
            }
        }
        bins.extend(zs.into_iter().enumerate().map(|(k, z)| BinObservation::new(stage, k, z)));
    }
    bins.truncate(10_000);
    let states = classify_bins(&bins, &plan, &dims, &DecoderConfig::default(), m as f64).unwrap();
    let matched = states.iter().filter(|s| **s != BinState::ZeroTon).count() as f64 / 1e4;
    let zero_shift = bins
        .iter()
        .filter(|bin| classify_bin(bin, m, 0.0).unwrap() != BinState::ZeroTon)
        .count() as f64
        / 1e4;
    let envelope = 10.0 * 6.0 * (-(m as f64) / g as f64 / 16.0).exp();
    verdict(
        "c08 zero-ton classification",
        matched < 1e-3 && matched < envelope,
        format!(
            "misclassified {matched:.1e} (< 1e-3, < envelope {envelope:.3e}), \
             zero-shift rule {zero_shift:.1e}, B = {b}"
        ),
    );
}

#[test]
fn c09_query_reads_no_database_samples() {
    let _g = serial();
    let dims = ProblemDims::exact(200_000, 447).unwrap();
    let plan = plan_stages(&dims, &PlanConfig::default(), 9000).unwrap();
    let (x, y, spec) = common::instance(200_000, 447, 20, 0, 9000);
    stats::reset();
    let xs = sketch_signal(&x, &plan, SketchKind::Database).unwrap();
    let sketch_reads = stats::snapshot().db_sample_reads;
    stats::reset();
    let report = recover(&xs, &y, &dims, &DecoderConfig::default()).unwrap();
    let query_reads = stats::snapshot().db_sample_reads;
    let max_f = *plan.stage_lengths.iter().max().unwrap();
    let limit = 4 * plan.d * plan.b_shifts * max_f;
    let samples = xs.sample_count();
    verdict(
        "c09 sample contract",
        query_reads == 0 && sketch_reads == 200_000 && samples <= limit
            && report.positions == spec.positions,
        format!(
            "query database reads {query_reads} (= 0), sketch reads {sketch_reads}, \
             samples {samples} (<= {limit})"
        ),
    );
}

#[test]
fn c10_query_time_is_sublinear() {
    let _g = serial();
    let mut rows = Vec::new();
    for n in [10_000usize, 100_000, 1_000_000] {
        let sc = Scenario {
            n,
            m: (n as f64).sqrt() as usize,
            matches: 10,
            trials: 10,
            seed: 10_000,
            ..desk_scenario(10, 0)
        };
        rows.push(bench::run_point(&sc, Some(0.6)).unwrap());
    }
    let mut csv = Vec::new();
    bench::write_csv(&rows, &mut csv).unwrap();
    print!("{}", String::from_utf8(csv).unwrap());
    let ratio = rows[2].mean_query_secs / rows[0].mean_query_secs;
    verdict(
        "c10 sub-linear query time",
        ratio < 50.0,
        format!(
            "time(1e6)/time(1e4) = {:.4}/{:.4} = {ratio:.1} (< 50)",
            rows[2].mean_query_secs, rows[0].mean_query_secs
        ),
    );
}

/// 100 planted windows, seven of them straddling the boundaries of an
/// eight-way split (which include the two-way boundary).
fn straddling_spec(seed: u64) -> (MatchSpec, Vec<usize>) {
    let straddlers: Vec<usize> = (1..8).map(|k| k * N_DESK / 8 - M_DESK / 2).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = MatchSpec::random(N_DESK, M_DESK, 300, 0, &mut rng).unwrap();
    let mut positions = straddlers.clone();
    for p in pool.positions {
        if positions.len() == 100 {
            break;
        }
        if straddlers.iter().all(|&s| p + M_DESK <= s || s + M_DESK <= p) {
            positions.push(p);
        }
    }
    positions.sort_unstable();
    (MatchSpec::exact(positions), straddlers)
}

#[test]
fn c11_block_invariance() {
    let _g = serial();
    let dims = ProblemDims::exact(N_DESK, M_DESK).unwrap();
    // Blocks have a larger query exponent, so the exponent is pinned rather
    // than left to the per-block default.
    let cfg = PlanConfig { alpha: Some(0.6), ..Default::default() };
    let decoder = DecoderConfig::default();
    let mut compared = 0;
    let mut differing = 0;
    let mut straddlers_missed = 0;
    let mut planted_missed = 0;
    for t in 0..10u64 {
        let (spec, straddlers) = straddling_spec(11_000 + t);
        let (x, y) = sparsematch::signal::plant_matches(N_DESK, M_DESK, &spec, 11_000 + t).unwrap();
        let mut reports = Vec::new();
        for g in [1usize, 2, 8] {
            let sketch = sketch_blocks(&x, &dims, &cfg, 11_000 + t, g).unwrap();
            let report = recover_blocks(&sketch, &y, &dims, &decoder).unwrap();
            straddlers_missed +=
                straddlers.iter().filter(|s| report.positions.binary_search(s).is_err()).count();
            planted_missed +=
                spec.positions.iter().filter(|s| report.positions.binary_search(s).is_err()).count();
            let decoded = report.unresolved_bins == 0 && !report.diagnostics.iteration_cap_hit;
            reports.push((decoded, report.positions));
        }
        if reports.iter().all(|(decoded, _)| *decoded) {
            compared += 1;
            if reports.iter().any(|(_, p)| *p != reports[0].1) {
                differing += 1;
            }
        }
    }
    verdict(
        "c11 block invariance",
        differing == 0 && straddlers_missed == 0,
        format!(
            "{differing} differing of {compared} fully decoded trials, \
             straddlers missed {straddlers_missed}, planted missed {planted_missed}"
        ),
    );
}
