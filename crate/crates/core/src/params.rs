//! Design parameters for the sparse inverse-DFT decoder.
//!
//! Given the database length `N`, the query length `M` and the mismatch budget
//! `K`, the planner picks the number of stages `d`, the per-stage transform
//! lengths `f_i` (each dividing the zero-padded length), the downsampling
//! factors `g_i = padded_n / f_i`, the number of branches `B` and the branch
//! shifts.
//!
//! Three stage layouts are produced, in order of preference:
//!
//! * [`StageLayout::CoprimeLengths`]: the `f_i` themselves are pairwise
//!   co-prime and `padded_n = prod f_i` (used when `alpha <= 1/2`).
//! * [`StageLayout::CoprimeCofactors`]: `padded_n = prod P_i` with pairwise
//!   co-prime `P_i` and `f_i = padded_n / P_i` (used when `alpha > 1/2`).
//! * [`StageLayout::SharedDivisors`]: the `g_i` are distinct divisors of a
//!   smooth `padded_n` whose common gcd is 1. This is the fallback when no
//!   co-prime factorization with `d` near-equal factors fits below `2 N`,
//!   which is the case for `d = 8` at database lengths around `10^6`.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default incoherence constant in `B = 4 c1^2 ln(5 N)`.
pub const DEFAULT_C1: f64 = 2.0;

/// Default number of candidate layouts examined before the planner gives up.
pub const DEFAULT_SEARCH_BUDGET: u64 = 20_000_000;

/// A co-prime layout is used when its realized `alpha` is this close to the
/// requested one.
pub const ALPHA_TOLERANCE: f64 = 0.015;

/// Largest allowed `max f_i / min f_i`.
pub const MAX_STAGE_RATIO: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Exact,
    Approximate,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Approximate => "approx",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Mode::Exact),
            "approx" | "approximate" => Ok(Mode::Approximate),
            other => Err(Error::InvalidInput(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sizes of one matching problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemDims {
    /// Database length `N` in symbols.
    pub n_db: usize,
    /// Query length `M` in symbols.
    pub m_query: usize,
    /// Hamming budget `K`.
    pub k_mismatch: usize,
    pub mode: Mode,
}

impl ProblemDims {
    pub fn new(n_db: usize, m_query: usize, k_mismatch: usize, mode: Mode) -> Result<Self> {
        if n_db == 0 || m_query == 0 {
            return Err(Error::InvalidDimensions(
                "database and query lengths must be positive".into(),
            ));
        }
        if m_query > n_db {
            return Err(Error::InvalidDimensions(format!(
                "query length {m_query} exceeds database length {n_db}"
            )));
        }
        match mode {
            Mode::Exact if k_mismatch != 0 => {
                return Err(Error::InvalidDimensions(format!(
                    "exact mode requires k=0, got k={k_mismatch}"
                )))
            }
            // eta < 1/6 strictly, i.e. 6K < M.
            Mode::Approximate if 6 * k_mismatch >= m_query => {
                return Err(Error::InvalidDimensions(format!(
                    "approximate mode requires k/m < 1/6, got k={k_mismatch}, m={m_query}"
                )))
            }
            _ => {}
        }
        Ok(Self { n_db, m_query, k_mismatch, mode })
    }

    pub fn exact(n_db: usize, m_query: usize) -> Result<Self> {
        Self::new(n_db, m_query, 0, Mode::Exact)
    }

    pub fn approximate(n_db: usize, m_query: usize, k_mismatch: usize) -> Result<Self> {
        Self::new(n_db, m_query, k_mismatch, Mode::Approximate)
    }

    /// Mismatch fraction `K / M`.
    pub fn eta(&self) -> f64 {
        self.k_mismatch as f64 / self.m_query as f64
    }

    /// Query exponent `ln M / ln N`.
    pub fn mu(&self) -> f64 {
        log_ratio(self.m_query, self.n_db)
    }

    /// Same dimensions with a different database length (used per block).
    pub fn with_n_db(&self, n_db: usize) -> Result<Self> {
        Self::new(n_db, self.m_query, self.k_mismatch, self.mode)
    }
}

fn log_ratio(a: usize, b: usize) -> f64 {
    if b <= 1 {
        return f64::NAN;
    }
    (a as f64).ln() / (b as f64).ln()
}

/// Number of stages for a query exponent `mu`.
///
/// For `mu <= 1/2` the exact-mode rule picks `d >= 3` with
/// `mu in (1/d, 1/(d-1)]`; approximate mode uses `d = 8` on `(1/8, 1/2]` and
/// the same interval rule (with `d >= 8`) below that. For `mu > 1/2` the stage
/// lengths are the co-prime factors themselves, so `alpha = 1/d`, and `d` is
/// the largest integer with `1/d > 1 - mu` (at least 2; at least 8 in
/// approximate mode).
pub fn choose_stage_count(dims: &ProblemDims, mu: f64) -> Result<usize> {
    if !(mu > 0.0 && mu < 1.0) || !mu.is_finite() {
        return Err(Error::InvalidDimensions(format!(
            "query exponent mu={mu} must lie in (0, 1)"
        )));
    }
    // Closed on the right: mu = 1/d exactly lands in (1/(d+1), 1/d].
    let interval_d = |mu: f64| (1.0 / mu + 1e-9).floor() as usize + 1;
    let d = if mu <= 0.5 + 1e-12 {
        match dims.mode {
            Mode::Exact => interval_d(mu).max(3),
            Mode::Approximate if mu > 0.125 => 8,
            Mode::Approximate => interval_d(mu).max(8),
        }
    } else {
        let bound = 1.0 / (1.0 - mu);
        let largest = ((bound - 1e-9).ceil() as usize).saturating_sub(1).max(2);
        match dims.mode {
            Mode::Exact => largest,
            Mode::Approximate => largest.max(8),
        }
    };
    Ok(d)
}

/// `delta` constants for the oracle peeling threshold, indexed by `d`.
pub fn table2_delta(d: usize) -> Result<f64> {
    const DELTA: [f64; 7] = [1.000, 0.4073, 0.3237, 0.2850, 0.2616, 0.2456, 0.2336];
    if !(2..=8).contains(&d) {
        return Err(Error::UnsupportedStageCount(d));
    }
    Ok(DELTA[d - 2])
}

/// How the stage lengths relate to the padded length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageLayout {
    CoprimeLengths,
    CoprimeCofactors,
    SharedDivisors,
}

impl StageLayout {
    fn as_str(self) -> &'static str {
        match self {
            StageLayout::CoprimeLengths => "coprime-lengths",
            StageLayout::CoprimeCofactors => "coprime-cofactors",
            StageLayout::SharedDivisors => "shared-divisors",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "coprime-lengths" => Ok(StageLayout::CoprimeLengths),
            "coprime-cofactors" => Ok(StageLayout::CoprimeCofactors),
            "shared-divisors" => Ok(StageLayout::SharedDivisors),
            other => Err(Error::Format(format!("unknown stage layout {other:?}"))),
        }
    }
}

/// Planner knobs. Everything left `None` is derived from the problem.
#[derive(Debug, Clone)]
pub struct PlanConfig {
    pub stages: Option<usize>,
    pub alpha: Option<f64>,
    pub branches: Option<usize>,
    pub c1: f64,
    /// Accept plans with `alpha <= 1 - mu` (for under-sampling experiments).
    pub allow_undersampled: bool,
    pub search_budget: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            stages: None,
            alpha: None,
            branches: None,
            c1: DEFAULT_C1,
            allow_undersampled: false,
            search_budget: DEFAULT_SEARCH_BUDGET,
        }
    }
}

/// Geometry of the decoder for one database (or one block of it).
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    /// Length of the signal this plan was built for.
    pub n_db: usize,
    pub m_query: usize,
    pub k_mismatch: usize,
    pub mode: Mode,
    pub d: usize,
    pub padded_n: usize,
    /// Stage lengths `f_i`, ascending.
    pub stage_lengths: Vec<usize>,
    /// `g_i = padded_n / f_i`.
    pub downsample_factors: Vec<usize>,
    /// `ln(min f_i) / ln(padded_n)`.
    pub alpha: f64,
    pub b_shifts: usize,
    /// Branch shifts shared by all stages; `shifts[0] == 0`.
    pub shifts: Vec<usize>,
    pub c1: f64,
    pub block_count: usize,
    pub block_len: usize,
    pub seed: u64,
    pub layout: StageLayout,
}

impl StagePlan {
    /// Builds a plan from explicit parts, checking the structural invariants
    /// (divisibility, distinct stage lengths, shift range and uniqueness).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        dims: ProblemDims,
        padded_n: usize,
        stage_lengths: Vec<usize>,
        shifts: Vec<usize>,
        c1: f64,
        seed: u64,
        layout: StageLayout,
    ) -> Result<Self> {
        let mut stage_lengths = stage_lengths;
        stage_lengths.sort_unstable();
        let downsample_factors = stage_lengths
            .iter()
            .map(|&f| padded_n.checked_div(f).unwrap_or(0))
            .collect();
        let alpha = stage_lengths
            .first()
            .map(|&f| log_ratio(f, padded_n))
            .unwrap_or(f64::NAN);
        let plan = Self {
            n_db: dims.n_db,
            m_query: dims.m_query,
            k_mismatch: dims.k_mismatch,
            mode: dims.mode,
            d: stage_lengths.len(),
            padded_n,
            stage_lengths,
            downsample_factors,
            alpha,
            b_shifts: shifts.len(),
            shifts,
            c1,
            block_count: 1,
            block_len: dims.n_db,
            seed,
            layout,
        };
        plan.check_structure()?;
        Ok(plan)
    }

    pub fn dims(&self) -> ProblemDims {
        ProblemDims {
            n_db: self.n_db,
            m_query: self.m_query,
            k_mismatch: self.k_mismatch,
            mode: self.mode,
        }
    }

    /// `ln M / ln padded_n`.
    pub fn mu(&self) -> f64 {
        log_ratio(self.m_query, self.padded_n)
    }

    /// Frequency samples per signal: `B * sum f_i`.
    pub fn sample_count(&self) -> usize {
        self.b_shifts * self.stage_lengths.iter().sum::<usize>()
    }

    /// Database length divided by the number of sketch samples a query uses.
    pub fn sample_gain(&self) -> f64 {
        self.n_db as f64 / self.sample_count() as f64
    }

    /// `max f_i / min f_i`.
    pub fn stage_ratio(&self) -> f64 {
        let max = *self.stage_lengths.iter().max().unwrap_or(&1) as f64;
        let min = *self.stage_lengths.iter().min().unwrap_or(&1) as f64;
        max / min
    }

    /// `alpha > 1 - mu` with `mu` measured against the padded length.
    pub fn satisfies_alpha_bound(&self) -> bool {
        self.alpha > 1.0 - self.mu()
    }

    fn check_structure(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Planning(msg));
        if self.d < 2 || self.stage_lengths.len() != self.d {
            return bad(format!("need at least 2 stages, got {}", self.stage_lengths.len()));
        }
        if self.padded_n < self.n_db {
            return bad(format!("padded length {} < n_db {}", self.padded_n, self.n_db));
        }
        for (i, &f) in self.stage_lengths.iter().enumerate() {
            if f == 0 || !self.padded_n.is_multiple_of(f) {
                return bad(format!("stage length {f} does not divide {}", self.padded_n));
            }
            if i > 0 && self.stage_lengths[i - 1] == f {
                return bad(format!("duplicate stage length {f}"));
            }
            if self.downsample_factors[i] * f != self.padded_n {
                return bad("downsample factors inconsistent with stage lengths".into());
            }
        }
        if self.shifts.is_empty() || self.shifts[0] != 0 {
            return bad("the first branch shift must be 0".into());
        }
        let mut seen = self.shifts.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.shifts.len() {
            return bad("branch shifts must be distinct".into());
        }
        if seen.last().is_some_and(|&s| s >= self.padded_n) {
            return bad("branch shift out of range".into());
        }
        if self.b_shifts != self.shifts.len() {
            return bad("b_shifts does not match the shift list".into());
        }
        Ok(())
    }

    /// Full invariant check for plans used in production: structure, near-equal
    /// stage lengths, `d >= 8` in approximate mode and (unless waived)
    /// `alpha > 1 - mu`.
    pub fn validate(&self, allow_undersampled: bool) -> Result<()> {
        self.check_structure()?;
        if self.stage_ratio() > MAX_STAGE_RATIO + 1e-12 {
            return Err(Error::Planning(format!(
                "stage lengths {:?} exceed the max/min ratio {MAX_STAGE_RATIO}",
                self.stage_lengths
            )));
        }
        if self.mode == Mode::Approximate && self.d < 8 {
            return Err(Error::Planning(format!(
                "approximate matching needs d >= 8 stages, got {}",
                self.d
            )));
        }
        if !allow_undersampled && !self.satisfies_alpha_bound() {
            return Err(Error::Planning(format!(
                "alpha={:.4} does not exceed 1 - mu = {:.4}",
                self.alpha,
                1.0 - self.mu()
            )));
        }
        Ok(())
    }

    /// Canonical `key=value` text, keys sorted, one per line.
    pub fn to_canonical_text(&self) -> String {
        let list = |v: &[usize]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let mut map = BTreeMap::new();
        map.insert("alpha", format!("{:?}", self.alpha));
        map.insert("b_shifts", self.b_shifts.to_string());
        map.insert("block_count", self.block_count.to_string());
        map.insert("block_len", self.block_len.to_string());
        map.insert("c1", format!("{:?}", self.c1));
        map.insert("d", self.d.to_string());
        map.insert("downsample_factors", list(&self.downsample_factors));
        map.insert("k_mismatch", self.k_mismatch.to_string());
        map.insert("layout", self.layout.as_str().to_string());
        map.insert("m_query", self.m_query.to_string());
        map.insert("mode", self.mode.as_str().to_string());
        map.insert("n_db", self.n_db.to_string());
        map.insert("padded_n", self.padded_n.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("shifts", list(&self.shifts));
        map.insert("stage_lengths", list(&self.stage_lengths));
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("plan line without '=': {line:?}")))?;
            map.insert(k.trim(), v.trim());
        }
        let get = |key: &str| {
            map.get(key)
                .copied()
                .ok_or_else(|| Error::Format(format!("plan is missing key {key:?}")))
        };
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Format(format!("bad value for {key}: {v:?}")))
        }
        let list = |key: &str| -> Result<Vec<usize>> {
            let v = get(key)?;
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|x| num(key, x)).collect()
        };
        let plan = Self {
            n_db: num("n_db", get("n_db")?)?,
            m_query: num("m_query", get("m_query")?)?,
            k_mismatch: num("k_mismatch", get("k_mismatch")?)?,
            mode: get("mode")?.parse().map_err(|_| Error::Format("bad mode".into()))?,
            d: num("d", get("d")?)?,
            padded_n: num("padded_n", get("padded_n")?)?,
            stage_lengths: list("stage_lengths")?,
            downsample_factors: list("downsample_factors")?,
            alpha: num("alpha", get("alpha")?)?,
            b_shifts: num("b_shifts", get("b_shifts")?)?,
            shifts: list("shifts")?,
            c1: num("c1", get("c1")?)?,
            block_count: num("block_count", get("block_count")?)?,
            block_len: num("block_len", get("block_len")?)?,
            seed: num("seed", get("seed")?)?,
            layout: StageLayout::parse(get("layout")?)?,
        };
        plan.check_structure()
            .map_err(|e| Error::Format(format!("inconsistent plan: {e}")))?;
        Ok(plan)
    }
}

impl fmt::Display for StagePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "d={} padded_n={} f={:?} alpha={:.4} B={}",
            self.d, self.padded_n, self.stage_lengths, self.alpha, self.b_shifts
        )
    }
}

/// `ceil(4 c1^2 ln(5 n))`, never more than `n` (shifts are distinct).
pub fn default_branch_count(c1: f64, padded_n: usize) -> usize {
    let b = (4.0 * c1 * c1 * (5.0 * padded_n as f64).ln()).ceil() as usize;
    b.clamp(1, padded_n)
}

/// `B` distinct shifts in `[0, padded_n)` with `shifts[0] = 0`, the rest drawn
/// uniformly without replacement from `[1, padded_n)`.
pub fn draw_shifts(padded_n: usize, b: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shifts = Vec::with_capacity(b);
    shifts.push(0);
    if b > 1 {
        shifts.extend(index::sample(&mut rng, padded_n - 1, b - 1).into_iter().map(|s| s + 1));
    }
    shifts
}

/// Plans the stages for `dims`, drawing shifts deterministically from `seed`.
pub fn plan_stages(dims: &ProblemDims, cfg: &PlanConfig, seed: u64) -> Result<StagePlan> {
    let mu = dims.mu();
    let auto_d = cfg.stages.is_none();
    let d = match cfg.stages {
        Some(d) => d,
        None => choose_stage_count(dims, mu)?,
    };
    if d < 2 {
        return Err(Error::Planning(format!("need at least 2 stages, got {d}")));
    }
    if dims.mode == Mode::Approximate && d < 8 {
        return Err(Error::Planning(format!(
            "approximate matching needs d >= 8 stages, got {d}"
        )));
    }
    if let Some(a) = cfg.alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Planning(format!("alpha={a} must lie in (0, 1)")));
        }
    }
    // With an automatic stage count a marginal alpha can be fixed by one or two
    // more stages; an explicit count is taken as given.
    let attempts = if auto_d && cfg.alpha.is_none() { 3 } else { 1 };
    let mut last_err = None;
    for d in d..d + attempts {
        match plan_with_stage_count(dims, cfg, seed, d, mu) {
            Ok(plan) => return Ok(plan),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn plan_with_stage_count(
    dims: &ProblemDims,
    cfg: &PlanConfig,
    seed: u64,
    d: usize,
    mu: f64,
) -> Result<StagePlan> {
    let n = dims.n_db;
    let n_max = 2 * n;
    let target_alpha = cfg
        .alpha
        .unwrap_or(if mu <= 0.5 + 1e-12 { 1.0 - 1.0 / d as f64 } else { 1.0 / d as f64 });
    let nf = n as f64;
    let mut budget = cfg.search_budget;

    // Co-prime layouts are preferred. An explicitly requested exponent must
    // also be met closely; otherwise whichever layout lands closest wins.
    let deviation = |padded: usize, lengths: &[usize]| {
        (log_ratio(lengths[0], padded) - target_alpha).abs()
    };
    // Without an explicit exponent the set must also keep alpha above 1 - mu,
    // which reads `min f * M > padded_n`.
    let m = dims.m_query;
    let strict = cfg.alpha.is_none() && !cfg.allow_undersampled;
    let lengths_ok = |set: &[usize], padded: usize| !strict || set[0] * m > padded;
    let cofactors_ok = |set: &[usize], _: usize| !strict || set[set.len() - 1] < m;
    let mut found: Option<(StageLayout, usize, Vec<usize>)> = None;
    if target_alpha <= 0.5 {
        let target = nf.powf(target_alpha);
        if let Some((set, padded)) = coprime_set_search(
            target,
            d,
            n,
            n_max,
            MAX_STAGE_RATIO,
            true,
            &lengths_ok,
            &mut budget,
        )? {
            found = Some((StageLayout::CoprimeLengths, padded, set));
        }
    } else {
        let target = nf.powf(1.0 - target_alpha);
        if let Some((set, padded)) = coprime_set_search(
            target,
            d,
            n,
            n_max,
            MAX_STAGE_RATIO,
            false,
            &cofactors_ok,
            &mut budget,
        )? {
            let mut lengths: Vec<usize> = set.iter().map(|p| padded / p).collect();
            lengths.sort_unstable();
            found = Some((StageLayout::CoprimeCofactors, padded, lengths));
        }
    }
    let close_enough = found.as_ref().is_some_and(|(_, padded, lengths)| {
        cfg.alpha.is_none() || deviation(*padded, lengths) <= ALPHA_TOLERANCE
    });
    if !close_enough {
        let target_g = nf.powf(1.0 - target_alpha);
        // A budget failure here is fatal only without a co-prime candidate.
        let shared = match shared_divisor_search(target_g, d, n, n_max, MAX_STAGE_RATIO, &mut budget) {
            Ok(r) => r,
            Err(e) if found.is_none() => return Err(e),
            Err(_) => None,
        };
        if let Some((gs, padded)) = shared {
            let mut lengths: Vec<usize> = gs.iter().map(|g| padded / g).collect();
            lengths.sort_unstable();
            let better = found
                .as_ref()
                .is_none_or(|(_, p, l)| deviation(padded, &lengths) < deviation(*p, l));
            if better {
                found = Some((StageLayout::SharedDivisors, padded, lengths));
            }
        }
    }
    let (layout, padded_n, stage_lengths) = found.ok_or_else(|| Error::SearchBudget {
        budget: cfg.search_budget,
        detail: format!(
            "d={d}, alpha~{target_alpha:.3}, padded length limited to [{n}, {n_max}]"
        ),
    })?;

    let b = cfg
        .branches
        .map(|b| b.clamp(1, padded_n))
        .unwrap_or_else(|| default_branch_count(cfg.c1, padded_n));
    let shifts = draw_shifts(padded_n, b, seed);
    let plan = StagePlan::from_parts(*dims, padded_n, stage_lengths, shifts, cfg.c1, seed, layout)?;
    plan.validate(cfg.allow_undersampled)?;
    Ok(plan)
}

pub(crate) fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Finds `d` pairwise co-prime integers near `target` (each within a factor 2
/// of it, max/min at most `max_ratio`) whose product `P` gives the smallest
/// padded length `t * P >= n_min` not above `n_max`. With `exact_product` only
/// `t = 1` is allowed when such a set exists. Sets rejected by
/// `admissible(set, padded)` are skipped.
///
/// Returns the ascending set and the padded length.
#[allow(clippy::too_many_arguments)]
pub fn coprime_set_search(
    target: f64,
    d: usize,
    n_min: usize,
    n_max: usize,
    max_ratio: f64,
    exact_product: bool,
    admissible: &dyn Fn(&[usize], usize) -> bool,
    budget: &mut u64,
) -> Result<Option<(Vec<usize>, usize)>> {
    let lo = ((target / 2.0).ceil() as usize).max(2);
    let hi = ((target * 2.0).floor() as usize).max(lo);
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    let mut best_exact: Option<(usize, f64, Vec<usize>)> = None;
    let mut stack = Vec::with_capacity(d);
    let budget_start = *budget;
    let ok = coprime_dfs(
        lo,
        hi,
        d,
        n_min,
        n_max,
        max_ratio,
        target,
        admissible,
        &mut stack,
        1u128,
        budget,
        &mut best,
        &mut best_exact,
    );
    if !ok && best.is_none() {
        return Err(Error::SearchBudget {
            budget: budget_start,
            detail: format!("co-prime search for d={d} factors near {target:.1}"),
        });
    }
    let pick = if exact_product { best_exact.or(best) } else { best };
    Ok(pick.map(|(padded, _, set)| (set, padded)))
}

#[allow(clippy::too_many_arguments)]
fn coprime_dfs(
    from: usize,
    hi: usize,
    d: usize,
    n_min: usize,
    n_max: usize,
    max_ratio: f64,
    target: f64,
    admissible: &dyn Fn(&[usize], usize) -> bool,
    stack: &mut Vec<usize>,
    product: u128,
    budget: &mut u64,
    best: &mut Option<(usize, f64, Vec<usize>)>,
    best_exact: &mut Option<(usize, f64, Vec<usize>)>,
) -> bool {
    if stack.len() == d {
        let p = product as usize;
        let t = n_min.div_ceil(p);
        let padded = t * p;
        if padded > n_max || !admissible(stack, padded) {
            return true;
        }
        let spread: f64 = stack.iter().map(|&x| (x as f64 / target).ln().abs()).sum();
        let better = |cur: &Option<(usize, f64, Vec<usize>)>| match cur {
            None => true,
            Some((bp, bs, _)) => padded < *bp || (padded == *bp && spread < *bs - 1e-12),
        };
        if better(best) {
            *best = Some((padded, spread, stack.clone()));
        }
        if t == 1 && better(best_exact) {
            *best_exact = Some((padded, spread, stack.clone()));
        }
        return true;
    }
    let remaining = (d - stack.len()) as u32;
    let upper = match stack.first() {
        Some(&first) => hi.min((first as f64 * max_ratio).floor() as usize),
        None => hi,
    };
    for c in from..=upper {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        // Ascending order: every later factor is at least c.
        if product * (c as u128).pow(remaining) > n_max as u128 {
            break;
        }
        if stack.iter().any(|&s| gcd(s, c) != 1) {
            continue;
        }
        stack.push(c);
        let ok = coprime_dfs(
            c + 1,
            hi,
            d,
            n_min,
            n_max,
            max_ratio,
            target,
            admissible,
            stack,
            product * c as u128,
            budget,
            best,
            best_exact,
        );
        stack.pop();
        if !ok {
            return false;
        }
    }
    true
}

const SMOOTH_PRIMES: [usize; 6] = [2, 3, 5, 7, 11, 13];

/// Finds the smallest 13-smooth `padded >= n_min` (at most `n_max`) with `d`
/// distinct divisors near `target_g` whose max/min ratio is at most
/// `max_ratio` and whose common gcd is 1.
pub fn shared_divisor_search(
    target_g: f64,
    d: usize,
    n_min: usize,
    n_max: usize,
    max_ratio: f64,
    budget: &mut u64,
) -> Result<Option<(Vec<usize>, usize)>> {
    let mut smooth = Vec::new();
    collect_smooth(1, 0, n_max, &mut smooth);
    smooth.retain(|&x| x >= n_min);
    smooth.sort_unstable();
    let start = *budget;
    let good_enough = (1.0f64 + 0.05).ln();
    let mut best: Option<(f64, Vec<usize>, usize)> = None;
    for padded in smooth {
        if *budget == 0 {
            return match best {
                Some((_, set, padded)) => Ok(Some((set, padded))),
                None => Err(Error::SearchBudget {
                    budget: start,
                    detail: format!("shared-divisor search for d={d} near g={target_g:.1}"),
                }),
            };
        }
        *budget -= 1;
        let divs = divisors(padded);
        if let Some(set) = pick_divisor_set(&divs, target_g, d, max_ratio) {
            // The shortest stage comes from the largest downsampling factor.
            let g_max = *set.last().expect("non-empty set");
            let score = (g_max as f64 / target_g).ln().abs();
            if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
                best = Some((score, set, padded));
            }
            if score <= good_enough {
                break;
            }
        }
    }
    Ok(best.map(|(_, set, padded)| (set, padded)))
}

fn collect_smooth(value: usize, prime_idx: usize, n_max: usize, out: &mut Vec<usize>) {
    if prime_idx == SMOOTH_PRIMES.len() {
        out.push(value);
        return;
    }
    let p = SMOOTH_PRIMES[prime_idx];
    let mut v = value;
    loop {
        collect_smooth(v, prime_idx + 1, n_max, out);
        match v.checked_mul(p) {
            Some(next) if next <= n_max => v = next,
            _ => break,
        }
    }
}

fn divisors(n: usize) -> Vec<usize> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n.is_multiple_of(i) {
            small.push(i);
            if i * i != n {
                large.push(n / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

fn pick_divisor_set(divs: &[usize], target: f64, d: usize, max_ratio: f64) -> Option<Vec<usize>> {
    let lo = (target / 2.0).max(2.0);
    let hi = target * 2.0;
    let near: Vec<usize> = divs
        .iter()
        .copied()
        .filter(|&g| g as f64 >= lo && g as f64 <= hi)
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for (start, &low) in near.iter().enumerate() {
        let window: Vec<usize> = near[start..]
            .iter()
            .copied()
            .take_while(|&g| g as f64 <= low as f64 * max_ratio + 1e-9)
            .collect();
        if window.len() < d {
            continue;
        }
        let closeness = |g: usize| (g as f64 / target).ln().abs();
        let mut ranked = window.clone();
        ranked.sort_by(|a, b| closeness(*a).total_cmp(&closeness(*b)).then(a.cmp(b)));
        let mut chosen: Vec<usize> = ranked[..d].to_vec();
        let mut rest = ranked[d..].iter();
        while chosen.iter().copied().fold(0, gcd) != 1 {
            let Some(&r) = rest.next() else { break };
            // Swap out the member farthest from the target if that helps.
            let far = (0..d).max_by(|&a, &b| closeness(chosen[a]).total_cmp(&closeness(chosen[b])))?;
            let mut trial = chosen.clone();
            trial[far] = r;
            if trial.iter().copied().fold(0, gcd) < chosen.iter().copied().fold(0, gcd) {
                chosen = trial;
            }
        }
        if chosen.iter().copied().fold(0, gcd) != 1 {
            continue;
        }
        let score = chosen.iter().map(|&g| closeness(g)).fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            chosen.sort_unstable();
            best = Some((score, chosen));
        }
    }
    best.map(|(_, set)| set)
}
