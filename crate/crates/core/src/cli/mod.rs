//! Command-line front end.
//!
//! Exit codes: 0 success, 1 verification mismatch, 2 configuration or usage
//! error, 3 corrupt sketch file.

pub mod bench;
pub mod sketchio;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{recover_blocks, sketch_blocks, BlockedSketch};
use crate::error::{Error, Result};
use crate::params::{Mode, PlanConfig, ProblemDims, DEFAULT_C1};
use crate::rsidft::{Classifier, DecoderConfig, MatchReport};
use crate::signal::{oracle_positions, plant_matches, MatchSpec, Signal, SignalFormat};

#[derive(Debug, Parser)]
#[command(name = "sparsematch", version, about = "Sub-linear substring matching on ±1 data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random database and query with planted matches.
    Gen(GenArgs),
    /// Sketch a database file.
    Sketch(SketchArgs),
    /// Find a query in a sketched database; prints position,value CSV.
    Query(QueryArgs),
    /// Monte Carlo miss probability against sample gain.
    Bench(BenchArgs),
    /// Compare the decoder against the brute-force oracle.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Exact,
    Approx,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => Mode::Exact,
            ModeArg::Approx => Mode::Approximate,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClassifierArg {
    Matched,
    ZeroShift,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Raw,
    Ascii,
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: ModeArg,
    /// Mismatch budget K (approximate mode).
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "matched")]
    pub classifier: ClassifierArg,
}

impl MatchArgs {
    fn decoder(&self) -> DecoderConfig {
        let classifier = match self.classifier {
            ClassifierArg::Matched => Classifier::Matched,
            ClassifierArg::ZeroShift => Classifier::ZeroShift,
        };
        DecoderConfig { classifier, ..Default::default() }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    /// Sampling exponent: the shortest stage has about N^alpha bins.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of stages d.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Number of branches B per stage.
    #[arg(long)]
    pub branches: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_C1)]
    pub c1: f64,
    /// Number of database blocks G.
    #[arg(long, default_value_t = 1)]
    pub blocks: usize,
    /// Accept plans below the alpha > 1 - mu bound.
    #[arg(long)]
    pub allow_undersampled: bool,
    #[arg(long, env = "SPARSEMATCH_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Peak memory allowance in MiB.
    #[arg(long)]
    pub memory_budget: Option<u64>,
}

impl PlanArgs {
    fn config(&self) -> PlanConfig {
        PlanConfig {
            stages: self.stages,
            alpha: self.alpha,
            branches: self.branches,
            c1: self.c1,
            allow_undersampled: self.allow_undersampled,
            ..Default::default()
        }
    }

    fn budget_bytes(&self) -> Option<u64> {
        self.memory_budget.map(|mib| mib.saturating_mul(1 << 20))
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    /// Number of planted matches L.
    #[arg(long, default_value_t = 1)]
    pub matches: usize,
    /// Symbols flipped in each planted copy.
    #[arg(long, default_value_t = 0)]
    pub flips: usize,
    #[arg(long, env = "SPARSEMATCH_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "raw")]
    pub format: FormatArg,
    #[arg(long)]
    pub db_out: PathBuf,
    #[arg(long)]
    pub query_out: PathBuf,
    /// Planted positions, one per line.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SketchArgs {
    #[arg(long)]
    pub db: PathBuf,
    /// Query length the sketch is planned for.
    #[arg(long)]
    pub m: usize,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub sketch: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    #[command(flatten)]
    pub matching: MatchArgs,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    #[command(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    pub plan: PlanArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Database lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1000000")]
    pub n: Vec<usize>,
    /// Query length; defaults to floor(N^mu).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub mu: f64,
    /// Planted matches L per trial.
    #[arg(long, default_value_t = 100)]
    pub matches: usize,
    /// Mismatch fraction K/M (approximate mode); overrides --k.
    #[arg(long)]
    pub eta: Option<f64>,
    #[command(flatten)]
    pub matching: MatchArgs,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Sampling exponents as lo:hi:steps; overrides --alpha.
    #[arg(long)]
    pub sweep: Option<String>,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses the process arguments and runs the command.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Runs one command and returns its exit code.
pub fn execute(command: Command) -> Result<u8> {
    match command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Sketch(a) => cmd_sketch(&a),
        Command::Query(a) => cmd_query(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Verify(a) => cmd_verify(&a),
    }
}

fn read_nonempty(path: &Path, what: &str) -> Result<Signal> {
    let s = Signal::read_file(path)?;
    if s.is_empty() {
        return Err(Error::InvalidInput(format!("{what} file {} is empty", path.display())));
    }
    Ok(s)
}

fn cmd_gen(a: &GenArgs) -> Result<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let spec = MatchSpec::random(a.n, a.m, a.matches, a.flips, &mut rng)?;
    let (x, y) = plant_matches(a.n, a.m, &spec, a.seed)?;
    let format = match a.format {
        FormatArg::Raw => SignalFormat::Raw,
        FormatArg::Ascii => SignalFormat::Ascii,
    };
    x.write_file(&a.db_out, format)?;
    y.write_file(&a.query_out, format)?;
    if let Some(path) = &a.truth_out {
        let text: String = spec.positions.iter().map(|p| format!("{p}\n")).collect();
        fs::write(path, text)?;
    }
    Ok(0)
}

fn build_sketch(db: &Signal, dims: &ProblemDims, plan: &PlanArgs) -> Result<BlockedSketch> {
    let sketch = sketch_blocks(db, dims, &plan.config(), plan.seed, plan.blocks)?;
    if let Some(budget) = plan.budget_bytes() {
        let need: u64 = sketch.sketches.iter().map(|s| bench::estimate_memory(&s.plan)).sum();
        if need > budget {
            return Err(Error::InvalidInput(format!(
                "sketch needs about {} MiB, budget is {} MiB",
                need >> 20,
                budget >> 20
            )));
        }
    }
    Ok(sketch)
}

fn sample_summary(sketch: &BlockedSketch) -> (usize, f64) {
    let samples: usize = sketch.sketches.iter().map(|s| s.sample_count()).sum();
    (samples, sketch.layout.n_db as f64 / samples as f64)
}

fn cmd_sketch(a: &SketchArgs) -> Result<u8> {
    let db = read_nonempty(&a.db, "database")?;
    let dims = ProblemDims::new(db.len(), a.m, a.k, a.mode.into())?;
    let sketch = build_sketch(&db, &dims, &a.plan)?;
    sketchio::save(&sketch, &a.out)?;
    let (samples, gain) = sample_summary(&sketch);
    println!("samples={samples} sample_gain={gain:.4} blocks={}", sketch.layout.block_count);
    for (b, s) in sketch.sketches.iter().enumerate() {
        println!("block {b}: {}", s.plan);
    }
    Ok(0)
}

fn query_dims(sketch: &BlockedSketch, query: &Signal, m: &MatchArgs) -> Result<ProblemDims> {
    let dims = ProblemDims::new(sketch.layout.n_db, query.len(), m.k, m.mode.into())?;
    let planned = sketch.layout.overlap + 1;
    if planned != query.len() {
        eprintln!(
            "warning: sketch was planned for queries of length {planned}, got {}",
            query.len()
        );
        if let Ok(block) = dims.with_n_db(sketch.layout.span()) {
            if let Some(s) = sketch.sketches.first() {
                if s.plan.alpha <= 1.0 - block.mu() {
                    eprintln!("warning: the sketch under-samples this query length");
                }
            }
        }
    }
    Ok(dims)
}

fn write_report<W: Write>(report: &MatchReport, out: &mut W) -> io::Result<()> {
    writeln!(out, "position,value")?;
    for (p, v) in report.positions.iter().zip(&report.values) {
        writeln!(out, "{p},{v}")?;
    }
    Ok(())
}

fn cmd_query(a: &QueryArgs) -> Result<u8> {
    let sketch = sketchio::load(&a.sketch)?;
    let query = read_nonempty(&a.query, "query")?;
    let dims = query_dims(&sketch, &query, &a.matching)?;
    if query.len() > sketch.layout.span() {
        return Err(Error::InvalidInput("query is longer than a sketched block".into()));
    }
    let report = recover_blocks(&sketch, &query, &dims, &a.matching.decoder())?;
    match &a.out {
        Some(path) => write_report(&report, &mut fs::File::create(path)?)?,
        None => write_report(&report, &mut io::stdout().lock())?,
    }
    Ok(0)
}

fn cmd_verify(a: &VerifyArgs) -> Result<u8> {
    let db = read_nonempty(&a.db, "database")?;
    let query = read_nonempty(&a.query, "query")?;
    let dims = ProblemDims::new(db.len(), query.len(), a.matching.k, a.matching.mode.into())?;
    let sketch = build_sketch(&db, &dims, &a.plan)?;
    let report = recover_blocks(&sketch, &query, &dims, &a.matching.decoder())?;
    let oracle = oracle_positions(&db, &query, dims.k_mismatch)?;
    let missing: Vec<usize> =
        oracle.iter().copied().filter(|p| report.positions.binary_search(p).is_err()).collect();
    let extra: Vec<usize> =
        report.positions.iter().copied().filter(|p| oracle.binary_search(p).is_err()).collect();
    println!("oracle={} recovered={}", oracle.len(), report.positions.len());
    println!("missing={missing:?}");
    println!("extra={extra:?}");
    Ok(if missing.is_empty() && extra.is_empty() { 0 } else { 1 })
}

fn cmd_bench(a: &BenchArgs) -> Result<u8> {
    let alphas: Vec<Option<f64>> = match &a.sweep {
        Some(s) => bench::parse_sweep(s)?.into_iter().map(Some).collect(),
        None => vec![a.plan.alpha],
    };
    let mut rows = Vec::new();
    for &n in &a.n {
        let m = a.m.unwrap_or_else(|| (n as f64).powf(a.mu).floor() as usize);
        let k = match a.eta {
            Some(eta) => (eta * m as f64).floor() as usize,
            None => a.matching.k,
        };
        let scenario = bench::Scenario {
            n,
            m,
            matches: a.matches,
            mode: a.matching.mode.into(),
            k,
            trials: a.trials,
            seed: a.plan.seed,
            plan: PlanConfig { allow_undersampled: true, ..a.plan.config() },
            decoder: a.matching.decoder(),
            memory_budget: a.plan.budget_bytes(),
        };
        for &alpha in &alphas {
            let row = bench::run_point(&scenario, alpha)?;
            eprintln!(
                "n={n} alpha={} gain={:.3} p_miss={:.4} query={:.4}s",
                alpha.map_or("auto".to_string(), |x| format!("{x:.4}")),
                row.sample_gain,
                row.p_miss,
                row.mean_query_secs
            );
            rows.push(row);
        }
    }
    match &a.out {
        Some(path) => bench::write_csv(&rows, &mut fs::File::create(path)?)?,
        None => bench::write_csv(&rows, &mut io::stdout().lock())?,
    }
    if rows.len() >= 3 {
        let gains: Vec<f64> = rows.iter().map(|r| r.sample_gain).collect();
        let miss: Vec<f64> = rows.iter().map(|r| r.p_miss).collect();
        eprintln!("spearman(sample_gain, p_miss)={:.4}", bench::spearman(&gains, &miss));
    }
    Ok(0)
}
