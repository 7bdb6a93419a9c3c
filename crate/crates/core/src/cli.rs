//! Command-line front end: argument and config-file parsing, dispatch to the
//! library, and CSV/JSON encoding of the results.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dos::{self, GapRow, IdsFunction};
use crate::error::Error;
use crate::fibword::fib_word;
use crate::fractal::{self, DimensionEstimate, ParamRow, ProfilePoint};
use crate::interval::IntervalSet;
use crate::jacobi::{band_edges_oracle, Cell, Coupling};
use crate::spectrum::{self, MeasureRow, DEFAULT_TOL};
use crate::tracemap::{self, OrbitResult, TraceTriple};
use crate::transfer::cell_half_trace;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "FIBSPEC_THREADS";

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const VERIFICATION: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Numerical(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Numerical(_) => exit::NUMERICAL,
            CliError::Verification(_) => exit::VERIFICATION,
            CliError::Io(_) => exit::IO,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::EmptyInput
            | Error::InvalidArgument(_)
            | Error::ZeroHopping
            | Error::BoundTooSmall { .. }
            | Error::MatrixTooLarge { .. }
            | Error::OutsideCover(_)
            | Error::WindowMissesSpectrum => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Band spectra, Cantor-spectrum covers and fractal dimensions of Fibonacci
/// Jacobi operators via the trace map.
///
/// Options may also be read from a config file of `key = value` lines
/// (keys are long option names); flags on the command line take precedence.
#[derive(Debug, Parser)]
#[command(name = "fibspec", version, about)]
struct Cli {
    /// Config file with one `key = value` per line.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output encoding.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Write the result here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Seed for sampling-based reports.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

fn parse_p(s: &str) -> Result<f64, String> {
    let p = parse_finite(s)?;
    if p == 0.0 {
        return Err("p must be nonzero".into());
    }
    Ok(p)
}

fn parse_finite(s: &str) -> Result<f64, String> {
    let x: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !x.is_finite() {
        return Err("value must be finite".into());
    }
    Ok(x)
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let x = parse_finite(s)?;
    if x <= 0.0 {
        return Err("value must be positive".into());
    }
    Ok(x)
}

fn parse_level(s: &str) -> Result<usize, String> {
    let k: usize = s.trim().parse().map_err(|_| format!("`{s}` is not a level"))?;
    if !(2..=crate::fibword::DEFAULT_MAX_LEVEL).contains(&k) {
        return Err(format!("level must lie in 2..={}", crate::fibword::DEFAULT_MAX_LEVEL));
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Args, Serialize, Deserialize)]
pub struct CouplingArgs {
    /// Hopping on letter b (hopping on a is 1).
    #[arg(long, default_value_t = 1.0, value_parser = parse_p, allow_hyphen_values = true)]
    pub p: f64,

    /// Potential on letter b (potential on a is 0).
    #[arg(long, default_value_t = 0.0, value_parser = parse_finite, allow_hyphen_values = true)]
    pub q: f64,
}

impl CouplingArgs {
    pub fn coupling(&self) -> Result<Coupling, CliError> {
        Ok(Coupling::new(self.p, self.q)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandSet {
    /// Floquet bands {|x_k| ≤ 1}.
    Bands,
    /// {|x_k| ≤ C}.
    TraceBounded,
    /// Union of the trace-bounded sets at levels k and k+1.
    Approx,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Fibonacci word at a level.
    Word {
        /// Level k; the word has length F_k.
        #[arg(long)]
        level: usize,
    },
    /// Band edges from dense diagonalization of the periodic cell.
    Oracle {
        /// Approximant level k (period F_k), 2..=30.
        #[arg(long, value_parser = parse_level)]
        level: usize,
        #[command(flatten)]
        coupling: CouplingArgs,
    },
    /// Trace-map orbit of the initial condition at an energy.
    Orbit {
        /// Energy.
        #[arg(long, value_parser = parse_finite, allow_hyphen_values = true)]
        lambda: f64,
        #[command(flatten)]
        coupling: CouplingArgs,
        #[arg(long, default_value_t = tracemap::DEFAULT_MAXITER)]
        maxiter: usize,
        /// Escape bound [default: max(1, |(1+p²)/2p|) + 1].
        #[arg(long = "C", value_parser = parse_positive)]
        bound: Option<f64>,
    },
    /// Band set of the level-k periodic approximant.
    Bands {
        /// Approximant level k (period F_k), 2..=30.
        #[arg(long, value_parser = parse_level)]
        level: usize,
        #[command(flatten)]
        coupling: CouplingArgs,
        #[arg(long, value_enum, default_value_t = BandSet::Bands)]
        set: BandSet,
        /// Trace bound for the trace-bounded and approx sets
        /// [default: max(1, |(1+p²)/2p|) + 1].
        #[arg(long = "C", value_parser = parse_positive)]
        bound: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_TOL, value_parser = parse_positive)]
        tol: f64,
        /// Attach this many discriminant samples (JSON only).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Escape-time cover of the spectrum.
    Spectrum {
        #[command(flatten)]
        coupling: CouplingArgs,
        #[arg(long, default_value_t = 30)]
        depth: usize,
        #[arg(long, default_value_t = 1e-4, value_parser = parse_positive)]
        resolution: f64,
        /// Escape bound [default: max(1, |(1+p²)/2p|) + 1].
        #[arg(long = "C", value_parser = parse_positive)]
        bound: Option<f64>,
    },
    /// Band counts and measure of the approximate spectrum over levels.
    MeasureScan {
        #[arg(long, default_value_t = 4, value_parser = parse_level)]
        kmin: usize,
        #[arg(long, default_value_t = 16, value_parser = parse_level)]
        kmax: usize,
        #[command(flatten)]
        coupling: CouplingArgs,
        /// Trace bound [default: max(1, |(1+p²)/2p|) + 1].
        #[arg(long = "C", value_parser = parse_positive)]
        bound: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_TOL, value_parser = parse_positive)]
        tol: f64,
    },
    /// Box-counting dimension of the level-k cover.
    Dimension {
        /// Approximant level k (period F_k), 2..=30.
        #[arg(long, value_parser = parse_level)]
        level: usize,
        #[command(flatten)]
        coupling: CouplingArgs,
        /// Also report local estimates on this many equal-count windows.
        #[arg(long)]
        windows: Option<usize>,
        /// Number of geometric scales in the regression.
        #[arg(long, default_value_t = fractal::DEFAULT_N_SCALES)]
        n_scales: usize,
    },
    /// Local dimension profile over equal-count windows.
    Profile {
        /// Approximant level k (period F_k), 2..=30.
        #[arg(long, value_parser = parse_level)]
        level: usize,
        #[command(flatten)]
        coupling: CouplingArgs,
        #[arg(long, default_value_t = 5)]
        windows: usize,
        /// Number of geometric scales in the regression.
        #[arg(long, default_value_t = fractal::DEFAULT_N_SCALES)]
        n_scales: usize,
    },
    /// Global dimension for each coupling in a CSV file of (p, q) rows.
    Scan {
        #[arg(long)]
        path: PathBuf,
        /// Approximant level k (period F_k), 2..=30.
        #[arg(long, value_parser = parse_level)]
        level: usize,
        /// Number of geometric scales in the regression.
        #[arg(long, default_value_t = fractal::DEFAULT_N_SCALES)]
        n_scales: usize,
    },
    /// Integrated density of states and its pointwise dimension.
    Dos {
        /// Approximant level k (period F_k), 2..=30.
        #[arg(long, value_parser = parse_level)]
        level: usize,
        #[command(flatten)]
        coupling: CouplingArgs,
        /// Pointwise dimension at this energy.
        #[arg(long, value_parser = parse_finite, allow_hyphen_values = true, conflicts_with = "report")]
        at: Option<f64>,
        /// Local-vs-pointwise dimension report over this many sampled energies.
        #[arg(long)]
        report: Option<usize>,
    },
    /// Mesh on the invariant surface I = v.
    Surface {
        /// Invariant level.
        #[arg(long, value_parser = parse_finite, allow_hyphen_values = true)]
        v: f64,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 2.0, value_parser = parse_positive)]
        extent: f64,
    },
    /// Cross-check the trace map against matrix computations.
    Verify,
}

/// A validated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

/// Reads `key = value` lines; blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected `key = value`", path.display(), i + 1)))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("{}:{}: invalid key", path.display(), i + 1)));
        }
        pairs.push((key, v.trim().to_string()));
    }
    Ok(pairs)
}

fn config_path(args: &[String]) -> Option<PathBuf> {
    args.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            args.get(i + 1).map(PathBuf::from)
        } else {
            a.strip_prefix("--config=").map(PathBuf::from)
        }
    })
}

fn given_on_command_line(args: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    args.iter().any(|a| a == &flag || a.starts_with(&format!("{flag}=")))
}

/// Appends config-file options not already given on the command line.
fn inject_config(args: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let cmd = Cli::command();
    let sub = args
        .iter()
        .skip(1)
        .find_map(|a| cmd.find_subcommand(a))
        .ok_or_else(|| CliError::Usage("a subcommand is required".into()))?;
    let known: BTreeSet<String> = cmd
        .get_arguments()
        .chain(sub.get_arguments())
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    let mut out = args.clone();
    for (key, value) in read_config_file(&path)? {
        if !known.contains(&key) {
            return Err(CliError::Usage(format!(
                "config key `{key}` is not an option of `{}`",
                sub.get_name()
            )));
        }
        if given_on_command_line(&args, &key) {
            continue;
        }
        out.push(format!("--{key}={value}"));
    }
    Ok(out)
}

/// Parses `argv` (including the program name) into a validated config.
/// Help and version requests surface as `Err(clap::Error)` with a zero
/// exit code.
pub fn parse_args<I, S>(argv: I) -> Result<RunConfig, ParseFailure>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = argv.into_iter().map(Into::into).collect();
    let args = inject_config(args).map_err(ParseFailure::Config)?;
    let cli = Cli::try_parse_from(args).map_err(ParseFailure::Clap)?;
    validate(&cli.command).map_err(ParseFailure::Config)?;
    Ok(RunConfig { command: cli.command, format: cli.format, out: cli.out, seed: cli.seed })
}

#[derive(Debug)]
pub enum ParseFailure {
    Clap(clap::Error),
    Config(CliError),
}

fn validate(cmd: &Command) -> Result<(), CliError> {
    let usage = |m: &str| Err(CliError::Usage(m.to_string()));
    match cmd {
        Command::MeasureScan { kmin, kmax, .. } if kmax < kmin => usage("kmax must be at least kmin"),
        Command::Spectrum { depth, .. } if *depth < 2 => usage("depth must be at least 2"),
        Command::Profile { windows, .. } if *windows < 3 => usage("a profile needs at least 3 windows"),
        Command::Dimension { windows: Some(w), .. } if *w < 3 => usage("a profile needs at least 3 windows"),
        Command::Dimension { n_scales, .. } | Command::Profile { n_scales, .. } | Command::Scan { n_scales, .. }
            if *n_scales < 5 =>
        {
            usage("need at least 5 scales")
        }
        Command::Dos { report: Some(n), .. } if *n < 5 => usage("a report needs at least 5 points"),
        Command::Surface { n, .. } if *n < 2 => usage("mesh needs n ≥ 2"),
        _ => Ok(()),
    }
}

/// A JSON artifact: the result together with the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub version: String,
    pub config: RunConfig,
    pub result: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordRecord {
    pub level: usize,
    pub length: usize,
    pub word: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandsRecord {
    pub k: usize,
    pub coupling: Coupling,
    pub set: BandSet,
    pub bound: Option<f64>,
    pub band_count: usize,
    pub touchings: Option<usize>,
    pub measure: f64,
    pub bands: IntervalSet,
    pub discriminant_samples: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverRecord {
    pub coupling: Coupling,
    pub measure: f64,
    pub cover: IntervalSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub lambda: f64,
    pub invariant: f64,
    pub bound: f64,
    pub escape: OrbitResult,
    pub points: Vec<TraceTriple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionRecord {
    pub estimate: f64,
    pub slope: f64,
    pub stderr: f64,
    pub r2: f64,
    pub scales: (f64, f64),
    pub converged: bool,
    pub windows: Option<Vec<ProfilePoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdsRecord {
    pub k: usize,
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub energy: f64,
    pub ids: f64,
    pub pointwise: DimensionEstimate,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
}

/// Couplings the oracle cross-checks run on.
pub const CHECK_COUPLINGS: [(f64, f64); 5] = [(1.0, 0.0), (2.0, 0.0), (1.0, 2.0), (2.0, 1.0), (0.5, -1.0)];

fn check_couplings() -> Vec<Coupling> {
    CHECK_COUPLINGS.iter().map(|&(p, q)| Coupling::new(p, q).expect("nonzero hopping")).collect()
}

/// Trace-map half-traces against cell monodromies, k = 2..12.
pub fn check_trace_vs_cocycle(seed: u64) -> crate::Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for c in check_couplings() {
        let (lo, hi) = spectrum::search_bounds(&c);
        for k in 2..=12 {
            let cell = Cell::trace_family(k);
            for _ in 0..20 {
                let lambda = rng.gen_range(lo..hi);
                let t = spectrum::trace_poly_eval(k, lambda, &c)?.value;
                let m = cell_half_trace(&cell, lambda, &c);
                worst = worst.max((t - m).abs() / m.abs().max(1.0));
                cases += 1;
            }
        }
    }
    Ok(CheckOutcome { name: "trace-vs-cocycle".into(), passed: worst <= 1e-9, max_error: worst, tolerance: 1e-9, cases })
}

/// Band edges against dense diagonalization, k = 2..8.
pub fn check_bands_vs_oracle() -> crate::Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut shape_ok = true;
    for c in check_couplings() {
        for k in 2..=8 {
            let b = spectrum::bands(k, &c, 1e-12)?;
            let o = band_edges_oracle(k, &c)?;
            cases += 1;
            if b.bands.len() != o.len() {
                shape_ok = false;
                continue;
            }
            for (x, y) in b.bands.intervals().iter().zip(o.intervals()) {
                worst = worst.max((x.0 - y.0).abs()).max((x.1 - y.1).abs());
            }
        }
    }
    Ok(CheckOutcome {
        name: "bands-vs-oracle".into(),
        passed: shape_ok && worst <= 1e-8,
        max_error: if shape_ok { worst } else { f64::INFINITY },
        tolerance: 1e-8,
        cases,
    })
}

/// A random start on a bounded invariant surface: half from the compact
/// component of `I = V < 0` inside the unit cube, half from the torus image
/// (`I = 0`). Both families are forward invariant, so the orbits stay bounded.
pub fn bounded_start(rng: &mut impl Rng) -> TraceTriple {
    if rng.gen_bool(0.5) {
        return tracemap::torus_factor(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
    }
    loop {
        let t = TraceTriple::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if tracemap::invariant(t) < 0.0 {
            return t;
        }
    }
}

/// Conservation of the invariant along 500 bounded orbits of length 40.
pub fn check_invariant_conservation(seed: u64) -> crate::Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    let cases = 500;
    for _ in 0..cases {
        let t0 = bounded_start(&mut rng);
        let i0 = tracemap::invariant(t0);
        let mut t = t0;
        for _ in 0..40 {
            t = tracemap::step(t);
            if t.max_abs() > 1e6 {
                break;
            }
            worst = worst.max((tracemap::invariant(t) - i0).abs() / (1.0 + i0.abs()));
        }
    }
    Ok(CheckOutcome { name: "invariant-conservation".into(), passed: worst <= 1e-8, max_error: worst, tolerance: 1e-8, cases })
}

pub fn verify_suite(seed: u64) -> crate::Result<Vec<CheckOutcome>> {
    Ok(vec![check_trace_vs_cocycle(seed)?, check_bands_vs_oracle()?, check_invariant_conservation(seed)?])
}

/// 17 significant digits: enough to round-trip any `f64`.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

struct Csv(String);

impl Csv {
    fn new(header: &[&str]) -> Self {
        Csv(format!("{}\n", header.join(",")))
    }

    fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.0, "{}", fields.join(","));
    }
}

fn intervals_csv(s: &IntervalSet) -> String {
    let mut csv = Csv::new(&["band_index", "left", "right"]);
    for (i, (l, r)) in s.intervals().iter().enumerate() {
        csv.row(&[i.to_string(), num(*l), num(*r)]);
    }
    csv.0
}

fn status(converged: bool) -> String {
    if converged { "converged" } else { "unconverged" }.to_string()
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Encoded output of a run and whether it signals verification failure.
pub struct Output {
    pub text: String,
    pub failed_checks: Vec<String>,
}

fn json<T: Serialize>(config: &RunConfig, result: T) -> Result<String, CliError> {
    let art = Artifact { version: VERSION.to_string(), config: config.clone(), result };
    let mut s = serde_json::to_string_pretty(&art).map_err(|e| CliError::Numerical(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn encode<T: Serialize>(config: &RunConfig, result: T, csv: impl FnOnce(&T) -> String) -> Result<String, CliError> {
    match config.format {
        Format::Csv => Ok(csv(&result)),
        Format::Json => json(config, result),
    }
}

fn resolve_bound(bound: Option<f64>, c: &Coupling) -> f64 {
    bound.unwrap_or_else(|| tracemap::default_bound(c))
}

/// Reads (p, q) rows; a non-numeric first line is taken as a header.
pub fn read_couplings(path: &Path) -> Result<Vec<Coupling>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [p, q] => p.parse::<f64>().ok().zip(q.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((p, q)) => out.push(Coupling::new(p, q).map_err(|e| {
                CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1))
            })?),
            None if out.is_empty() && i == 0 => continue,
            None => return Err(CliError::Usage(format!("{}:{}: expected `p,q`", path.display(), i + 1))),
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{} holds no couplings", path.display())));
    }
    Ok(out)
}

/// Executes a validated config and encodes its result.
pub fn run(config: &RunConfig) -> Result<Output, CliError> {
    let mut failed_checks = Vec::new();
    let text = match &config.command {
        Command::Word { level } => {
            let w = fib_word(*level)?;
            let record = WordRecord { level: *level, length: w.len(), word: w.to_string() };
            encode(config, record, |r| format!("{}\n", r.word))?
        }
        Command::Oracle { level, coupling } => {
            let bands = band_edges_oracle(*level, &coupling.coupling()?)?;
            match config.format {
                Format::Csv => intervals_csv(&bands),
                Format::Json => json(config, bands)?,
            }
        }
        Command::Orbit { lambda, coupling, maxiter, bound } => {
            let c = coupling.coupling()?;
            let bound = resolve_bound(*bound, &c);
            let record = OrbitRecord {
                lambda: *lambda,
                invariant: tracemap::invariant_on_line(*lambda, &c),
                bound,
                escape: tracemap::escape_time(*lambda, &c, bound, *maxiter)?,
                points: tracemap::orbit(*lambda, &c, *maxiter)?,
            };
            encode(config, record, |r| {
                let mut csv = Csv::new(&["index", "x", "y", "z", "invariant"]);
                for (i, t) in r.points.iter().enumerate() {
                    csv.row(&[i.to_string(), num(t.x), num(t.y), num(t.z), num(tracemap::invariant(*t))]);
                }
                csv.0
            })?
        }
        Command::Bands { level, coupling, set, bound, tol, samples } => {
            let c = coupling.coupling()?;
            let record = match set {
                BandSet::Bands => {
                    let mut b = spectrum::bands(*level, &c, *tol)?;
                    if let Some(n) = samples {
                        b = b.with_samples(*n);
                    }
                    BandsRecord {
                        k: b.k,
                        coupling: c,
                        set: *set,
                        bound: None,
                        band_count: b.band_count,
                        touchings: Some(b.touchings()),
                        measure: b.bands.measure(),
                        bands: b.bands,
                        discriminant_samples: b.discriminant_samples,
                    }
                }
                BandSet::TraceBounded | BandSet::Approx => {
                    let bound = resolve_bound(*bound, &c);
                    tracemap::check_bound(bound, &c)?;
                    let s = if *set == BandSet::Approx {
                        spectrum::approx_spectrum(*level, &c, bound, *tol)?
                    } else {
                        spectrum::trace_bounded_set(*level, &c, bound, *tol)?
                    };
                    BandsRecord {
                        k: *level,
                        coupling: c,
                        set: *set,
                        bound: Some(bound),
                        band_count: s.len(),
                        touchings: None,
                        measure: s.measure(),
                        bands: s,
                        discriminant_samples: None,
                    }
                }
            };
            encode(config, record, |r| intervals_csv(&r.bands))?
        }
        Command::Spectrum { coupling, depth, resolution, bound } => {
            let c = coupling.coupling()?;
            let cover = spectrum::escape_spectrum(&c, *depth, *resolution, resolve_bound(*bound, &c))?;
            let record = CoverRecord { coupling: c, measure: cover.measure(), cover };
            encode(config, record, |r| intervals_csv(&r.cover))?
        }
        Command::MeasureScan { kmin, kmax, coupling, bound, tol } => {
            let c = coupling.coupling()?;
            let rows: Vec<MeasureRow> = spectrum::measure_scan(&c, *kmin, *kmax, resolve_bound(*bound, &c), *tol)?;
            encode(config, rows, |rows| {
                let mut csv = Csv::new(&["k", "band_count", "measure"]);
                for r in rows {
                    csv.row(&[r.k.to_string(), r.band_count.to_string(), num(r.measure)]);
                }
                csv.0
            })?
        }
        Command::Dimension { level, coupling, windows, n_scales } => {
            let cover = fractal::spectrum_cover(&coupling.coupling()?, *level)?;
            let d = fractal::global_dimension(&cover, *n_scales)?;
            let windows = windows.map(|w| fractal::dimension_profile_of(&cover, w, *n_scales)).transpose()?;
            let record = DimensionRecord {
                estimate: d.value,
                slope: d.slope,
                stderr: d.stderr,
                r2: d.r_squared,
                scales: d.scales,
                converged: d.converged(),
                windows,
            };
            encode(config, record, |r| {
                let mut csv = Csv::new(&["estimate", "stderr", "r2", "eps_min", "eps_max", "status"]);
                csv.row(&[num(r.estimate), num(r.stderr), num(r.r2), num(r.scales.0), num(r.scales.1), status(r.converged)]);
                csv.0
            })?
        }
        Command::Profile { level, coupling, windows, n_scales } => {
            let cover = fractal::spectrum_cover(&coupling.coupling()?, *level)?;
            let profile = fractal::dimension_profile_of(&cover, *windows, *n_scales)?;
            encode(config, profile, |rows| {
                let mut csv = Csv::new(&["window_center", "value", "stderr", "r2", "status"]);
                for p in rows {
                    let e = &p.estimate;
                    csv.row(&[num(p.center), num(e.value), num(e.stderr), num(e.r_squared), status(e.converged())]);
                }
                csv.0
            })?
        }
        Command::Scan { path, level, n_scales } => {
            let rows: Vec<ParamRow> = fractal::dimension_vs_params(&read_couplings(path)?, *level, *n_scales)?;
            encode(config, rows, |rows| {
                let mut csv = Csv::new(&["p", "q", "estimate", "stderr", "r2", "status"]);
                for r in rows {
                    let e = &r.estimate;
                    csv.row(&[
                        num(r.coupling.p_b),
                        num(r.coupling.q_b),
                        num(e.value),
                        num(e.stderr),
                        num(e.r_squared),
                        status(e.converged()),
                    ]);
                }
                csv.0
            })?
        }
        Command::Dos { level, coupling, at, report } => {
            let c = coupling.coupling()?;
            match (at, report) {
                (Some(e), _) => {
                    let n = dos::ids(*level, &c)?;
                    let d = dos::pointwise_dimension_of(*e, &n, None, dos::DEFAULT_N_SCALES)?;
                    let record = PointRecord {
                        energy: *e,
                        ids: n.eval(*e),
                        pointwise: d,
                        converged: d.r_squared >= dos::POINTWISE_R2,
                    };
                    encode(config, record, |r| {
                        let mut csv = Csv::new(&["energy", "ids", "pointwise", "stderr", "r2", "status"]);
                        let d = &r.pointwise;
                        csv.row(&[num(r.energy), num(r.ids), num(d.value), num(d.stderr), num(d.r_squared), status(r.converged)]);
                        csv.0
                    })?
                }
                (None, Some(count)) => {
                    let rows: Vec<GapRow> = dos::dimension_gap_report(&c, *level, *count, config.seed)?;
                    encode(config, rows, |rows| {
                        let mut csv = Csv::new(&["energy", "pointwise", "pointwise_r2", "local", "local_r2", "gap", "status"]);
                        for r in rows {
                            csv.row(&[
                                num(r.energy),
                                opt_num(r.pointwise.map(|d| d.slope)),
                                opt_num(r.pointwise.map(|d| d.r_squared)),
                                opt_num(r.local.map(|d| d.slope)),
                                opt_num(r.local.map(|d| d.r_squared)),
                                opt_num(r.gap),
                                status(r.converged),
                            ]);
                        }
                        csv.0
                    })?
                }
                (None, None) => {
                    let n: IdsFunction = dos::ids(*level, &c)?;
                    let record = IdsRecord { k: n.k(), breakpoints: n.breakpoints(), values: n.values() };
                    encode(config, record, |r| {
                        let mut csv = Csv::new(&["energy", "ids"]);
                        for (e, v) in r.breakpoints.iter().zip(&r.values) {
                            csv.row(&[num(*e), num(*v)]);
                        }
                        csv.0
                    })?
                }
            }
        }
        Command::Surface { v, n, extent } => {
            let mesh = tracemap::surface_mesh(*v, *extent, *n)?;
            encode(config, mesh, |mesh| {
                let mut csv = Csv::new(&["x", "y", "z"]);
                for t in mesh {
                    csv.row(&[num(t.x), num(t.y), num(t.z)]);
                }
                csv.0
            })?
        }
        Command::Verify => {
            let checks = verify_suite(config.seed)?;
            failed_checks = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
            encode(config, checks, |checks| {
                let mut csv = Csv::new(&["check", "status", "max_error", "tolerance", "cases"]);
                for c in checks {
                    csv.row(&[
                        c.name.clone(),
                        if c.passed { "PASS" } else { "FAIL" }.to_string(),
                        num(c.max_error),
                        num(c.tolerance),
                        c.cases.to_string(),
                    ]);
                }
                csv.0
            })?
        }
    };
    Ok(Output { text, failed_checks })
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))
}

fn write_output(config: &RunConfig, text: &str) -> Result<(), CliError> {
    match &config.out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

/// Runs the tool on `argv` and returns the process exit status.
pub fn main_with_args<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let config = match parse_args(argv) {
        Ok(c) => c,
        Err(ParseFailure::Clap(e)) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
        Err(ParseFailure::Config(e)) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let result = configure_threads().and_then(|_| {
        let out = run(&config)?;
        write_output(&config, &out.text)?;
        if out.failed_checks.is_empty() {
            Ok(())
        } else {
            Err(CliError::Verification(out.failed_checks.join(", ")))
        }
    });
    match result {
        Ok(()) => exit::OK,
        // A closed downstream pipe (`| head`) is not a failure.
        Err(CliError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
