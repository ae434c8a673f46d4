use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sni_core::datasets::{Delimiter, Spectrum};

#[derive(Debug, Parser)]
#[command(
    name = "sni",
    version,
    about = "Low-rank approximation and completion by splitting integration"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Approximate a synthetic matrix with one method and score it against its truncated SVD.
    Approx(ApproxArgs),
    /// Fit observed entries and report held-out RMSE.
    Complete(CompleteArgs),
    /// Compare methods over seeded trials of a synthetic problem.
    Bench(BenchArgs),
    /// Write a synthetic problem as a canonical observation file.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApproxMethod {
    Sni,
    Dlra,
    Power,
    Rsvd,
}

impl ApproxMethod {
    pub fn name(self) -> &'static str {
        match self {
            ApproxMethod::Sni => "sni",
            ApproxMethod::Dlra => "dlra",
            ApproxMethod::Power => "power",
            ApproxMethod::Rsvd => "rsvd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DelimiterArg {
    /// `user<TAB>item<TAB>rating<TAB>timestamp`
    Tab,
    /// `user::item::rating::timestamp`
    Colons,
}

impl From<DelimiterArg> for Delimiter {
    fn from(d: DelimiterArg) -> Self {
        match d {
            DelimiterArg::Tab => Delimiter::Tab,
            DelimiterArg::Colons => Delimiter::DoubleColon,
        }
    }
}

/// Synthetic problem shape shared by `approx`, `bench` and `generate`.
#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    #[arg(long, default_value_t = 500)]
    pub m: usize,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub rank: usize,
    /// `gapped` (linear 10..1 head of length rank, then 0.1 * 0.99^k),
    /// `linear:FIRST:LAST:LEN`, `geometric:FIRST:RATIO:LEN` or
    /// `values:A,B,...`; join pieces with `+`.
    #[arg(long, default_value = "gapped")]
    pub spectrum: String,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Stop when sigma_min(V_prev^T V) exceeds this.
    #[arg(long, default_value_t = 1.0 - 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    /// DLRA step size.
    #[arg(long, default_value_t = 1e-3)]
    pub stepsize: f64,
    /// RSVD oversampling.
    #[arg(long, default_value_t = 10)]
    pub oversample: usize,
    /// RSVD power iterations.
    #[arg(long, default_value_t = 1)]
    pub power_iters: usize,
    /// Power-method sweeps; defaults to the RSVD-matched budget.
    #[arg(long)]
    pub sweeps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ApproxArgs {
    #[arg(long, value_enum, default_value_t = ApproxMethod::Sni)]
    pub method: ApproxMethod,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for report.toml and trace.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Include wall-clock times in the report and trace.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    /// Ratings file (user, item, rating, timestamp); split into train and test.
    #[arg(long, conflicts_with = "train", required_unless_present = "train")]
    pub ratings: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DelimiterArg::Tab)]
    pub delimiter: DelimiterArg,
    /// Skip malformed ratings lines instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Canonical observation file for training.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Canonical observation file for testing; without it the training file is split.
    #[arg(long, requires = "train")]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 10)]
    pub rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0 - 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    /// Secondary stop on relative objective change.
    #[arg(long, default_value_t = 1e-9)]
    pub objective_floor: f64,
    /// Clamp predictions to `LO,HI` before scoring.
    #[arg(long, value_parser = parse_clamp)]
    pub clamp: Option<(f64, f64)>,
    /// Subtract the training mean before fitting and add it back to predictions.
    #[arg(long)]
    pub center: bool,
    /// Hold out this fraction of the training set to choose the iteration
    /// count, then refit on the whole training set. 0 disables.
    #[arg(long, default_value_t = 0.0)]
    pub validation_fraction: f64,
    /// Iterations without validation improvement before the search stops.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated methods.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "sni,power,rsvd,dlra"
    )]
    pub methods: Vec<ApproxMethod>,
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    /// Trial t uses seed SEED + t.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Directory for bench.csv, trials.csv and report.toml.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Probability that an entry is observed.
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_clamp(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected LO,HI, got {s:?}"))?;
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|e| format!("bad lower bound: {e}"))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|e| format!("bad upper bound: {e}"))?;
    if !(lo < hi) {
        return Err(format!("lower bound {lo} must be below upper bound {hi}"));
    }
    Ok((lo, hi))
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| format!("bad number {s:?}: {e}"))
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.trim()
        .parse::<usize>()
        .map_err(|e| format!("bad length {s:?}: {e}"))
}

fn parse_piece(piece: &str, rank: usize, total: usize) -> Result<Spectrum, String> {
    let fields: Vec<&str> = piece.split(':').collect();
    let built = match fields[..] {
        ["gapped"] => Spectrum::gapped(rank, total),
        ["linear", a, b, len] => Spectrum::linear(parse_f64(a)?, parse_f64(b)?, parse_usize(len)?),
        ["geometric", a, q, len] => {
            Spectrum::geometric(parse_f64(a)?, parse_f64(q)?, parse_usize(len)?)
        }
        ["values", list] => list
            .split(',')
            .map(parse_f64)
            .collect::<Result<Vec<_>, _>>()
            .map(Spectrum::new)?,
        _ => return Err(format!("unrecognized spectrum piece {piece:?}")),
    };
    built.map_err(|e| e.to_string())
}

/// Parses the `--spectrum` syntax. `gapped` fills `min(m, n)` values.
pub fn parse_spectrum(s: &str, rank: usize, m: usize, n: usize) -> Result<Spectrum, String> {
    let mut pieces = s.split('+').map(|p| parse_piece(p.trim(), rank, m.min(n)));
    let first = pieces.next().expect("split yields at least one piece")?;
    pieces.try_fold(first, |acc, next| {
        acc.then(next?).map_err(|e| e.to_string())
    })
}
