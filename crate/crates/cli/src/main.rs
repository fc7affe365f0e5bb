//! `otmap` command-line tool.
//!
//! Exit codes: 0 on success, 2 when a fit stopped before converging (its best
//! iterate is still written), 1 on any error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::TargetSpec;

#[derive(Parser, Debug)]
#[command(name = "otmap", version, about = "Fit and apply polynomial transport maps")]
struct Cli {
    /// Log verbosity (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a map (or a sequence of maps) from source samples to a target density.
    Fit(FitArgs),
    /// Push samples forward through a map file.
    Push(ApplyArgs),
    /// Pull samples back through the inverse of a triangular map file.
    Invert(ApplyArgs),
    /// Draw reference samples.
    Sample(SampleArgs),
    /// Bayesian LASSO posterior by transport, Gibbs sampling, or both.
    Lasso(LassoArgs),
    /// Print a multi-index set.
    IndexSet(IndexSetArgs),
}

#[derive(Args, Debug)]
pub struct SolverFlags {
    /// Augmented Lagrangian penalty [default: 1, lasso: 10]
    #[arg(long)]
    pub rho: Option<f64>,
    /// ADMM iteration limit [default: 5000]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Primal and dual residual tolerance [default: 1e-5]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Worker threads [default: $OTMAP_WORKERS, else 1]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Shard partial-sum reduction: shard or strict (worker-count independent) [default: shard]
    #[arg(long)]
    pub reduction: Option<otmap::Reduction>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Source samples CSV, one sample per row.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// gaussian-std or laplace:RATE [default: gaussian-std]
    #[arg(long)]
    pub target: Option<TargetSpec>,
    /// dense, kr or krsv [default: krsv]
    #[arg(long)]
    pub structure: Option<otmap::Structure>,
    /// hermite or monomial [default: hermite]
    #[arg(long)]
    pub family: Option<otmap::UnivariateFamily>,
    /// Maximum total polynomial order [default: 2]
    #[arg(long)]
    pub order: Option<usize>,
    /// Expected sample dimension, checked against the basis size before reading data.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Fit a sequence of this many triangular stages instead of one map.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Transport-cost weight of every stage [default: 1]
    #[arg(long)]
    pub theta: Option<f64>,
    /// Early-stop tolerance on the monitored objective; negative disables [default: 1e-4]
    #[arg(long)]
    pub stop_tol: Option<f64>,
    /// Map document to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Diagnostics CSV [default: <out>.diagnostics.csv]
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct ApplyArgs {
    /// Map document.
    #[arg(long)]
    pub map: PathBuf,
    /// Samples CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Output CSV; rows keep their input order.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SourceChoice {
    /// Independent Laplace coordinates with the given rate.
    Laplace,
    /// Standard Gaussian.
    Gaussian,
    /// Equal mixture of N(-s 1, I) and N(s 1, I).
    Bimodal,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long, value_enum)]
    pub kind: SourceChoice,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Laplace rate.
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    /// Half the distance between the bimodal component means, per axis.
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodChoice {
    Transport,
    Gibbs,
    Both,
}

#[derive(Args, Debug)]
pub struct LassoArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Regression CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Response column [default: medv]
    #[arg(long)]
    pub response: Option<String>,
    /// Laplace prior rate.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Noise variance [default: least-squares residual variance]
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, value_enum, default_value_t = MethodChoice::Transport)]
    pub method: MethodChoice,
    /// Transport map structure [default: dense]
    #[arg(long)]
    pub structure: Option<otmap::Structure>,
    /// Transport map order [default: 4]
    #[arg(long)]
    pub order: Option<usize>,
    /// Prior sample count [default: 2000]
    #[arg(long)]
    pub n_prior: Option<usize>,
    /// Gibbs burn-in sweeps [default: 3000]
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Gibbs draws kept [default: 10000]
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Seed for both prior draws and the Gibbs chain [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: .]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write per-coordinate sample dumps for density plots.
    #[arg(long)]
    pub kde: bool,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct IndexSetArgs {
    #[arg(long)]
    pub structure: otmap::Structure,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub order: usize,
    /// Print only the per-row sizes.
    #[arg(long)]
    pub sizes_only: bool,
}

/// The error chain on one line, skipping causes already spelled out by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Push(a) => commands::push(a),
        Command::Invert(a) => commands::invert(a),
        Command::Sample(a) => commands::sample(a),
        Command::Lasso(a) => commands::lasso(a),
        Command::IndexSet(a) => commands::index_set(a),
    };
    match result {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(1)
        }
    }
}
