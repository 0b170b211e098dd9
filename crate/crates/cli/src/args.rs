use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use netpolicy::BasisKind;

use crate::io::MapFormat;

#[derive(Debug, Parser)]
#[command(name = "netpolicy", version, about = "Policy learning under bipartite network interference")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "NETPOLICY_THREADS")]
    pub threads: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Monte Carlo study described by a JSON config.
    Simulate(SimulateArgs),
    /// Fit the outcome and propensity models and report coefficients.
    Fit(FitArgs),
    /// Per-unit total effects with standard errors and tests.
    Effects(FitArgs),
    /// Allocate treatment under a budget.
    Policy(PolicyArgs),
    /// Compare the two greedy policies across budget fractions.
    Sweep(SweepArgs),
    /// Fill in missing treatment costs.
    ImputeCosts(ImputeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON config; unknown keys are rejected. Omit for all defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Covariates of outcome units when the config asks for user-supplied inputs.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,

    #[arg(long)]
    pub interventions: Option<PathBuf>,

    #[arg(long = "h")]
    pub h: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = MapFormat::Auto)]
    pub h_format: MapFormat,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    /// Doubly robust A-learning.
    A,
    /// Least-squares Q-learning.
    Q,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Outcome units CSV: id, y, [person_years,] covariates.
    #[arg(long)]
    pub outcomes: PathBuf,

    /// Intervention units CSV: id, a, [cost,] covariates.
    #[arg(long)]
    pub interventions: PathBuf,

    /// Interference map CSV, dense or `i,j,value` triplets.
    #[arg(long = "h")]
    pub h: PathBuf,

    #[arg(long, value_enum, default_value_t = MapFormat::Auto)]
    pub h_format: MapFormat,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = EstimatorArg::A)]
    pub estimator: EstimatorArg,

    /// Basis of the baseline model.
    #[arg(long, default_value = "linear")]
    pub f0: BasisKind,

    /// Basis of the treatment-effect model.
    #[arg(long, default_value = "linear")]
    pub fa: BasisKind,

    /// Basis of the propensity model (A-learning and trimming).
    #[arg(long, default_value = "linear")]
    pub propensity_basis: BasisKind,

    /// Drop intervention units whose fitted propensity falls below this
    /// quantile, then refit on the rest.
    #[arg(long)]
    pub trim: Option<f64>,

    /// Confidence level of intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Benefit-cost greedy (fractional knapsack).
    Bc,
    /// Rank by total effect alone.
    Te,
    /// Treat every unit with a negative effect.
    Unconstrained,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[command(flatten)]
    pub fit: FitArgs,

    /// Budget as a fraction of the summed cost of all units.
    #[arg(long)]
    pub budget_frac: Option<f64>,

    #[arg(long, value_enum, default_value_t = MethodArg::Bc)]
    pub method: MethodArg,

    /// Leave the fractional unit untreated.
    #[arg(long)]
    pub integral: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub fit: FitArgs,

    /// Comma-separated budget fractions in (0, 1], ascending.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub fractions: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    /// Intervention units CSV with a `cost` column; blank costs are imputed.
    #[arg(long)]
    pub interventions: PathBuf,

    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,

    #[arg(long, default_value_t = 500)]
    pub trees: usize,

    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,

    /// Candidate features per split (default ceil(q/3)).
    #[arg(long)]
    pub mtry: Option<usize>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}
