use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "bayfactor", version, about = "Bayesian factor-model prediction: fit, predict, simulate, validate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a model and write model.json and fit_report.json.
    Fit(FitArgs),
    /// Predict from a saved model.
    Predict(PredictArgs),
    /// Generate a simulation scenario as CSV files.
    Simulate(SimulateArgs),
    /// Run the simulation benchmark and write per-replication and median CSVs.
    Benchmark(BenchmarkArgs),
    /// Compare the Gibbs posterior-mean rule with the VB rule on a dataset.
    GibbsCheck(GibbsCheckArgs),
    /// Write the standardized version of a dataset.
    Standardize(StandardizeArgs),
    /// Run the acceptance checks and print one line per criterion.
    Check(CheckArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodArg {
    Vb,
    EbVb,
    Mle,
    Pml,
    Em,
    TwoStep,
    Ridge,
    Gibbs,
}

impl MethodArg {
    pub fn name(self) -> &'static str {
        match self {
            MethodArg::Vb => "vb",
            MethodArg::EbVb => "eb-vb",
            MethodArg::Mle => "mle",
            MethodArg::Pml => "pml",
            MethodArg::Em => "em",
            MethodArg::TwoStep => "two-step",
            MethodArg::Ridge => "ridge",
            MethodArg::Gibbs => "gibbs",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutcomeArg {
    Linear,
    Binomial,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EbModeArg {
    Off,
    Free,
    Constrained,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictMode {
    Plugin,
    Mc,
    Taylor,
}

/// Options shared by commands that read a training CSV.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Training CSV with a header row; an empty outcome cell marks an unlabeled row.
    #[arg(long)]
    pub input: PathBuf,
    /// Group sidecar: one integer label (1..G) per feature, one per line.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutcomeArg::Linear)]
    pub outcome: OutcomeArg,
    /// Name of the outcome column.
    #[arg(long, default_value = "y")]
    pub label_column: String,
    /// Name of the trials column (binomial outcomes; defaults to one trial per row).
    #[arg(long, default_value = "trials")]
    pub trials_column: String,
    /// Use rows with a blank outcome as unlabeled observations.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub m_unlabeled_from_blanks: bool,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Vb)]
    pub method: MethodArg,
    /// Latent dimension: a positive integer or "kaiser".
    #[arg(long, default_value = "kaiser")]
    pub d: String,
    /// Empirical-Bayes mode; defaults to off for vb and constrained for eb-vb.
    #[arg(long, value_enum)]
    pub eb_mode: Option<EbModeArg>,
    /// Master seed, expanded to named per-component streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative convergence tolerance of iterative estimators.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    /// Gibbs iterations, burn-in and thinning.
    #[arg(long, default_value_t = 5000)]
    pub n_iter: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 2)]
    pub thin: usize,
    /// Cross-validation folds for the penalized and ridge methods.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Write retained Gibbs draws to this CSV.
    #[arg(long)]
    pub draws_out: Option<PathBuf>,
    /// Record wall-clock time in the report (otherwise 0, keeping output reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Feature CSV; outcome and trials columns, if present, are ignored.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = PredictMode::Plugin)]
    pub predict_mode: PredictMode,
    /// Posterior draws for mc and taylor (logistic) predictions.
    #[arg(long, default_value_t = 1000)]
    pub mc_draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 2)]
    pub scenario: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Labeled rows.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Unlabeled rows.
    #[arg(long, default_value_t = 0)]
    pub m: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_test: usize,
    /// Output directory (train.csv, test.csv, groups.txt, truth.json).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct BenchmarkArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub scenarios: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "null,ridge,two-step,em-pml,vb,eb-vb")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,50,100")]
    pub m_values: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub replications: usize,
    /// Use the full grid: m in {0, 50, 100, 200, 500} and 50 replications.
    #[arg(long)]
    pub full_grid: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// VB relative tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long)]
    pub timing: bool,
    /// Output directory (benchmark.csv, medians.csv).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct GibbsCheckArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "kaiser")]
    pub d: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 5000)]
    pub n_iter: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 2)]
    pub thin: usize,
    #[arg(long)]
    pub draws_out: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct StandardizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Standardized CSV (labeled rows first).
    #[arg(long)]
    pub out: PathBuf,
    /// Write the fitted transform as JSON.
    #[arg(long)]
    pub transform_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct CheckArgs {
    /// Run only these criteria (key or number); repeatable.
    #[arg(long)]
    pub criterion: Vec<String>,
    /// Corrupt the state in the monotonicity check (test fixture).
    #[arg(long, hide = true)]
    pub force_failure: bool,
}
