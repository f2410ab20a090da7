use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use robospline::simulate::{BetaId, ErrorLaw, PhiVariant, Process};
use robospline::{Criterion, EstimatorOptions, LossFamily, RobustLoss};

#[derive(Debug, Parser)]
#[command(name = "robospline", version, about = "Robust penalized spline estimation for scalar-on-function regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write it as JSON, plus β̂ sampled at 200 points.
    Fit(FitArgs),
    /// Predict responses for new curves with a saved model.
    Predict(PredictArgs),
    /// K-fold cross-validated prediction error.
    Cv(CvArgs),
    /// Monte Carlo run of one simulation scenario.
    Simulate(SimulateArgs),
    /// Monte Carlo runs over a grid of scenarios and losses.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = true)]
pub struct DataArgs {
    /// Combined CSV: a `y` column followed by one column per grid point.
    #[arg(long, conflicts_with_all = ["predictors", "responses"])]
    pub data: Option<PathBuf>,
    /// Predictor CSV: grid values in the header, one curve per row.
    #[arg(long, requires = "responses")]
    pub predictors: Option<PathBuf>,
    /// Response CSV with a single `y` column.
    #[arg(long, requires = "predictors")]
    pub responses: Option<PathBuf>,
}

impl DataArgs {
    pub fn paths(&self) -> Vec<&PathBuf> {
        [&self.data, &self.predictors, &self.responses]
            .into_iter()
            .flatten()
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    #[arg(long, default_value = "huber", value_parser = parse_loss)]
    pub loss: LossFamily,
    /// Tuning constant; defaults to 1.345 (huber) or 4.685 (bisquare).
    #[arg(long)]
    pub c: Option<f64>,
    /// Spline order (4 is cubic).
    #[arg(long, default_value_t = 4)]
    pub p: usize,
    /// Order of the penalized derivative.
    #[arg(long, default_value_t = 2)]
    pub q: usize,
    #[arg(long, default_value_t = 40)]
    pub basis_dim: usize,
    /// Defaults to gcv for the square loss and aicc otherwise.
    #[arg(long, value_parser = parse_criterion)]
    pub criterion: Option<Criterion>,
    /// Fixed smoothing parameter; skips selection.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Subtract the mean curve before fitting.
    #[arg(long)]
    pub center: bool,
}

fn parse_loss(s: &str) -> Result<LossFamily, String> {
    s.parse()
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse()
}

fn parse_beta(s: &str) -> Result<BetaId, String> {
    s.parse()
}

fn parse_process(s: &str) -> Result<Process, String> {
    s.parse()
}

fn parse_error_law(s: &str) -> Result<ErrorLaw, String> {
    s.parse()
}

fn parse_phi(s: &str) -> Result<PhiVariant, String> {
    s.parse()
}

impl EstimatorArgs {
    pub fn options(&self, family: LossFamily, seed: u64) -> Result<EstimatorOptions, String> {
        let c = self.c.unwrap_or(family.default_tuning());
        if !(c > 0.0 && c.is_finite()) {
            return Err(format!("--c must be positive and finite, got {c}"));
        }
        let mut o = EstimatorOptions::with_loss(RobustLoss::new(family, c));
        o.order = self.p;
        o.penalty_order = self.q;
        o.basis_dim = self.basis_dim;
        o.lambda = self.lambda;
        o.center = self.center;
        if let Some(c) = self.criterion {
            o.selection.criterion = c;
        }
        o.initial.seed = seed;
        Ok(o)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Model JSON to write.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Coefficient-function CSV; defaults to the model path with `.beta.csv`.
    #[arg(long)]
    pub coef: Option<PathBuf>,
    /// Seed of the preliminary scale search.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub predictors: PathBuf,
    /// Defaults to standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Fraction of the largest squared errors dropped for the trimmed RMSPE.
    #[arg(long, default_value_t = 0.1)]
    pub trim: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 200)]
    pub replications: usize,
    #[arg(long, default_value = "verbatim", value_parser = parse_phi)]
    pub phi_variant: PhiVariant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "well_spaced", value_parser = parse_process)]
    pub process: Process,
    #[arg(long, default_value = "b1", value_parser = parse_beta)]
    pub beta: BetaId,
    #[arg(long, default_value = "gaussian", value_parser = parse_error_law)]
    pub error: ErrorLaw,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "well_spaced", value_parser = parse_process)]
    pub processes: Vec<Process>,
    #[arg(long, value_delimiter = ',', default_value = "b1,b2", value_parser = parse_beta)]
    pub betas: Vec<BetaId>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "gaussian,t3,mix_gaussian,slash",
        value_parser = parse_error_law
    )]
    pub errors: Vec<ErrorLaw>,
    #[arg(long, value_delimiter = ',', default_value = "square,huber", value_parser = parse_loss)]
    pub losses: Vec<LossFamily>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub estimator: BenchEstimatorArgs,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

/// Estimator flags shared by every loss of a bench run.
#[derive(Debug, Args)]
pub struct BenchEstimatorArgs {
    #[arg(long, default_value_t = 4)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub q: usize,
    #[arg(long, default_value_t = 40)]
    pub basis_dim: usize,
}
