use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "hyvae", version, about = "Hybrid variational autoencoder forecaster")]
pub struct Cli {
    /// Seed for parameter init, shuffling and sampling
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// TOML file with defaults for any flag (flags take precedence)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Only print errors
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write the model file and a training report
    Train(TrainArgs),
    /// Forecast from the trailing window of a series
    Forecast(ForecastArgs),
    /// Metrics on the test split for one or more horizons
    Evaluate(EvaluateArgs),
    /// Train the full model and both ablations under one config
    Ablate(AblateArgs),
    /// Hyperparameter grid search ranked by validation MSE
    Gridsearch(GridArgs),
    /// Write a synthetic series as a one-column CSV
    Synth(SynthArgs),
    /// Render forecast CSVs as an SVG line chart
    Plot(PlotArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Input CSV
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,

    /// Zero-based column holding the series
    #[arg(long, default_value_t = 0)]
    pub column: usize,

    /// The CSV starts with a header row
    #[arg(long)]
    pub header: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Subsequence length
    #[arg(short = 'l', long = "l", default_value_t = 10)]
    pub l: usize,

    /// Ladder size
    #[arg(short = 'L', long = "ladder", default_value_t = 4)]
    pub ladder: usize,

    /// Latent size per ladder group
    #[arg(long, default_value_t = 32)]
    pub d_z: usize,

    /// GRU hidden size
    #[arg(long, default_value_t = 32)]
    pub d_h: usize,

    /// Forecast horizon
    #[arg(short = 'n', long = "n", default_value_t = 1)]
    pub n: usize,

    /// Input window length
    #[arg(short = 'm', long = "m", default_value_t = 50)]
    pub m: usize,

    /// Epochs over which the KL weight ramps up to 1
    #[arg(long, default_value_t = 30)]
    pub warmup_epochs: usize,

    #[arg(long, default_value_t = 100)]
    pub epochs: usize,

    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,

    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,

    /// Model variant
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    pub variant: VariantArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
#[value(rename_all = "snake_case")]
pub enum VariantArg {
    Full,
    NoSubseq,
    NoEntire,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Where to write the model file
    #[arg(long, default_value = "model.json")]
    pub model_out: PathBuf,

    /// Where to write the training report (JSON)
    #[arg(long, default_value = "report.json")]
    pub report_out: PathBuf,

    /// Also write per-epoch records as CSV
    #[arg(long, value_name = "CSV")]
    pub epochs_csv: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Mean,
    Sample,
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    /// Model file written by `train`
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// Number of forecast steps (at most the model horizon)
    #[arg(long, default_value_t = 1)]
    pub steps: usize,

    #[arg(long, value_enum, default_value_t = ModeArg::Mean)]
    pub mode: ModeArg,

    /// Write values in the model's normalized scale
    #[arg(long)]
    pub normalized: bool,

    /// Slide over the whole series and emit the `steps`-ahead forecast of
    /// every window next to the observed value
    #[arg(long)]
    pub rolling: bool,

    #[arg(long, default_value = "forecast.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// Comma-separated horizons
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub horizons: Vec<usize>,

    /// Report metrics in original units
    #[arg(long)]
    pub denormalized: bool,

    /// Add an AR baseline row (lag searched over 1..=10)
    #[arg(long)]
    pub baseline: bool,

    /// Write the full report as JSON
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Comma-separated seeds; defaults to the global seed
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,

    /// Worker threads
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,

    /// Write the table as CSV
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// TOML grid file; omitted keys use the default ranges
    #[arg(long, value_name = "FILE")]
    pub grid: Option<PathBuf>,

    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,

    #[arg(long, default_value_t = 1)]
    pub parallel: usize,

    /// Only list how many configurations the grid holds
    #[arg(long)]
    pub dry_run: bool,

    /// Ranked table as CSV
    #[arg(long, default_value = "grid.csv")]
    pub out: PathBuf,

    /// Full report as JSON
    #[arg(long, value_name = "JSON")]
    pub report_out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
#[value(rename_all = "snake_case")]
pub enum KindArg {
    Sine,
    TrendSeason,
    Ar1,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Sine)]
    pub kind: KindArg,

    #[arg(long, default_value_t = 1400)]
    pub length: usize,

    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,

    #[arg(long, default_value_t = 25.0)]
    pub period: f64,

    /// Trend per step (trend_season)
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    pub slope: f64,

    /// Gaussian noise std (trend_season, ar1)
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,

    /// AR coefficient (ar1)
    #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
    pub rho: f64,

    /// First value (ar1)
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub start: f64,

    #[arg(long, default_value = "series.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Forecast CSV with step,prediction,truth columns; repeat for overlays
    #[arg(long = "input", required = true, value_name = "CSV")]
    pub inputs: Vec<PathBuf>,

    /// Legend label per input, in order
    #[arg(long = "label")]
    pub labels: Vec<String>,

    #[arg(long, default_value = "Forecast")]
    pub title: String,

    #[arg(long, default_value = "plot.svg")]
    pub out: PathBuf,
}
