//! Optimization, evaluation, baselines and experiment drivers.

pub mod ar;
pub mod eval;
pub mod experiment;
pub mod fit;
pub mod metrics;
pub mod optim;

pub use ar::{ar_baseline, fit_ar, ArModel, ArReport};
pub use eval::{evaluate, predict, ForecastReport, HorizonMetrics};
pub use experiment::{ablate, grid_search, run_once, run_seeds, AblationRow, Candidate, Grid, GridReport, GridRow, RunResult, RunSettings, Skipped};
pub use fit::{train, warmup_beta, EpochRecord, TrainOptions, TrainReport};
pub use metrics::{metrics, MetricSet, MAPE_EPS};
pub use optim::{clip_global_norm, global_norm, Adam};
