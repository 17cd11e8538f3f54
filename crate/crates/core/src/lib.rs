pub mod data;
pub mod error;
pub mod gaussian;
pub mod model;
pub mod nn;
pub mod persist;
pub mod tensor;
pub mod train;

pub use data::{Normalizer, PreparedData, RawSeries, WindowedDataset};
pub use error::{Error, Result};
pub use gaussian::DiagonalGaussian;
pub use model::{ElboBreakdown, ForecastMode, HyVaeConfig, HyVaeModel, Variant};
pub use tensor::{Graph, Noise, Rng, Tensor, Var, ZeroNoise};
pub use train::{ForecastReport, MetricSet, TrainOptions, TrainReport};
