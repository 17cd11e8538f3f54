use serde::{Deserialize, Serialize};

use super::metrics::{metrics, MetricSet};
use crate::data::{Normalizer, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{ForecastMode, HyVaeModel};

const CHUNK: usize = 256;

/// Mean-mode forecasts for every window of `dataset`, in normalized units.
pub fn predict(model: &HyVaeModel, dataset: &WindowedDataset) -> Result<Vec<Vec<f64>>> {
    let n = model.config().n;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in idx.chunks(CHUNK) {
        let (w, _) = dataset.batch(chunk);
        let y = model.forecast(&w, ForecastMode::Mean, None)?;
        out.extend(y.data().chunks(n).map(<[f64]>::to_vec));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub normalized: MetricSet,
    pub denormalized: MetricSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    /// One row per requested horizon; metrics pool forecast steps `1..=h`.
    pub horizons: Vec<HorizonMetrics>,
    /// Normalized predictions, one row per test window.
    pub predictions: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
    pub normalizer: Normalizer,
}

impl ForecastReport {
    pub fn from_predictions(
        truth: Vec<Vec<f64>>,
        predictions: Vec<Vec<f64>>,
        normalizer: Normalizer,
        horizons: &[usize],
    ) -> Result<Self> {
        let n = truth.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(horizons.len());
        for &h in horizons {
            if h == 0 || h > n {
                return Err(Error::invalid(
                    "evaluate",
                    format!("horizon {h} outside the model's 1..={n}"),
                ));
            }
            let cut = |rows: &[Vec<f64>], f: &dyn Fn(&[f64]) -> Vec<f64>| -> Vec<Vec<f64>> {
                rows.iter().map(|r| f(&r[..h])).collect()
            };
            let id = |r: &[f64]| r.to_vec();
            let den = |r: &[f64]| normalizer.denormalize(r);
            rows.push(HorizonMetrics {
                horizon: h,
                normalized: metrics(&cut(&truth, &id), &cut(&predictions, &id))?,
                denormalized: metrics(&cut(&truth, &den), &cut(&predictions, &den))?,
            });
        }
        Ok(ForecastReport {
            horizons: rows,
            predictions,
            truth,
            normalizer,
        })
    }

    pub fn denormalized_predictions(&self) -> Vec<Vec<f64>> {
        self.predictions.iter().map(|r| self.normalizer.denormalize(r)).collect()
    }

    pub fn denormalized_truth(&self) -> Vec<Vec<f64>> {
        self.truth.iter().map(|r| self.normalizer.denormalize(r)).collect()
    }
}

/// Mean-mode evaluation of `model` on every window of `dataset`.
pub fn evaluate(model: &HyVaeModel, dataset: &WindowedDataset, horizons: &[usize]) -> Result<ForecastReport> {
    let n = model.config().n;
    if let Some(&h) = horizons.iter().find(|&&h| h == 0 || h > n) {
        return Err(Error::invalid(
            "evaluate",
            format!("horizon {h} exceeds the model horizon n = {n}"),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let predictions = predict(model, dataset)?;
    ForecastReport::from_predictions(dataset.targets(), predictions, dataset.normalizer, horizons)
}
