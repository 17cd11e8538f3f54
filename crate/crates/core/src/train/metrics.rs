use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard in the MAPE denominator.
pub const MAPE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mse: f64,
    pub mae: f64,
    pub mape: f64,
}

impl MetricSet {
    /// Coordinate-wise arithmetic mean.
    pub fn mean(sets: &[MetricSet]) -> Option<MetricSet> {
        if sets.is_empty() {
            return None;
        }
        let k = sets.len() as f64;
        Some(MetricSet {
            mse: sets.iter().map(|s| s.mse).sum::<f64>() / k,
            mae: sets.iter().map(|s| s.mae).sum::<f64>() / k,
            mape: sets.iter().map(|s| s.mape).sum::<f64>() / k,
        })
    }
}

/// MSE, MAE and MAPE pooled over all samples and horizon steps.
pub fn metrics<R: AsRef<[f64]>>(truth: &[R], pred: &[R]) -> Result<MetricSet> {
    if truth.len() != pred.len() {
        return Err(Error::shape("metrics", &[truth.len()], &[pred.len()]));
    }
    if truth.is_empty() {
        return Err(Error::invalid("metrics", "no samples"));
    }
    let (mut se, mut ae, mut ape, mut count) = (0.0, 0.0, 0.0, 0usize);
    for (y, p) in truth.iter().zip(pred) {
        let (y, p) = (y.as_ref(), p.as_ref());
        if y.len() != p.len() || y.is_empty() {
            return Err(Error::shape("metrics", &[y.len()], &[p.len()]));
        }
        for (&a, &b) in y.iter().zip(p) {
            let r = a - b;
            se += r * r;
            ae += r.abs();
            ape += (r / a.max(MAPE_EPS)).abs();
            count += 1;
        }
    }
    let k = count as f64;
    let out = MetricSet {
        mse: se / k,
        mae: ae / k,
        mape: ape / k,
    };
    if !(out.mse.is_finite() && out.mae.is_finite() && out.mape.is_finite()) {
        return Err(Error::Domain {
            op: "metrics",
            msg: "non-finite metric".into(),
        });
    }
    Ok(out)
}
