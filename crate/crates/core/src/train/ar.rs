//! Autoregressive baseline: `s_t = c + Σ_k a_k s_{t−k}` fitted by least
//! squares, multi-step forecasts by feeding predictions back in.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::metrics::{metrics, MetricSet};
use crate::data::{PreparedData, WindowedDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub intercept: f64,
    /// `coefficients[k − 1]` multiplies `s_{t−k}`.
    pub coefficients: Vec<f64>,
}

impl ArModel {
    pub fn lag(&self) -> usize {
        self.coefficients.len()
    }

    /// Forecasts `steps` values following `history`.
    pub fn forecast(&self, history: &[f64], steps: usize) -> Result<Vec<f64>> {
        let p = self.lag();
        if history.len() < p {
            return Err(Error::Data(format!(
                "AR({p}) needs {p} past values, got {}",
                history.len()
            )));
        }
        let mut buf: Vec<f64> = history[history.len() - p..].to_vec();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let next = self.intercept
                + self
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * buf[buf.len() - 1 - k])
                    .sum::<f64>();
            buf.push(next);
            out.push(next);
        }
        Ok(out)
    }

    fn predict_all(&self, ds: &WindowedDataset) -> Result<Vec<Vec<f64>>> {
        ds.samples.iter().map(|s| self.forecast(&s.window, ds.n)).collect()
    }
}

/// Least-squares AR(`lag`) fit. Rank-deficient designs get the
/// minimum-norm solution through the SVD pseudo-inverse.
pub fn fit_ar(series: &[f64], lag: usize) -> Result<ArModel> {
    if lag == 0 {
        return Err(Error::invalid("ar", "lag must be at least 1"));
    }
    if series.len() <= lag {
        return Err(Error::Data(format!(
            "series of length {} is too short for lag {lag}",
            series.len()
        )));
    }
    let rows = series.len() - lag;
    let x = DMatrix::from_fn(rows, lag + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            series[r + lag - c]
        }
    });
    let y = DVector::from_iterator(rows, series[lag..].iter().copied());
    let svd = x.svd(true, true);
    let top = svd.singular_values.max();
    let tol = top * f64::EPSILON * rows.max(lag + 1) as f64;
    let sol = svd
        .solve(&y, tol)
        .map_err(|e| Error::invalid("ar", e.to_string()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain {
            op: "ar",
            msg: "least-squares solution is not finite".into(),
        });
    }
    Ok(ArModel {
        intercept: sol[0],
        coefficients: sol.iter().skip(1).copied().collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArReport {
    pub lag: usize,
    pub model: ArModel,
    /// Validation MSE for lags `1..=max_lag`.
    pub valid_mse_by_lag: Vec<f64>,
    pub test: MetricSet,
    pub test_predictions: Vec<Vec<f64>>,
}

/// Two lags whose validation MSEs differ by less than
/// `LAG_TIE_REL · best + LAG_TIE_ABS` count as tied; the smaller lag wins.
pub const LAG_TIE_REL: f64 = 1e-9;
pub const LAG_TIE_ABS: f64 = 1e-15;

/// Fits lags `1..=max_lag` on the training segment, keeps the lag with the
/// lowest validation MSE and reports its test metrics (normalized units).
pub fn ar_baseline(data: &PreparedData, max_lag: usize) -> Result<ArReport> {
    if max_lag == 0 {
        return Err(Error::invalid("ar", "max lag must be at least 1"));
    }
    if data.train_series.len() <= max_lag {
        return Err(Error::Data("training split is not longer than the maximum lag".into()));
    }
    let max_lag = max_lag.min(data.m());
    let mut fits = Vec::with_capacity(max_lag);
    let mut valid_mse = Vec::with_capacity(max_lag);
    let truth = data.valid.targets();
    for p in 1..=max_lag {
        let model = fit_ar(&data.train_series, p)?;
        let preds = model.predict_all(&data.valid)?;
        valid_mse.push(metrics(&truth, &preds).map(|m| m.mse).unwrap_or(f64::INFINITY));
        fits.push(model);
    }
    let best = valid_mse.iter().copied().fold(f64::INFINITY, f64::min);
    let chosen = valid_mse
        .iter()
        .position(|&v| v <= best * (1.0 + LAG_TIE_REL) + LAG_TIE_ABS)
        .ok_or_else(|| Error::Domain {
            op: "ar",
            msg: "no lag produced a finite validation error".into(),
        })?;
    let model = fits.swap_remove(chosen);
    let test_predictions = model.predict_all(&data.test)?;
    let test = metrics(&data.test.targets(), &test_predictions)?;
    Ok(ArReport {
        lag: chosen + 1,
        model,
        valid_mse_by_lag: valid_mse,
        test,
        test_predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_series, PreparedData, RawSeries, SynthKind, SynthParams};
    use crate::tensor::{Noise, Rng};

    #[test]
    fn recovers_exact_ar1() {
        let mut s = vec![1.0];
        for _ in 1..200 {
            s.push(0.5 * s.last().unwrap());
        }
        let m = fit_ar(&s, 1).unwrap();
        assert!((m.coefficients[0] - 0.5).abs() < 1e-8);
        assert!(m.intercept.abs() < 1e-8);
        let f = m.forecast(&[0.8], 3).unwrap();
        assert!((f[2] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn recovers_ar2() {
        let mut rng = Rng::new(4);
        let mut s = vec![0.3, -0.1];
        for _ in 2..400 {
            let n = s.len();
            s.push(0.6 * s[n - 1] - 0.3 * s[n - 2] + 0.2 + rng.standard_normal());
        }
        let exact: Vec<f64> = {
            let mut e = s[..2].to_vec();
            for t in 2..40 {
                e.push(0.6 * e[t - 1] - 0.3 * e[t - 2] + 0.2);
            }
            e
        };
        let m = fit_ar(&exact, 2).unwrap();
        assert!((m.coefficients[0] - 0.6).abs() < 1e-6);
        assert!((m.coefficients[1] + 0.3).abs() < 1e-6);
        assert!((m.intercept - 0.2).abs() < 1e-6);
        let noisy = fit_ar(&s, 2).unwrap();
        assert!((noisy.coefficients[0] - 0.6).abs() < 0.15);
    }

    #[test]
    fn degenerate_design_uses_minimum_norm() {
        let m = fit_ar(&[0.5; 30], 3).unwrap();
        assert!(m.intercept.is_finite() && m.coefficients.iter().all(|c| c.is_finite()));
        let f = m.forecast(&[0.5; 3], 4).unwrap();
        assert!(f.iter().all(|v| (v - 0.5).abs() < 1e-9));
        // minimum norm spreads the weight evenly over the collinear columns
        let c = &m.coefficients;
        assert!((c[0] - c[2]).abs() < 1e-9);
    }

    #[test]
    fn baseline_on_noiseless_ar1() {
        let p = SynthParams { rho: 0.5, noise_std: 0.0, start: 1.0, ..Default::default() };
        let s = synth_series(SynthKind::Ar1, 400, &p, 0).unwrap();
        let data = PreparedData::new(&s, 12, 1).unwrap();
        let r = ar_baseline(&data, 10).unwrap();
        assert_eq!(r.lag, 1);
        assert!((r.model.coefficients[0] - 0.5).abs() < 1e-8);
        assert!(r.test.mse < 1e-12);
    }

    #[test]
    fn white_noise_reaches_variance() {
        let mut rng = Rng::new(21);
        let v: Vec<f64> = (0..3000).map(|_| rng.standard_normal()).collect();
        let data = PreparedData::new(&RawSeries::new(v, "wn"), 20, 1).unwrap();
        let r = ar_baseline(&data, 10).unwrap();
        let test: Vec<f64> = data.test.targets().into_iter().flatten().collect();
        let mean = test.iter().sum::<f64>() / test.len() as f64;
        let var = test.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / test.len() as f64;
        assert!((r.test.mse / var - 1.0).abs() < 0.2, "{} vs {var}", r.test.mse);
    }

    #[test]
    fn chosen_lag_is_minimal() {
        let p = SynthParams::default();
        let s = synth_series(SynthKind::TrendSeason, 600, &p, 5).unwrap();
        let data = PreparedData::new(&s, 20, 2).unwrap();
        let r = ar_baseline(&data, 10).unwrap();
        let best = r.valid_mse_by_lag.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(r.valid_mse_by_lag[r.lag - 1] <= best * (1.0 + 1e-9));
        assert_eq!(r.valid_mse_by_lag.len(), 10);
    }
}
