use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::eval::predict;
use super::metrics::metrics;
use super::optim::{clip_global_norm, Adam};
use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::{ElboBreakdown, HyVaeModel};
use crate::nn::Pass;
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 100,
            batch_size: 64,
            lr: 0.01,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// KL weight for a 1-based epoch: a linear ramp reaching 1 at `warmup`.
pub fn warmup_beta(epoch: usize, warmup: usize) -> f64 {
    if warmup == 0 {
        1.0
    } else {
        (epoch as f64 / warmup as f64).min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub beta: f64,
    /// Sample-weighted mean of the batch losses.
    pub train_loss: f64,
    pub elbo: ElboBreakdown,
    pub pred_loss: f64,
    pub valid_mse: f64,
    /// Batches whose gradient norm exceeded the clipping cap.
    pub clipped_batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the returned snapshot.
    pub best_epoch: usize,
    pub best_valid_mse: f64,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// Everything except wall time, for reproducibility checks.
    pub fn same_trajectory(&self, other: &TrainReport) -> bool {
        self.epochs == other.epochs && self.best_epoch == other.best_epoch
    }
}

/// Mini-batch training with KL warm-up and best-on-validation selection.
///
/// The returned model is the snapshot with the lowest validation MSE; it
/// carries the training normalizer.
pub fn train(
    model: &HyVaeModel,
    train: &WindowedDataset,
    valid: &WindowedDataset,
    opts: &TrainOptions,
    rng: &mut Rng,
) -> Result<(HyVaeModel, TrainReport)> {
    opts.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split has no windows".into()));
    }
    if valid.is_empty() {
        return Err(Error::Data("validation split has no windows".into()));
    }
    let cfg = model.config();
    for ds in [train, valid] {
        if ds.m != cfg.m || ds.n != cfg.n {
            return Err(Error::Config(format!(
                "dataset windows (m={}, n={}) do not match the model (m={}, n={})",
                ds.m, ds.n, cfg.m, cfg.n
            )));
        }
    }

    let started = Instant::now();
    let mut model = model.clone();
    model.set_normalizer(train.normalizer);
    let mut adam = Adam::new(model.params(), opts.lr);
    let mut best: Option<(f64, usize, HyVaeModel)> = None;
    let mut records = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let valid_truth = valid.targets();

    for epoch in 1..=opts.epochs {
        let beta = warmup_beta(epoch, cfg.warmup_epochs);
        rng.shuffle(&mut order);
        let (mut loss_sum, mut pred_sum, mut clipped) = (0.0, 0.0, 0);
        let mut elbo_sum = ElboBreakdown { beta, ..ElboBreakdown::default() };

        for (bi, idx) in order.chunks(opts.batch_size).enumerate() {
            let (windows, targets) = train.batch(idx);
            let mut pass = Pass::new(model.params());
            let loss = model.loss(&mut pass, &windows, &targets, rng, beta)?;
            let value = pass.graph.value(loss.total).item().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi + 1,
                    detail: format!(
                        "loss {value} (recon {}, kl_ladder {}, kl_temporal {}, pred {})",
                        loss.elbo.recon, loss.elbo.kl_ladder, loss.elbo.kl_temporal, loss.pred
                    ),
                });
            }
            pass.graph.backward(loss.total)?;
            let mut grads = pass.param_grads();
            if let Some(cap) = opts.clip_norm {
                let norm = clip_global_norm(&mut grads, cap);
                if !norm.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: bi + 1,
                        detail: format!("gradient norm {norm}"),
                    });
                }
                if norm > cap {
                    clipped += 1;
                    log::trace!("epoch {epoch} batch {}: clipped gradient norm {norm:.3}", bi + 1);
                }
            }
            adam.step(model.params_mut(), &grads)?;

            let w = idx.len() as f64;
            loss_sum += w * value;
            pred_sum += w * loss.pred;
            elbo_sum.recon += w * loss.elbo.recon;
            elbo_sum.kl_ladder += w * loss.elbo.kl_ladder;
            elbo_sum.kl_temporal += w * loss.elbo.kl_temporal;
        }

        let k = train.len() as f64;
        elbo_sum.recon /= k;
        elbo_sum.kl_ladder /= k;
        elbo_sum.kl_temporal /= k;
        let preds = predict(&model, valid)?;
        let valid_mse = metrics(&valid_truth, &preds)
            .map_err(|e| Error::Divergence {
                epoch,
                batch: 0,
                detail: format!("validation forecast: {e}"),
            })?
            .mse;
        if clipped > 0 {
            log::debug!("epoch {epoch}: gradient clipping active on {clipped} batches");
        }
        log::info!(
            "epoch {epoch:>3}  beta {beta:.3}  loss {:.5}  pred {:.5}  valid mse {valid_mse:.6}",
            loss_sum / k,
            pred_sum / k
        );
        records.push(EpochRecord {
            epoch,
            beta,
            train_loss: loss_sum / k,
            elbo: elbo_sum,
            pred_loss: pred_sum / k,
            valid_mse,
            clipped_batches: clipped,
        });
        if best.as_ref().map_or(true, |(b, _, _)| valid_mse < *b) {
            best = Some((valid_mse, epoch, model.clone()));
        }
    }

    let (best_valid_mse, best_epoch, best_model) = best.expect("at least one epoch");
    Ok((
        best_model,
        TrainReport {
            epochs: records,
            best_epoch,
            best_valid_mse,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PreparedData, SynthKind, SynthParams};
    use crate::model::HyVaeConfig;

    fn tiny_data() -> PreparedData {
        let s = crate::data::synth_series(SynthKind::Sine, 120, &SynthParams { period: 12.0, ..Default::default() }, 0)
            .unwrap();
        PreparedData::new(&s, 8, 1).unwrap()
    }

    fn tiny_model() -> HyVaeModel {
        HyVaeModel::new(HyVaeConfig { l: 4, ladder: 2, d_z: 4, d_h: 4, n: 1, m: 8, warmup_epochs: 3, seed: 2 })
            .unwrap()
    }

    #[test]
    fn schedule() {
        assert_eq!(warmup_beta(1, 30), 1.0 / 30.0);
        assert_eq!(warmup_beta(30, 30), 1.0);
        assert_eq!(warmup_beta(70, 30), 1.0);
        assert_eq!(warmup_beta(1, 0), 1.0);
        let betas: Vec<f64> = (1..=100).map(|e| warmup_beta(e, 30)).collect();
        assert!(betas.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn best_snapshot_and_determinism() {
        let data = tiny_data();
        let opts = TrainOptions { epochs: 6, batch_size: 16, ..Default::default() };
        let (m1, r1) = train(&tiny_model(), &data.train, &data.valid, &opts, &mut Rng::with_stream(2, 1)).unwrap();
        let (m2, r2) = train(&tiny_model(), &data.train, &data.valid, &opts, &mut Rng::with_stream(2, 1)).unwrap();
        assert!(r1.same_trajectory(&r2));
        assert_eq!(m1.params(), m2.params());
        assert_eq!(r1.epochs.len(), 6);
        assert!(r1.epochs.iter().all(|e| r1.best_valid_mse <= e.valid_mse));
        assert_eq!(r1.epochs[r1.best_epoch - 1].valid_mse, r1.best_valid_mse);
        let preds = predict(&m1, &data.valid).unwrap();
        let mse = metrics(&data.valid.targets(), &preds).unwrap().mse;
        assert_eq!(mse, r1.best_valid_mse);
        assert_eq!(m1.normalizer(), data.normalizer);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = tiny_data();
        let opts = TrainOptions { batch_size: 0, ..Default::default() };
        assert!(train(&tiny_model(), &data.train, &data.valid, &opts, &mut Rng::new(0)).is_err());
        let mut empty = data.train.clone();
        empty.samples.clear();
        let opts = TrainOptions { epochs: 1, ..Default::default() };
        assert!(matches!(
            train(&tiny_model(), &empty, &data.valid, &opts, &mut Rng::new(0)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let data = tiny_data();
        let mut model = tiny_model();
        model.params_mut().by_name_mut("decoder.b_mu").unwrap().data_mut()[0] = f64::NAN;
        let opts = TrainOptions { epochs: 2, batch_size: 8, ..Default::default() };
        match train(&model, &data.train, &data.valid, &opts, &mut Rng::new(0)) {
            Err(Error::Divergence { epoch: 1, batch: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_sample_batch_matches_loss() {
        let data = tiny_data();
        let model = tiny_model();
        let (w, y) = data.train.batch(&[3]);
        let s = &data.train.samples[3];
        let mut p1 = Pass::new(model.params());
        let a = model.loss(&mut p1, &w, &y, &mut Rng::new(9), 0.5).unwrap();
        let mut p2 = Pass::new(model.params());
        let w2 = crate::tensor::Tensor::row(&s.window);
        let y2 = crate::tensor::Tensor::row(&s.target);
        let b = model.loss(&mut p2, &w2, &y2, &mut Rng::new(9), 0.5).unwrap();
        let (a, b) = (p1.graph.value(a.total).item().unwrap(), p2.graph.value(b.total).item().unwrap());
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }
}
