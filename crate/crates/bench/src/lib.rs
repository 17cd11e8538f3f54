//! Fixtures shared by the benchmarks.

use hyvae_core::model::{HyVaeConfig, HyVaeModel};
use hyvae_core::{Noise, Rng, Tensor};

pub fn default_model() -> HyVaeModel {
    HyVaeModel::new(HyVaeConfig::default()).expect("default config is valid")
}

/// `rows` random windows and targets sized for `cfg`.
pub fn batch(cfg: &HyVaeConfig, rows: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = Rng::new(seed);
    let w: Vec<f64> = (0..rows * cfg.m).map(|_| rng.uniform(0.0, 1.0)).collect();
    let y: Vec<f64> = (0..rows * cfg.n).map(|_| rng.uniform(0.0, 1.0)).collect();
    (
        Tensor::new(&[rows, cfg.m], w).unwrap(),
        Tensor::new(&[rows, cfg.n], y).unwrap(),
    )
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.standard_normal()).collect()).unwrap()
}
