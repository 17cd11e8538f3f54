//! Multi-seed runs, the hyperparameter grid search and the ablation study.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::fit::{train, TrainOptions, TrainReport};
use super::metrics::MetricSet;
use crate::data::PreparedData;
use crate::error::{Error, Result};
use crate::model::{HyVaeConfig, HyVaeModel, Variant};
use crate::tensor::Rng;

/// Everything needed to train one model apart from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub config: HyVaeConfig,
    pub train: TrainOptions,
    pub variant: Variant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub variant: Variant,
    pub valid_mse: f64,
    /// Normalized test metrics at the full horizon `n`.
    pub test: MetricSet,
    pub report: TrainReport,
}

/// Trains one model from scratch. The seed drives both the parameter
/// initialization and an independent stream for shuffling and noise.
pub fn run_once(data: &PreparedData, settings: &RunSettings, seed: u64) -> Result<(HyVaeModel, RunResult)> {
    let cfg = HyVaeConfig {
        seed,
        ..settings.config.clone()
    };
    if cfg.m != data.m() || cfg.n != data.n() {
        return Err(Error::Config(format!(
            "config (m={}, n={}) does not match the prepared windows (m={}, n={})",
            cfg.m,
            cfg.n,
            data.m(),
            data.n()
        )));
    }
    let model = HyVaeModel::variant(&cfg, settings.variant)?;
    let mut rng = Rng::with_stream(seed, 1);
    let (best, report) = train(&model, &data.train, &data.valid, &settings.train, &mut rng)?;
    let test = evaluate(&best, &data.test, &[cfg.n])?.horizons[0].normalized;
    let result = RunResult {
        seed,
        variant: settings.variant,
        valid_mse: report.best_valid_mse,
        test,
        report,
    };
    Ok((best, result))
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// `run_once` for each seed, in seed order.
pub fn run_seeds(
    data: &PreparedData,
    settings: &RunSettings,
    seeds: &[u64],
    parallelism: usize,
) -> Result<Vec<RunResult>> {
    pool(parallelism)?.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_once(data, settings, s).map(|(_, r)| r))
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grid {
    #[serde(rename = "L")]
    pub ladder: Vec<usize>,
    pub l: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub lr: Vec<f64>,
    /// Embedding size, used for both the latent and the hidden width.
    pub d: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            ladder: vec![2, 4, 6, 8, 10],
            l: vec![10, 20, 30, 40],
            batch_size: vec![32, 64, 128],
            lr: vec![0.001, 0.01, 0.1],
            d: vec![8, 16, 32, 64, 128],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(rename = "L")]
    pub ladder: usize,
    pub l: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub d: usize,
}

impl Candidate {
    pub fn settings(&self, base: &RunSettings) -> RunSettings {
        let mut s = base.clone();
        s.config.ladder = self.ladder;
        s.config.l = self.l;
        s.config.d_z = self.d;
        s.config.d_h = self.d;
        s.train.batch_size = self.batch_size;
        s.train.lr = self.lr;
        s
    }

    /// Parsimony order for equal scores: smaller d, then L, then l.
    fn tie_break(&self, o: &Candidate) -> Ordering {
        (self.d, self.ladder, self.l, self.batch_size)
            .cmp(&(o.d, o.ladder, o.l, o.batch_size))
            .then(self.lr.total_cmp(&o.lr))
    }
}

impl Grid {
    pub fn candidates(&self) -> Vec<Candidate> {
        let mut out = Vec::new();
        for &ladder in &self.ladder {
            for &l in &self.l {
                for &batch_size in &self.batch_size {
                    for &lr in &self.lr {
                        for &d in &self.d {
                            out.push(Candidate { ladder, l, batch_size, lr, d });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.ladder.len() * self.l.len() * self.batch_size.len() * self.lr.len() * self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub candidate: Candidate,
    pub valid_mse: f64,
    pub test: MetricSet,
    pub valid_mse_per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub candidate: Candidate,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub seeds: Vec<u64>,
    /// Ranked by mean validation MSE, best first.
    pub rows: Vec<GridRow>,
    pub skipped: Vec<Skipped>,
}

impl GridReport {
    pub fn best(&self) -> Option<&GridRow> {
        self.rows.first()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,L,l,batch_size,lr,d,valid_mse,test_mse,test_mae,test_mape\n");
        for (i, r) in self.rows.iter().enumerate() {
            let c = &r.candidate;
            writeln!(
                s,
                "{},{},{},{},{},{},{:e},{:e},{:e},{:e}",
                i + 1,
                c.ladder,
                c.l,
                c.batch_size,
                c.lr,
                c.d,
                r.valid_mse,
                r.test.mse,
                r.test.mae,
                r.test.mape
            )
            .unwrap();
        }
        s
    }
}

/// Trains every feasible grid point on every seed and ranks the points by
/// mean validation MSE. Points that violate the model constraints, or
/// diverge on any seed, are listed as skipped.
pub fn grid_search(
    data: &PreparedData,
    grid: &Grid,
    base: &RunSettings,
    seeds: &[u64],
    parallelism: usize,
) -> Result<GridReport> {
    if grid.is_empty() {
        return Err(Error::Config("grid search needs at least one candidate".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("grid search needs at least one seed".into()));
    }
    let mut skipped = Vec::new();
    let mut feasible = Vec::new();
    for c in grid.candidates() {
        let s = c.settings(base);
        match s.config.validate().and_then(|_| s.train.validate()) {
            Ok(()) => feasible.push((c, s)),
            Err(e) => {
                log::warn!("skipping {c:?}: {e}");
                skipped.push(Skipped { candidate: c, reason: e.to_string() });
            }
        }
    }

    let jobs: Vec<(usize, u64)> = (0..feasible.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outcomes: Vec<Result<RunResult>> = pool(parallelism)?.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| run_once(data, &feasible[i].1, seed).map(|(_, r)| r))
            .collect()
    });

    let mut rows = Vec::new();
    for (i, (cand, _)) in feasible.iter().enumerate() {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut tests = Vec::with_capacity(seeds.len());
        let mut failure = None;
        for (&(ji, _), out) in jobs.iter().zip(&outcomes) {
            if ji != i {
                continue;
            }
            match out {
                Ok(r) => {
                    per_seed.push(r.valid_mse);
                    tests.push(r.test);
                }
                Err(e @ Error::Divergence { .. }) => failure = Some(e.to_string()),
                Err(e) => return Err(Error::Config(format!("{cand:?}: {e}"))),
            }
        }
        if let Some(reason) = failure {
            log::warn!("skipping {cand:?}: {reason}");
            skipped.push(Skipped { candidate: *cand, reason });
            continue;
        }
        rows.push(GridRow {
            candidate: *cand,
            valid_mse: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
            test: MetricSet::mean(&tests).expect("at least one seed"),
            valid_mse_per_seed: per_seed,
        });
    }
    rows.sort_by(|a, b| {
        a.valid_mse
            .total_cmp(&b.valid_mse)
            .then_with(|| a.candidate.tie_break(&b.candidate))
    });
    Ok(GridReport {
        seeds: seeds.to_vec(),
        rows,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// Mean normalized test metrics over the seeds.
    pub test: MetricSet,
    pub per_seed: Vec<MetricSet>,
}

/// Trains the full model and both ablations under the same settings and
/// seeds; rows come back in `full, no_subseq, no_entire` order.
pub fn ablate(data: &PreparedData, base: &RunSettings, seeds: &[u64], parallelism: usize) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let jobs: Vec<(Variant, u64)> = Variant::ALL
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<RunResult> = pool(parallelism)?.install(|| {
        jobs.par_iter()
            .map(|&(variant, seed)| {
                let s = RunSettings { variant, ..base.clone() };
                run_once(data, &s, seed).map(|(_, r)| r)
            })
            .collect::<Result<_>>()
    })?;
    Ok(Variant::ALL
        .iter()
        .map(|&v| {
            let per_seed: Vec<MetricSet> = results.iter().filter(|r| r.variant == v).map(|r| r.test).collect();
            AblationRow {
                variant: v,
                test: MetricSet::mean(&per_seed).expect("at least one seed"),
                per_seed,
            }
        })
        .collect())
}
