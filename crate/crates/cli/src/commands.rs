use std::fmt::Write as _;
use std::path::Path;

use clap::ArgMatches;
use hyvae_core::data::{load_csv, synth_series, PreparedData, RawSeries, SynthKind, SynthParams};
use hyvae_core::model::{ForecastMode, HyVaeConfig, Variant};
use hyvae_core::persist::{self, write_atomic};
use hyvae_core::tensor::{Rng, Tensor};
use hyvae_core::train::{self, ar_baseline, ForecastReport, Grid, RunSettings, TrainOptions};
use serde::Serialize;

use crate::args::*;
use crate::config::{merge, merge_data, merge_model, merge_opt, FileConfig};
use crate::Failure;

pub struct Context {
    pub seed: u64,
    pub quiet: bool,
    pub file: FileConfig,
    pub matches: ArgMatches,
}

impl Context {
    fn say(&self, text: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", text.as_ref());
        }
    }
}

fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Full => Variant::Full,
        VariantArg::NoSubseq => Variant::NoSubseq,
        VariantArg::NoEntire => Variant::NoEntire,
    }
}

/// Builds and validates the run settings before any data is touched.
fn settings(a: &ModelArgs, seed: u64) -> Result<RunSettings, Failure> {
    let config = HyVaeConfig {
        l: a.l,
        ladder: a.ladder,
        d_z: a.d_z,
        d_h: a.d_h,
        n: a.n,
        m: a.m,
        warmup_epochs: a.warmup_epochs,
        seed,
    };
    let variant = variant(a.variant);
    let mut check = config.clone();
    if variant == Variant::NoSubseq {
        check.l = 1;
        check.ladder = 1;
    }
    check.validate()?;
    let train = TrainOptions {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        ..TrainOptions::default()
    };
    train.validate()?;
    Ok(RunSettings { config, train, variant })
}

fn load_series(a: &DataArgs) -> Result<RawSeries, Failure> {
    let path = a.data.as_ref().ok_or_else(|| Failure::usage("--data is required"))?;
    Ok(load_csv(path, a.column, a.header)?)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn seeds_or_global(seeds: &[u64], ctx: &Context) -> Vec<u64> {
    if !seeds.is_empty() {
        seeds.to_vec()
    } else if let Some(s) = &ctx.file.seeds {
        s.clone()
    } else {
        vec![ctx.seed]
    }
}

#[derive(Serialize)]
struct TrainDocument<'a> {
    source: &'a str,
    seed: u64,
    settings: &'a RunSettings,
    normalization: hyvae_core::Normalizer,
    windows: [usize; 3],
    result: &'a train::RunResult,
}

pub fn train(ctx: &Context, mut a: TrainArgs) -> Result<(), Failure> {
    let m = &ctx.matches;
    merge_data(m, &mut a.data, &ctx.file);
    merge_model(m, &mut a.model, &ctx.file)?;
    merge(m, "model_out", &mut a.model_out, &ctx.file.model_out);
    merge(m, "report_out", &mut a.report_out, &ctx.file.report_out);

    let settings = settings(&a.model, ctx.seed)?;
    let series = load_series(&a.data)?;
    let data = PreparedData::new(&series, a.model.m, a.model.n)?;
    log::info!(
        "{}: {} values, windows train/valid/test = {}/{}/{}",
        series.source,
        series.len(),
        data.train.len(),
        data.valid.len(),
        data.test.len()
    );
    let (model, result) = train::run_once(&data, &settings, ctx.seed)?;

    persist::save(&model, &a.model_out)?;
    let doc = TrainDocument {
        source: &series.source,
        seed: ctx.seed,
        settings: &settings,
        normalization: data.normalizer,
        windows: [data.train.len(), data.valid.len(), data.test.len()],
        result: &result,
    };
    write_json(&a.report_out, &doc)?;
    if let Some(p) = &a.epochs_csv {
        let mut s = String::from("epoch,beta,train_loss,recon,kl_ladder,kl_temporal,pred_loss,valid_mse\n");
        for e in &result.report.epochs {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                e.epoch, e.beta, e.train_loss, e.elbo.recon, e.elbo.kl_ladder, e.elbo.kl_temporal, e.pred_loss, e.valid_mse
            )
            .unwrap();
        }
        write_text(p, &s)?;
    }
    ctx.say(format!(
        "best epoch {} of {}: valid mse {:.6e}; test mse {:.6e} mae {:.6e} mape {:.6e}",
        result.report.best_epoch,
        result.report.epochs.len(),
        result.valid_mse,
        result.test.mse,
        result.test.mae,
        result.test.mape
    ));
    ctx.say(format!("wrote {} and {}", a.model_out.display(), a.report_out.display()));
    Ok(())
}

pub fn forecast(ctx: &Context, mut a: ForecastArgs) -> Result<(), Failure> {
    let m = &ctx.matches;
    merge_data(m, &mut a.data, &ctx.file);
    merge(m, "out", &mut a.out, &ctx.file.out);
    let model = persist::load(&a.model)?;
    let cfg = model.config().clone();
    if a.steps == 0 || a.steps > cfg.n {
        return Err(Failure::usage(format!(
            "--steps {} is outside the model horizon 1..={}",
            a.steps, cfg.n
        )));
    }
    let series = load_series(&a.data)?;
    let norm = model.normalizer();
    let values = norm.normalize(&series.values);
    let need = if a.rolling { cfg.m + a.steps } else { cfg.m };
    if values.len() < need {
        return Err(Failure::data(format!(
            "{} values is not enough history (need at least {need})",
            values.len()
        )));
    }
    let scale = |v: f64| if a.normalized { v } else { norm.invert(v) };
    let mut rng = Rng::with_stream(ctx.seed, 2);
    let mode = match a.mode {
        ModeArg::Mean => ForecastMode::Mean,
        ModeArg::Sample => ForecastMode::Sample,
    };
    let mut run = |windows: Tensor| model.forecast(&windows, mode, Some(&mut rng));

    let mut out = String::new();
    if a.rolling {
        out.push_str("step,prediction,truth\n");
        let starts: Vec<usize> = (0..=values.len() - cfg.m - a.steps).collect();
        for chunk in starts.chunks(256) {
            let mut w = Vec::with_capacity(chunk.len() * cfg.m);
            for &k in chunk {
                w.extend_from_slice(&values[k..k + cfg.m]);
            }
            let pred = run(Tensor::new(&[chunk.len(), cfg.m], w)?)?;
            for (row, &k) in chunk.iter().enumerate() {
                let idx = k + cfg.m + a.steps - 1;
                let p = pred.data()[row * cfg.n + a.steps - 1];
                writeln!(out, "{idx},{},{}", scale(p), scale(values[idx])).unwrap();
            }
        }
    } else {
        out.push_str("step,prediction\n");
        let window = &values[values.len() - cfg.m..];
        let pred = run(Tensor::row(window))?;
        for (s, &p) in pred.data().iter().take(a.steps).enumerate() {
            writeln!(out, "{},{}", s + 1, scale(p)).unwrap();
        }
    }
    write_text(&a.out, &out)?;
    ctx.say(format!("wrote {}", a.out.display()));
    Ok(())
}

#[derive(Serialize)]
struct EvaluateDocument<'a> {
    model: &'a HyVaeConfig,
    variant: Variant,
    test_windows: usize,
    hyvae: &'a ForecastReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<BaselineDocument<'a>>,
}

#[derive(Serialize)]
struct BaselineDocument<'a> {
    lag: usize,
    valid_mse_by_lag: &'a [f64],
    horizons: &'a [train::HorizonMetrics],
}

fn metric_table(title: &str, rows: &[train::HorizonMetrics], denormalized: bool) -> String {
    let mut s = format!("{title}\n{:>8} {:>14} {:>14} {:>14}\n", "horizon", "mse", "mae", "mape");
    for r in rows {
        let m = if denormalized { r.denormalized } else { r.normalized };
        writeln!(s, "{:>8} {:>14.6e} {:>14.6e} {:>14.6e}", r.horizon, m.mse, m.mae, m.mape).unwrap();
    }
    s
}

pub fn evaluate(ctx: &Context, mut a: EvaluateArgs) -> Result<(), Failure> {
    let m = &ctx.matches;
    merge_data(m, &mut a.data, &ctx.file);
    merge_opt(m, "out", &mut a.out, &ctx.file.out);
    let model = persist::load(&a.model)?;
    let cfg = model.config().clone();
    if let Some(&h) = a.horizons.iter().find(|&&h| h == 0 || h > cfg.n) {
        return Err(Failure::usage(format!("horizon {h} is outside the model horizon 1..={}", cfg.n)));
    }
    let series = load_series(&a.data)?;
    let data = PreparedData::with_normalizer(&series, cfg.m, cfg.n, model.normalizer())?;
    let report = train::evaluate(&model, &data.test, &a.horizons)?;
    let units = if a.denormalized { "original units" } else { "normalized" };
    ctx.say(metric_table(&format!("{} on {} test windows ({units})", model.kind(), data.test.len()), &report.horizons, a.denormalized));

    let baseline = if a.baseline {
        let ar = ar_baseline(&data, 10)?;
        let r = ForecastReport::from_predictions(data.test.targets(), ar.test_predictions.clone(), data.normalizer, &a.horizons)?;
        ctx.say(metric_table(&format!("AR({}) baseline", ar.lag), &r.horizons, a.denormalized));
        Some((ar, r))
    } else {
        None
    };
    if let Some(out) = &a.out {
        let doc = EvaluateDocument {
            model: &cfg,
            variant: model.kind(),
            test_windows: data.test.len(),
            hyvae: &report,
            baseline: baseline.as_ref().map(|(ar, r)| BaselineDocument {
                lag: ar.lag,
                valid_mse_by_lag: &ar.valid_mse_by_lag,
                horizons: &r.horizons,
            }),
        };
        write_json(out, &doc)?;
    }
    Ok(())
}

pub fn ablate(ctx: &Context, mut a: AblateArgs) -> Result<(), Failure> {
    let m = &ctx.matches;
    merge_data(m, &mut a.data, &ctx.file);
    merge_model(m, &mut a.model, &ctx.file)?;
    merge(m, "parallel", &mut a.parallel, &ctx.file.parallel);
    merge_opt(m, "out", &mut a.out, &ctx.file.out);
    let base = settings(&a.model, ctx.seed)?;
    let seeds = seeds_or_global(&a.seeds, ctx);
    let series = load_series(&a.data)?;
    let data = PreparedData::new(&series, a.model.m, a.model.n)?;
    let rows = train::ablate(&data, &base, &seeds, a.parallel)?;

    let mut csv = String::from("variant,mse,mae,mape\n");
    let mut table = format!("{:<10} {:>14} {:>14} {:>14}\n", "variant", "mse", "mae", "mape");
    for r in &rows {
        writeln!(csv, "{},{},{},{}", r.variant, r.test.mse, r.test.mae, r.test.mape).unwrap();
        writeln!(table, "{:<10} {:>14.6e} {:>14.6e} {:>14.6e}", r.variant.as_str(), r.test.mse, r.test.mae, r.test.mape).unwrap();
    }
    ctx.say(format!("test metrics (normalized), mean over {} seed(s)\n{table}", seeds.len()).trim_end());
    if let Some(out) = &a.out {
        write_text(out, &csv)?;
    }
    Ok(())
}

fn load_grid(path: &Path) -> Result<Grid, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read grid {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::usage(format!("grid {}: {e}", path.display())))
}

pub fn gridsearch(ctx: &Context, mut a: GridArgs) -> Result<(), Failure> {
    let m = &ctx.matches;
    merge_data(m, &mut a.data, &ctx.file);
    merge_model(m, &mut a.model, &ctx.file)?;
    merge(m, "parallel", &mut a.parallel, &ctx.file.parallel);
    merge(m, "out", &mut a.out, &ctx.file.out);
    merge_opt(m, "grid", &mut a.grid, &ctx.file.grid);
    merge_opt(m, "report_out", &mut a.report_out, &ctx.file.report_out);
    let grid = match &a.grid {
        Some(p) => load_grid(p)?,
        None => Grid::default(),
    };
    if grid.is_empty() {
        return Err(Failure::usage("the grid has no candidates"));
    }
    if a.dry_run {
        println!(
            "{} configurations (L: {}, l: {}, batch_size: {}, lr: {}, d: {})",
            grid.len(),
            grid.ladder.len(),
            grid.l.len(),
            grid.batch_size.len(),
            grid.lr.len(),
            grid.d.len()
        );
        return Ok(());
    }
    let base = settings(&a.model, ctx.seed)?;
    let seeds = seeds_or_global(&a.seeds, ctx);
    let series = load_series(&a.data)?;
    let data = PreparedData::new(&series, a.model.m, a.model.n)?;
    let report = train::grid_search(&data, &grid, &base, &seeds, a.parallel)?;
    write_text(&a.out, &report.to_csv())?;
    if let Some(p) = &a.report_out {
        write_json(p, &report)?;
    }
    for s in &report.skipped {
        ctx.say(format!("skipped {:?}: {}", s.candidate, s.reason));
    }
    match report.best() {
        Some(b) => ctx.say(format!(
            "best of {}: L={} l={} batch={} lr={} d={}  valid mse {:.6e}  test mse {:.6e}",
            report.rows.len(),
            b.candidate.ladder,
            b.candidate.l,
            b.candidate.batch_size,
            b.candidate.lr,
            b.candidate.d,
            b.valid_mse,
            b.test.mse
        )),
        None => ctx.say("no feasible configuration"),
    }
    Ok(())
}

pub fn synth(ctx: &Context, mut a: SynthArgs) -> Result<(), Failure> {
    merge(&ctx.matches, "out", &mut a.out, &ctx.file.out);
    let kind = match a.kind {
        KindArg::Sine => SynthKind::Sine,
        KindArg::TrendSeason => SynthKind::TrendSeason,
        KindArg::Ar1 => SynthKind::Ar1,
    };
    let params = SynthParams {
        amplitude: a.amplitude,
        period: a.period,
        slope: a.slope,
        noise_std: a.noise,
        rho: a.rho,
        start: a.start,
    };
    let series = synth_series(kind, a.length, &params, ctx.seed)?;
    let mut s = String::with_capacity(series.len() * 20);
    for v in &series.values {
        writeln!(s, "{v}").unwrap();
    }
    write_text(&a.out, &s)?;
    ctx.say(format!("wrote {} values to {}", series.len(), a.out.display()));
    Ok(())
}

pub fn plot(ctx: &Context, mut a: PlotArgs) -> Result<(), Failure> {
    merge(&ctx.matches, "out", &mut a.out, &ctx.file.out);
    let mut series = Vec::with_capacity(a.inputs.len());
    for p in &a.inputs {
        series.push(crate::plot::read_forecast_csv(p)?);
    }
    let labels: Vec<String> = (0..series.len())
        .map(|i| {
            a.labels.get(i).cloned().unwrap_or_else(|| {
                a.inputs[i].file_stem().map_or_else(|| format!("series {}", i + 1), |s| s.to_string_lossy().into_owned())
            })
        })
        .collect();
    let svg = crate::plot::render(&a.title, &series, &labels)?;
    write_text(&a.out, &svg)?;
    ctx.say(format!("wrote {}", a.out.display()));
    Ok(())
}
