//! Series ingestion, Min-Max normalization, chronological splits and
//! sliding-window samples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Noise, Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub values: Vec<f64>,
    pub source: String,
}

impl RawSeries {
    pub fn new(values: Vec<f64>, source: impl Into<String>) -> Self {
        RawSeries {
            values,
            source: source.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Reads one numeric column of a CSV file. Blank lines are skipped; cells
/// are parsed with Rust's locale-independent float grammar.
pub fn load_csv(path: impl AsRef<Path>, column: usize, has_header: bool) -> Result<RawSeries> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                cell: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let cell = record.get(column).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            cell: format!("<no column {column}>"),
        })?;
        let v: f64 = cell.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            cell: cell.to_string(),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                cell: cell.to_string(),
            });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::Data(format!("{shown}: series is empty")));
    }
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or(shown);
    Ok(RawSeries { values, source })
}

/// Min-Max scaling `s' = (s − min) / (max − min)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub min: f64,
    pub max: f64,
}

impl Normalizer {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::Data(format!("non-finite range [{min}, {max}]")));
        }
        if max <= min {
            return Err(Error::DegenerateRange(min));
        }
        Ok(Normalizer { min, max })
    }

    /// Maps values unchanged; used by freshly built models.
    pub fn identity() -> Self {
        Normalizer { min: 0.0, max: 1.0 }
    }

    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("cannot fit a normalizer on no values".into()));
        }
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Normalizer::new(lo, hi)
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / self.range()
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.range() + self.min
    }

    pub fn normalize(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.invert(v)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: RawSeries,
    pub valid: RawSeries,
    pub test: RawSeries,
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Sizes `floor(r_train·N)`, `floor(r_valid·N)` and the remainder.
pub fn split_sizes(len: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!(
            "split ratios {a}/{b}/{c} must be in [0, 1] and sum to 1"
        )));
    }
    // the small nudge keeps e.g. 0.1·1400 from landing on 139.999…
    let floor = |r: f64| ((r * len as f64) + 1e-9).floor() as usize;
    let train = floor(a).min(len);
    let valid = floor(b).min(len - train);
    Ok((train, valid, len - train - valid))
}

/// Contiguous train/valid/test segments; each must hold at least
/// `min_len` values.
pub fn split_chronological(
    series: &RawSeries,
    ratios: (f64, f64, f64),
    min_len: usize,
) -> Result<Splits> {
    let (n_train, n_valid, _) = split_sizes(series.len(), ratios)?;
    let v = &series.values;
    let seg = |lo: usize, hi: usize, name: &str| -> Result<RawSeries> {
        if hi - lo < min_len {
            return Err(Error::Data(format!(
                "{name} segment has {} values, needs at least {min_len}",
                hi - lo
            )));
        }
        Ok(RawSeries::new(v[lo..hi].to_vec(), format!("{}:{name}", series.source)))
    };
    Ok(Splits {
        train: seg(0, n_train, "train")?,
        valid: seg(n_train, n_train + n_valid, "valid")?,
        test: seg(n_train + n_valid, v.len(), "test")?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub window: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub split: Split,
    pub samples: Vec<Sample>,
    pub normalizer: Normalizer,
    pub m: usize,
    pub n: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the selected samples into `([B × m], [B × n])`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let mut w = Vec::with_capacity(indices.len() * self.m);
        let mut y = Vec::with_capacity(indices.len() * self.n);
        for &i in indices {
            w.extend_from_slice(&self.samples[i].window);
            y.extend_from_slice(&self.samples[i].target);
        }
        (
            Tensor::from_parts(vec![indices.len(), self.m], w),
            Tensor::from_parts(vec![indices.len(), self.n], y),
        )
    }

    pub fn targets(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.target.clone()).collect()
    }
}

/// Sliding windows with stride 1 over an already normalized segment.
pub fn make_windows(
    segment: &[f64],
    m: usize,
    n: usize,
    split: Split,
    normalizer: Normalizer,
) -> Result<WindowedDataset> {
    if m == 0 || n == 0 {
        return Err(Error::Data("window and horizon lengths must be positive".into()));
    }
    if segment.len() < m + n {
        return Err(Error::Data(format!(
            "segment of length {} is shorter than m + n = {}",
            segment.len(),
            m + n
        )));
    }
    let samples = (0..=segment.len() - m - n)
        .map(|k| Sample {
            window: segment[k..k + m].to_vec(),
            target: segment[k + m..k + m + n].to_vec(),
        })
        .collect();
    Ok(WindowedDataset {
        split,
        samples,
        normalizer,
        m,
        n,
    })
}

/// All three windowed splits, normalized with training-segment statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub train: WindowedDataset,
    pub valid: WindowedDataset,
    pub test: WindowedDataset,
    pub normalizer: Normalizer,
    /// Normalized training segment, used by the AR baseline.
    pub train_series: Vec<f64>,
    pub source: String,
}

impl PreparedData {
    pub fn new(series: &RawSeries, m: usize, n: usize) -> Result<Self> {
        Self::with_ratios(series, m, n, DEFAULT_RATIOS)
    }

    pub fn with_ratios(series: &RawSeries, m: usize, n: usize, ratios: (f64, f64, f64)) -> Result<Self> {
        Self::build(series, m, n, ratios, None)
    }

    /// Same splits, but scaled with a known normalizer (e.g. the one stored
    /// in a trained model) instead of refitting on the training segment.
    pub fn with_normalizer(series: &RawSeries, m: usize, n: usize, normalizer: Normalizer) -> Result<Self> {
        Self::build(series, m, n, DEFAULT_RATIOS, Some(normalizer))
    }

    fn build(
        series: &RawSeries,
        m: usize,
        n: usize,
        ratios: (f64, f64, f64),
        normalizer: Option<Normalizer>,
    ) -> Result<Self> {
        let splits = split_chronological(series, ratios, m + n)?;
        let normalizer = match normalizer {
            Some(n) => n,
            None => Normalizer::fit(&splits.train.values)?,
        };
        let norm = |s: &RawSeries| normalizer.normalize(&s.values);
        let train_series = norm(&splits.train);
        Ok(PreparedData {
            train: make_windows(&train_series, m, n, Split::Train, normalizer)?,
            valid: make_windows(&norm(&splits.valid), m, n, Split::Valid, normalizer)?,
            test: make_windows(&norm(&splits.test), m, n, Split::Test, normalizer)?,
            normalizer,
            train_series,
            source: series.source.clone(),
        })
    }

    pub fn m(&self) -> usize {
        self.train.m
    }

    pub fn n(&self) -> usize {
        self.train.n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Sine,
    TrendSeason,
    Ar1,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(SynthKind::Sine),
            "trend_season" => Ok(SynthKind::TrendSeason),
            "ar1" => Ok(SynthKind::Ar1),
            other => Err(Error::Config(format!(
                "unknown series kind {other:?} (expected sine, trend_season or ar1)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub amplitude: f64,
    pub period: f64,
    pub slope: f64,
    pub noise_std: f64,
    pub rho: f64,
    /// Initial value of the AR(1) recursion.
    pub start: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            amplitude: 1.0,
            period: 25.0,
            slope: 0.01,
            noise_std: 0.1,
            rho: 0.8,
            start: 1.0,
        }
    }
}

/// Deterministic test series:
/// * sine: `A·sin(2πt/P)`
/// * trend_season: `a·t + A·sin(2πt/P) + noise`
/// * ar1: `s_t = ρ·s_{t−1} + noise`, starting from `start`
pub fn synth_series(kind: SynthKind, length: usize, params: &SynthParams, seed: u64) -> Result<RawSeries> {
    if length == 0 {
        return Err(Error::Data("series length must be positive".into()));
    }
    let p = params;
    if matches!(kind, SynthKind::Sine | SynthKind::TrendSeason) && !(p.period > 0.0 && p.period.is_finite()) {
        return Err(Error::Data(format!("period must be positive, got {}", p.period)));
    }
    if !(p.noise_std >= 0.0 && p.noise_std.is_finite()) {
        return Err(Error::Data(format!("noise std must be non-negative, got {}", p.noise_std)));
    }
    let mut rng = Rng::new(seed);
    let season = |t: usize| p.amplitude * (2.0 * std::f64::consts::PI * t as f64 / p.period).sin();
    let values: Vec<f64> = match kind {
        SynthKind::Sine => (0..length).map(season).collect(),
        SynthKind::TrendSeason => (0..length)
            .map(|t| p.slope * t as f64 + season(t) + p.noise_std * rng.standard_normal())
            .collect(),
        SynthKind::Ar1 => {
            let mut out = Vec::with_capacity(length);
            let mut s = p.start;
            out.push(s);
            for _ in 1..length {
                s = p.rho * s + p.noise_std * rng.standard_normal();
                out.push(s);
            }
            out
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("synthetic series diverged".into()));
    }
    let name = match kind {
        SynthKind::Sine => "sine",
        SynthKind::TrendSeason => "trend_season",
        SynthKind::Ar1 => "ar1",
    };
    Ok(RawSeries::new(values, name))
}
