//! Optional TOML defaults, merged under command-line flags.

use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, ValueEnum};
use serde::Deserialize;

use crate::args::{DataArgs, ModelArgs, VariantArg};
use crate::Failure;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub column: Option<usize>,
    pub header: Option<bool>,
    pub l: Option<usize>,
    #[serde(rename = "L")]
    pub ladder: Option<usize>,
    pub d_z: Option<usize>,
    pub d_h: Option<usize>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub warmup_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub variant: Option<String>,
    pub parallel: Option<usize>,
    pub model_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub grid: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }
}

/// True when the user typed the flag, as opposed to clap filling in its
/// default.
pub fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(m.try_get_raw(id), Ok(Some(_))) && m.value_source(id) == Some(ValueSource::CommandLine)
}

/// `slot = file value` unless the flag was given explicitly.
pub fn merge<T: Clone>(m: &ArgMatches, id: &str, slot: &mut T, file: &Option<T>) {
    if let Some(v) = file {
        if !explicit(m, id) {
            *slot = v.clone();
        }
    }
}

pub fn merge_opt<T: Clone>(m: &ArgMatches, id: &str, slot: &mut Option<T>, file: &Option<T>) {
    if let Some(v) = file {
        if !explicit(m, id) {
            *slot = Some(v.clone());
        }
    }
}

pub fn merge_data(m: &ArgMatches, a: &mut DataArgs, f: &FileConfig) {
    merge_opt(m, "data", &mut a.data, &f.data);
    merge(m, "column", &mut a.column, &f.column);
    merge(m, "header", &mut a.header, &f.header);
}

pub fn merge_model(m: &ArgMatches, a: &mut ModelArgs, f: &FileConfig) -> Result<(), Failure> {
    merge(m, "l", &mut a.l, &f.l);
    merge(m, "ladder", &mut a.ladder, &f.ladder);
    merge(m, "d_z", &mut a.d_z, &f.d_z);
    merge(m, "d_h", &mut a.d_h, &f.d_h);
    merge(m, "n", &mut a.n, &f.n);
    merge(m, "m", &mut a.m, &f.m);
    merge(m, "warmup_epochs", &mut a.warmup_epochs, &f.warmup_epochs);
    merge(m, "epochs", &mut a.epochs, &f.epochs);
    merge(m, "batch_size", &mut a.batch_size, &f.batch_size);
    merge(m, "lr", &mut a.lr, &f.lr);
    if let Some(v) = &f.variant {
        if !explicit(m, "variant") {
            a.variant = VariantArg::from_str(v, false)
                .map_err(|_| Failure::usage(format!("config: unknown variant {v:?}")))?;
        }
    }
    Ok(())
}
