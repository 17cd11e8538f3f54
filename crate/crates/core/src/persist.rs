//! Model file: a versioned JSON document.
//!
//! ```text
//! { "format_version": 1,
//!   "variant": "full",
//!   "config": { "l", "L", "d_z", "d_h", "n", "m", "warmup_epochs", "seed" },
//!   "normalization": { "min", "max" },
//!   "params": { name: { "shape": [..], "data": [..] } } }
//! ```
//!
//! Floats are written with 17 significant digits, which round-trips every
//! finite `f64` exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::model::{HyVaeConfig, HyVaeModel, Variant};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u64 = 1;

fn push_float(out: &mut String, v: f64) {
    // `{:e}` never prints a lossy short form; 16 fractional digits = 17 significant
    write!(out, "{v:.16e}").unwrap();
}

pub fn to_string(model: &HyVaeModel) -> String {
    let mut out = String::with_capacity(model.params().numel() * 26 + 512);
    let cfg = serde_json::to_string(model.config()).expect("config is plain data");
    let norm = model.normalizer();
    write!(
        out,
        "{{\n  \"format_version\": {FORMAT_VERSION},\n  \"variant\": \"{}\",\n  \"config\": {cfg},\n  \"normalization\": {{\"min\": ",
        model.kind()
    )
    .unwrap();
    push_float(&mut out, norm.min);
    out.push_str(", \"max\": ");
    push_float(&mut out, norm.max);
    out.push_str("},\n  \"params\": {");
    for (i, (name, t)) in model.params().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let name = serde_json::to_string(name).unwrap();
        write!(out, "\n    {name}: {{\"shape\": {:?}, \"data\": [", t.shape()).unwrap();
        for (j, &v) in t.data().iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            push_float(&mut out, v);
        }
        out.push_str("]}");
    }
    out.push_str("\n  }\n}\n");
    out
}

pub fn to_bytes(model: &HyVaeModel) -> Vec<u8> {
    to_string(model).into_bytes()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[allow(dead_code)]
    format_version: u64,
    #[serde(default = "full")]
    variant: Variant,
    config: HyVaeConfig,
    normalization: Normalizer,
    params: BTreeMap<String, ParamEntry>,
}

fn full() -> Variant {
    Variant::Full
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn json_error(e: serde_json::Error) -> Error {
    if e.is_eof() {
        Error::Truncated(e.to_string())
    } else {
        Error::Malformed(e.to_string())
    }
}

pub fn from_slice(bytes: &[u8]) -> Result<HyVaeModel> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(json_error)?;
    let found = value
        .get("format_version")
        .ok_or_else(|| Error::Malformed("missing format_version".into()))?
        .as_u64()
        .ok_or_else(|| Error::Malformed("format_version is not an integer".into()))?;
    if found != FORMAT_VERSION {
        return Err(Error::Version {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let doc: Document = serde_json::from_value(value).map_err(|e| Error::Malformed(e.to_string()))?;
    let normalizer = Normalizer::new(doc.normalization.min, doc.normalization.max)
        .map_err(|e| Error::Malformed(format!("normalization: {e}")))?;

    let mut model = HyVaeModel::build(doc.config, doc.variant).map_err(|e| Error::Malformed(e.to_string()))?;
    let mut entries = doc.params;
    for id in model.params().ids().collect::<Vec<_>>() {
        let name = model.params().name(id).to_string();
        let entry = entries.remove(&name).ok_or_else(|| Error::ShapeInconsistency {
            name: name.clone(),
            msg: "missing from file".into(),
        })?;
        let want = model.params().get(id).shape().to_vec();
        if entry.shape != want {
            return Err(Error::ShapeInconsistency {
                name,
                msg: format!("shape {:?} does not match the config's {:?}", entry.shape, want),
            });
        }
        let tensor = Tensor::new(&entry.shape, entry.data).map_err(|e| Error::ShapeInconsistency {
            name: name.clone(),
            msg: e.to_string(),
        })?;
        if !tensor.is_finite() {
            return Err(Error::Malformed(format!("parameter {name} has non-finite values")));
        }
        *model.params_mut().get_mut(id) = tensor;
    }
    if let Some(extra) = entries.keys().next() {
        return Err(Error::ShapeInconsistency {
            name: extra.clone(),
            msg: "not a parameter of this configuration".into(),
        });
    }
    model.set_normalizer(normalizer);
    Ok(model)
}

/// Writes through a temporary sibling and renames, so a failed write never
/// leaves a partial file at `path`.
pub fn save(model: &HyVaeModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &to_bytes(model))
}

pub fn load(path: impl AsRef<Path>) -> Result<HyVaeModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_slice(&bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.partial", file_name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io(e)
    })
}
