//! On-disk layout: corpus directory, split file, model containers with
//! sidecars, and JSON reports.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use density_core::baseline::{BaselineModel, BaselineSidecar};
use density_core::cnn::{CnnSidecar, MultiColumnNet};
use density_core::corpus::{apply_exclusion, Manifest, SplitAssignment};
use density_core::dataset::LabeledViews;
use density_core::evalkit::round_significant;
use density_core::experiment::{baseline_probabilities, cnn_probabilities, PreparedCorpus};
use density_core::numerics::{ntw, ParamSet};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.jsonl";
pub const TRUTH: &str = "truth.jsonl";
pub const SPLIT: &str = "split.json";

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(path.display().to_string()))
    }
}

fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            serde_json::Number::from_f64(round_significant(x, 6)).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(o) => {
            Value::Object(o.into_iter().map(|(k, v)| (k, round_floats(v))).collect())
        }
        other => other,
    }
}

/// Pretty JSON with every float at six significant digits.
pub fn to_report_json<T: Serialize>(value: &T) -> String {
    let v = round_floats(serde_json::to_value(value).expect("report serializes"));
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_text(path, &to_report_json(value))
}

pub fn read_split(path: &Path) -> Result<SplitAssignment, CliError> {
    require(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(SplitAssignment::from_json(&text)?)
}

/// Reads the manifest, applies the exclusion rule and loads every view.
/// The split comes from `split_path`.
pub fn load_corpus(corpus_dir: &Path, split_path: &Path) -> Result<PreparedCorpus, CliError> {
    let manifest_path = corpus_dir.join(MANIFEST);
    require(&manifest_path)?;
    let split = read_split(split_path)?;
    let manifest = Manifest::read_jsonl(&manifest_path)?;
    let (manifest, excluded) = apply_exclusion(&manifest)?;
    let mut views = HashMap::with_capacity(manifest.len());
    for r in manifest.records() {
        views.insert(
            r.exam_id.clone(),
            manifest.load_views(corpus_dir, &r.exam_id)?,
        );
    }
    Ok(PreparedCorpus::with_split(
        manifest, views, excluded, split,
    )?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSidecar {
    Baseline(BaselineSidecar),
    Cnn(CnnSidecar),
}

pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

pub fn save_model(
    weights: &Path,
    params: &ParamSet,
    sidecar: &ModelSidecar,
) -> Result<(), CliError> {
    if let Some(parent) = weights.parent() {
        ensure_dir(parent)?;
    }
    ntw::save(params, weights)
        .map_err(|e| CliError::Format(format!("{}: {e}", weights.display())))?;
    let mut text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    text.push('\n');
    write_text(&sidecar_path(weights), &text)
}

pub enum LoadedModel {
    Baseline(BaselineModel),
    Cnn(Box<MultiColumnNet>, ParamSet),
}

impl LoadedModel {
    pub fn probabilities(&self, data: &[LabeledViews<'_>]) -> Result<Vec<Vec<f64>>, CliError> {
        Ok(match self {
            LoadedModel::Baseline(m) => baseline_probabilities(m, data)?,
            LoadedModel::Cnn(net, params) => cnn_probabilities(net, params, data)?,
        })
    }

    pub fn classes(&self) -> usize {
        match self {
            LoadedModel::Baseline(_) => 4,
            LoadedModel::Cnn(net, _) => net.config().classes,
        }
    }
}

pub fn load_model(weights: &Path) -> Result<LoadedModel, CliError> {
    require(weights)?;
    let side = sidecar_path(weights);
    require(&side)?;
    let text = std::fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
    let sidecar: ModelSidecar = serde_json::from_str(&text)
        .map_err(|e| CliError::Format(format!("{}: {e}", side.display())))?;
    let params =
        ntw::load(weights).map_err(|e| CliError::Format(format!("{}: {e}", weights.display())))?;
    Ok(match sidecar {
        ModelSidecar::Baseline(s) => LoadedModel::Baseline(BaselineModel::from_parts(&s, params)?),
        ModelSidecar::Cnn(s) => {
            let net = MultiColumnNet::new(s.config)?;
            for (name, shape) in net.param_shapes() {
                match params.get(&name) {
                    Some(t) if t.shape() == shape.as_slice() => {}
                    _ => {
                        return Err(CliError::Format(format!(
                            "{}: parameter {name} missing or misshapen",
                            weights.display()
                        )))
                    }
                }
            }
            LoadedModel::Cnn(Box::new(net), params)
        }
    })
}
