use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use segrel_core::data::{read_label_png, read_tensor, DatasetManifest, LabelMap, LogitStack, ManifestEntry};
use segrel_core::genplan::CITYSCAPES_CLASSES;

/// Malformed or missing user input; maps to exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

/// Loads a manifest and rejects empty ones.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))?;
    if m.entries.is_empty() {
        return Err(input_error(format!("manifest {} has no entries", path.display())));
    }
    Ok(m)
}

pub fn load_logits(path: &Path) -> Result<LogitStack> {
    let t = read_tensor(path)?;
    LogitStack::from_tensor(t).with_context(|| format!("logits {}", path.display()))
}

pub fn load_labels(path: &Path, num_classes: usize, ignore_id: u8) -> Result<LabelMap> {
    let map = read_label_png(path, ignore_id)?;
    map.validate(num_classes)
        .with_context(|| format!("labels {}", path.display()))?;
    Ok(map)
}

/// Predicted label map of a prediction entry: argmax of its logits when
/// present, otherwise its label PNG.
pub fn load_prediction(entry: &ManifestEntry, m: &DatasetManifest) -> Result<LabelMap> {
    let pred = match &entry.logits_path {
        Some(p) => {
            let logits = load_logits(p)?;
            if logits.num_classes() != m.num_classes {
                return Err(input_error(format!(
                    "{}: logits have {} classes, manifest says {}",
                    entry.sample_id,
                    logits.num_classes(),
                    m.num_classes
                )));
            }
            logits.argmax()
        }
        None => read_label_png(&entry.label_path, m.ignore_id)?,
    };
    Ok(pred)
}

/// The model a manifest belongs to: its entries' common `model_id`, or the
/// manifest's file stem.
pub fn manifest_model_id(m: &DatasetManifest, path: &Path) -> Result<String> {
    let ids: std::collections::BTreeSet<&str> = m.entries.iter().filter_map(|e| e.model_id.as_deref()).collect();
    match ids.len() {
        0 => Ok(path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())),
        1 => Ok(ids.into_iter().next().unwrap_or_default().to_string()),
        _ => Err(input_error(format!("{} mixes several model_ids", path.display()))),
    }
}

pub fn class_name(class: usize, num_classes: usize) -> String {
    if num_classes == CITYSCAPES_CLASSES.len() {
        CITYSCAPES_CLASSES[class].to_string()
    } else {
        format!("class_{class}")
    }
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    ensure_parent(path)?;
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// One row of a bench report.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct BenchRow {
    pub model_id: String,
    pub domain_tag: String,
    pub metric: String,
    pub value: f64,
}

pub const MIOU: &str = "mIoU";

pub fn read_bench_rows(path: &Path) -> Result<Vec<BenchRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| input_error(format!("{}: {e}", path.display()))))
        .collect()
}

/// `metric` value per `(model_id, domain_tag)`.
pub fn metric_table(rows: &[BenchRow], metric: &str) -> BTreeMap<(String, String), f64> {
    rows.iter()
        .filter(|r| r.metric == metric)
        .map(|r| ((r.model_id.clone(), r.domain_tag.clone()), r.value))
        .collect()
}

/// Comma-separated list of positive integers.
pub fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}
