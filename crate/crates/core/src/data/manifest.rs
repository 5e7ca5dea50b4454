use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DEFAULT_IGNORE_ID;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub label_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_mask_path: Option<PathBuf>,
    pub domain_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

/// A list of samples plus the label space they are annotated in.
///
/// Relative paths inside a manifest file resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub num_classes: usize,
    #[serde(default = "default_ignore_id")]
    pub ignore_id: u8,
}

fn default_ignore_id() -> u8 {
    DEFAULT_IGNORE_ID
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Argument(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if self.num_classes > 255 {
            return Err(Error::Argument(format!(
                "num_classes {} does not fit 8-bit labels",
                self.num_classes
            )));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.sample_id.as_str()) {
                return Err(Error::Consistency(format!("duplicate sample_id {:?}", e.sample_id)));
            }
        }
        Ok(())
    }

    /// Loads and validates a manifest, resolving relative paths against the
    /// manifest's own directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for e in &mut m.entries {
            resolve(base, &mut e.image_path);
            resolve(base, &mut e.label_path);
            if let Some(p) = e.logits_path.as_mut() {
                resolve(base, p);
            }
            if let Some(p) = e.ood_mask_path.as_mut() {
                resolve(base, p);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Entries sorted by sample_id, the reduction order used everywhere.
    pub fn sorted_entries(&self) -> Vec<&ManifestEntry> {
        let mut v: Vec<&ManifestEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        v
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub sample_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub reason_tag: String,
    /// UTC seconds.
    pub timestamp: i64,
}
