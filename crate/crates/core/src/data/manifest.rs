use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_features, VideoSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub category: String,
    pub split: Split,
    /// Feature file, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub t_full: usize,
    pub d_in_v: usize,
    pub d_in_a: usize,
}

/// JSON index of a dataset's feature files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset: String,
    pub categories: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("manifest {}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .entries
            .first()
            .ok_or_else(|| Error::Data(format!("manifest for {} has no entries", self.dataset)))?;
        for e in &self.entries {
            if (e.d_in_v, e.d_in_a) != (first.d_in_v, first.d_in_a) {
                return Err(Error::Data(format!(
                    "video {} has dims ({}, {}), dataset uses ({}, {})",
                    e.id, e.d_in_v, e.d_in_a, first.d_in_v, first.d_in_a
                )));
            }
            if !self.categories.contains(&e.category) {
                return Err(Error::Data(format!(
                    "video {} has undeclared category {}",
                    e.id, e.category
                )));
            }
        }
        Ok(())
    }

    /// `(d_in_v, d_in_a)` shared by every entry.
    pub fn dims(&self) -> (usize, usize) {
        self.entries
            .first()
            .map_or((0, 0), |e| (e.d_in_v, e.d_in_a))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn entries_in(&self, split: Option<Split>) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| split.is_none_or(|s| e.split == s))
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<VideoSequence> {
        let path = self.resolve(entry);
        let mut seq = read_features(&path)?;
        if (seq.len(), seq.d_in_visual(), seq.d_in_audio())
            != (entry.t_full, entry.d_in_v, entry.d_in_a)
        {
            return Err(Error::Data(format!(
                "{}: file holds T={}, d_v={}, d_a={}; manifest says T={}, d_v={}, d_a={}",
                path.display(),
                seq.len(),
                seq.d_in_visual(),
                seq.d_in_audio(),
                entry.t_full,
                entry.d_in_v,
                entry.d_in_a
            )));
        }
        seq.id = entry.id.clone();
        seq.category = entry.category.clone();
        Ok(seq)
    }

    /// Load every video in `split` (all videos when `None`), in manifest order.
    pub fn load_split(&self, split: Option<Split>) -> Result<Vec<VideoSequence>> {
        self.entries_in(split).map(|e| self.load_entry(e)).collect()
    }
}
