//! Dataset manifest: a JSON file listing mesh/field pairs and the fold split
//! used for leave-one-out evaluation. Paths are relative to the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub mesh: PathBuf,
    pub field: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patches: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
    /// Entry indices held out one at a time; defaults to every entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<Vec<usize>>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            version: MANIFEST_VERSION,
            entries,
            folds: None,
        }
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!(
                    "manifest version {} not supported (expected {MANIFEST_VERSION})",
                    self.version
                ),
            });
        }
        if self.entries.is_empty() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "manifest lists no entries".into(),
            });
        }
        if let Some(folds) = &self.folds {
            if folds.is_empty() {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: "fold list is present but empty".into(),
                });
            }
            for &fold in folds {
                if fold >= self.entries.len() {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        message: format!(
                            "fold index {fold} out of range for {} entries",
                            self.entries.len()
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A manifest anchored to the directory it was loaded from.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        manifest.validate(path)?;
        let dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Dataset { dir, manifest })
    }

    pub fn save(manifest: &DatasetManifest, path: &Path) -> Result<()> {
        manifest.validate(path)?;
        let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    pub fn mesh_path(&self, index: usize) -> PathBuf {
        self.dir.join(&self.manifest.entries[index].mesh)
    }

    pub fn field_path(&self, index: usize) -> PathBuf {
        self.dir.join(&self.manifest.entries[index].field)
    }

    pub fn patches_path(&self, index: usize) -> Option<PathBuf> {
        self.manifest.entries[index]
            .patches
            .as_ref()
            .map(|p| self.dir.join(p))
    }

    /// Short label for logs and reports, taken from the mesh file stem.
    pub fn entry_name(&self, index: usize) -> String {
        self.manifest.entries[index]
            .mesh
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("entry-{index}"))
    }

    pub fn folds(&self) -> Vec<usize> {
        match &self.manifest.folds {
            Some(folds) => folds.clone(),
            None => (0..self.manifest.entries.len()).collect(),
        }
    }
}
