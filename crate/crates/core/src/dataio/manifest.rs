use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::formats::read_single_slice;
use super::phantom::Contrast;
use crate::error::{Error, Result};
use crate::fourier::MaskPattern;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Slice file path, relative to the manifest directory.
    pub file: PathBuf,
    pub contrast: Contrast,
    pub split: Split,
    pub pattern: MaskPattern,
    pub mask_seed: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, height: usize, width: usize) -> Self {
        Self {
            version: MANIFEST_VERSION,
            height,
            width,
            entries: Vec::new(),
            root: root.into(),
        }
    }

    pub fn path_of(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.file)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Each id and each file belongs to exactly one entry, hence to exactly one split.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut files = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("slice id `{}` listed twice", e.id)));
            }
            if !files.insert(e.file.as_path()) {
                return Err(Error::Manifest(format!(
                    "file {} referenced by more than one entry",
                    e.file.display()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Loads and validates: version, split disjointness, and that every slice parses with the
    /// declared shape.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Version {
                what: "dataset manifest",
                found: m.version,
                supported: MANIFEST_VERSION,
            });
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check_disjoint()?;
        for e in &m.entries {
            let img = read_single_slice(&m.path_of(e))?;
            if img.shape() != (m.height, m.width) {
                return Err(Error::ShapeMismatch {
                    expected: (m.height, m.width),
                    actual: img.shape(),
                });
            }
        }
        Ok(m)
    }
}
