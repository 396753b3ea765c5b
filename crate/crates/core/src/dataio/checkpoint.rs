//! Checkpoint directories: `manifest.json` plus named binary blobs, each pinned by its SHA-256.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub version: u32,
    pub component: String,
    pub profile: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    /// Blob file name to SHA-256 hex digest.
    pub blobs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the compact JSON rendering; object keys are sorted, so equal configs hash equally.
pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub blobs: BTreeMap<String, Vec<u8>>,
}

impl Checkpoint {
    pub fn new(
        component: &str,
        profile: &str,
        config: serde_json::Value,
        seed: u64,
        metrics: BTreeMap<String, f64>,
        blobs: BTreeMap<String, Vec<u8>>,
    ) -> Self {
        let manifest = CheckpointManifest {
            version: CHECKPOINT_VERSION,
            component: component.to_string(),
            profile: profile.to_string(),
            config_hash: config_hash(&config),
            config,
            seed,
            metrics,
            blobs: blobs.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect(),
        };
        Self { manifest, blobs }
    }

    pub fn blob(&self, name: &str) -> Result<&[u8]> {
        self.blobs
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Manifest(format!("checkpoint has no blob `{name}`")))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, bytes) in &self.blobs {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join(MANIFEST_FILE);
        std::fs::write(&p, serde_json::to_string_pretty(&self.manifest)?)
            .map_err(|e| Error::io(&p, e))
    }

    /// Reads and validates the whole checkpoint before returning anything.
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        if !p.exists() {
            return Err(Error::MissingFile(p));
        }
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let raw: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", p.display())))?;
        let version = raw.get("version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Version {
                what: "checkpoint manifest",
                found: version.unwrap_or(0) as u32,
                supported: CHECKPOINT_VERSION,
            });
        }
        let manifest: CheckpointManifest = serde_json::from_value(raw)
            .map_err(|e| Error::Manifest(format!("{}: {e}", p.display())))?;
        let actual = config_hash(&manifest.config);
        if actual != manifest.config_hash {
            return Err(Error::HashMismatch {
                expected: manifest.config_hash.clone(),
                actual,
            });
        }
        let mut blobs = BTreeMap::new();
        for (name, digest) in &manifest.blobs {
            let bp = dir.join(name);
            if !bp.exists() {
                return Err(Error::MissingFile(bp));
            }
            let bytes = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
            let actual = sha256_hex(&bytes);
            if &actual != digest {
                return Err(Error::HashMismatch {
                    expected: digest.clone(),
                    actual,
                });
            }
            blobs.insert(name.clone(), bytes);
        }
        Ok(Self { manifest, blobs })
    }

    /// Like [`Checkpoint::load`] but also requires the component name.
    pub fn load_component(dir: &Path, component: &str) -> Result<Self> {
        let ck = Self::load(dir)?;
        if ck.manifest.component != component {
            return Err(Error::Manifest(format!(
                "{}: expected a `{component}` checkpoint, found `{}`",
                dir.display(),
                ck.manifest.component
            )));
        }
        Ok(ck)
    }
}
