//! Run manifests: every command records its inputs, config snapshot, and
//! produced files (with content hashes). The manifest is written last, so
//! its presence marks a completed run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use iadccn::Result;

#[derive(Serialize)]
struct ArtifactRecord {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    command: String,
    seed: Option<u64>,
    config: BTreeMap<String, String>,
    format_versions: BTreeMap<String, u32>,
    artifacts: Vec<ArtifactRecord>,
    started_unix_ms: u128,
    finished_unix_ms: u128,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>) -> RunManifest {
        let mut format_versions = BTreeMap::new();
        format_versions.insert("IADM".to_string(), iadccn::data::DENSITY_FORMAT_VERSION);
        format_versions.insert("IAWT".to_string(), iadccn::model::WEIGHT_FORMAT_VERSION);
        RunManifest {
            command: command.to_string(),
            seed,
            config: BTreeMap::new(),
            format_versions,
            artifacts: Vec::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn set_config(&mut self, entries: impl IntoIterator<Item = (String, String)>) {
        self.config.extend(entries);
    }

    /// Registers a produced file, hashing its current contents.
    pub fn add_artifact(&mut self, base: &Path, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let rel = path.strip_prefix(base).unwrap_or(path);
        self.artifacts.push(ArtifactRecord {
            path: rel.display().to_string(),
            bytes: bytes.len() as u64,
            sha256: format!("{:x}", hasher.finalize()),
        });
        Ok(())
    }

    /// Finalizes and writes `manifest.json` into `dir`; call after every
    /// other artifact exists.
    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix_ms = now_ms();
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self)
            .map_err(|e| iadccn::Error::Data(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, json)?;
        Ok(path)
    }
}
