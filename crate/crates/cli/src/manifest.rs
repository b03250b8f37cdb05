use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use platoon_core::config::Config;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub top: u64,
    /// Derived streams, by name, for the streams the command actually used.
    pub derived: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_digest: String,
    pub seeds: Seeds,
    pub started: String,
    pub finished: String,
    pub exit_code: u8,
    pub outputs: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical serialization, so formatting and comments in the
/// source file do not matter.
pub fn config_digest(cfg: &Config) -> platoon_core::Result<String> {
    Ok(sha256_hex(cfg.to_toml()?.as_bytes()))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Collects the files a command writes so the manifest can list them.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        log::info!("wrote {}", self.dir.join(name).display());
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> platoon_core::Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        Ok(self.write(name, &text)?)
    }

    /// Re-reads every listed file; a missing output is an error rather
    /// than a silently incomplete manifest.
    pub fn finish(self, mut manifest: RunManifest) -> std::io::Result<RunManifest> {
        for f in &self.files {
            let bytes = fs::read(self.dir.join(f))?;
            manifest.outputs.push(Artifact {
                file: f.clone(),
                sha256: sha256_hex(&bytes),
            });
        }
        let mut text = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
        text.push(b'\n');
        fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}
