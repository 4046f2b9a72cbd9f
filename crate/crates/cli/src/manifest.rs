//! Run manifests: every command records its resolved configuration, input
//! and output checksums, seed, and wall time next to its primary artifact,
//! so a run can be replayed exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::json;
use sha2::{Digest, Sha256};

pub struct ManifestBuilder {
    command: String,
    argv: Vec<String>,
    config: BTreeMap<String, String>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    stats: BTreeMap<String, serde_json::Value>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: BTreeMap::new(),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stats: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, resolved: BTreeMap<String, String>) -> &mut Self {
        self.config.extend(resolved);
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn stat(&mut self, key: &str, value: impl Into<serde_json::Value>) -> &mut Self {
        self.stats.insert(key.to_string(), value.into());
        self
    }

    /// Hashes all recorded files and writes the manifest JSON.
    pub fn write(&self, manifest_path: &Path) -> Result<()> {
        let hash_all = |paths: &[PathBuf]| -> Result<Vec<serde_json::Value>> {
            paths
                .iter()
                .map(|p| {
                    Ok(json!({
                        "path": p.display().to_string(),
                        "sha256": sha256_file(p)?,
                    }))
                })
                .collect()
        };
        let manifest = json!({
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "seed": self.seed,
            "inputs": hash_all(&self.inputs)?,
            "outputs": hash_all(&self.outputs)?,
            "wall_time_ms": self.started.elapsed().as_millis() as u64,
            "created_utc": chrono::Utc::now().to_rfc3339(),
        });
        let text = serde_json::to_string_pretty(&manifest)?;
        let mut doc = serde_json::from_str::<serde_json::Value>(&text)?;
        if !self.stats.is_empty() {
            doc["stats"] = json!(self.stats);
        }
        std::fs::write(manifest_path, serde_json::to_string_pretty(&doc)?)
            .with_context(|| format!("writing manifest {}", manifest_path.display()))?;
        log::info!("wrote manifest {}", manifest_path.display());
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(hex_string(&digest))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Manifest path for a primary artifact: `<artifact>.manifest.json`.
pub fn manifest_path_for(artifact: &Path) -> PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".into());
    name.push_str(".manifest.json");
    artifact.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_records_hashes_and_config() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, b"hello").unwrap();

        let mut builder = ManifestBuilder::new("test");
        builder.seed(7).input(&input).stat("n", 3);
        let mut config = BTreeMap::new();
        config.insert("epochs".to_string(), "5".to_string());
        builder.config(config);

        let path = manifest_path_for(&dir.path().join("artifact.bin"));
        builder.write(&path).unwrap();

        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(doc["command"], "test");
        assert_eq!(doc["seed"], 7);
        assert_eq!(doc["config"]["epochs"], "5");
        assert_eq!(
            doc["inputs"][0]["sha256"],
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert_eq!(doc["stats"]["n"], 3);
    }
}
