use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub struct ManifestBuilder {
    command: &'static str,
    started_at: String,
    inputs: Vec<InputFile>,
    config_digest: Option<String>,
    seed: Option<u64>,
}

impl ManifestBuilder {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started_at: now(),
            inputs: Vec::new(),
            config_digest: None,
            seed: None,
        }
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<String> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputFile {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        });
        String::from_utf8(bytes).with_context(|| format!("{} is not valid UTF-8", path.display()))
    }

    pub fn config<T: Serialize>(&mut self, config: &T) {
        let canonical = serde_json::to_vec(config).expect("configs serialize");
        self.config_digest = Some(sha256_hex(&canonical));
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn write(self, dir: &Path, outputs: &[&str]) -> Result<()> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            inputs: self.inputs,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            config_digest: self.config_digest,
            seed: self.seed,
            started_at: self.started_at,
            finished_at: now(),
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
