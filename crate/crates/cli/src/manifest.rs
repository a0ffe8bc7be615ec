use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub wall_clock_seconds: f64,
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects what a manifest needs while a subcommand runs.
pub struct ManifestBuilder {
    subcommand: String,
    started: Instant,
    inputs: Vec<InputDigest>,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            started: Instant::now(),
            inputs: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: digest(bytes),
        });
    }

    pub fn finish(self, config: serde_json::Value) -> RunManifest {
        RunManifest {
            subcommand: self.subcommand,
            tool_version: env!("CARGO_PKG_VERSION"),
            config,
            inputs: self.inputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        }
    }
}

/// Output directory; every path written goes through `path`, which keeps
/// writes inside it.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        debug_assert!(!name.contains(".."));
        self.root.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}
