//! Run manifests: what went in, what came out, and how.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Headline numbers, e.g. held-out accuracy or the success count.
    pub results: BTreeMap<String, serde_json::Value>,
    pub duration_seconds: f64,
}

impl Manifest {
    pub fn new(command: &str, config: BTreeMap<String, String>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            results: BTreeMap::new(),
            duration_seconds: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path, None)?);
        Ok(())
    }

    /// Records `path`, shown relative to `root` when it lies inside it.
    pub fn add_output(&mut self, path: &Path, root: Option<&Path>) -> Result<()> {
        self.outputs.push(digest(path, root)?);
        Ok(())
    }

    pub fn record(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.results.insert(key.to_string(), value.into());
    }

    pub fn finish(&mut self, elapsed: Duration, path: &Path) -> Result<()> {
        self.duration_seconds = elapsed.as_secs_f64();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digest(path: &Path, root: Option<&Path>) -> Result<FileDigest> {
    let shown: PathBuf = root
        .and_then(|r| path.strip_prefix(r).ok())
        .map_or_else(|| path.to_path_buf(), Path::to_path_buf);
    Ok(FileDigest {
        path: shown.to_string_lossy().replace('\\', "/"),
        sha256: sha256_file(path)?,
    })
}

/// Every regular file under `dir`, sorted, for hashing a directory input.
pub fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}
