//! Output staging and run manifests.
//!
//! Commands build every output file in memory first and only touch the
//! output directory once all of them exist, so a failing run leaves nothing
//! behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<asynclidar::detector::AsyncParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_cycles: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng: Option<&'static str>,
    pub output_dir: String,
    /// SHA-256 over the input files' contents and the argument list.
    pub inputs_sha256: String,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, output_dir: &Path) -> Self {
        Self {
            tool: "asynclidar",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args,
            scene: None,
            params: None,
            total_cycles: None,
            seed: None,
            rng: None,
            output_dir: output_dir.display().to_string(),
            inputs_sha256: String::new(),
            outputs: BTreeMap::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the inputs: each input's bytes length-prefixed, then each
/// argument, so no two different input sets share a preimage. The output
/// directory is not an input and is skipped.
pub fn inputs_hash(inputs: &[&[u8]], args: &[String]) -> String {
    let mut h = Sha256::new();
    for bytes in inputs {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    let mut skip = false;
    for a in args {
        if std::mem::take(&mut skip) {
            continue;
        }
        if a == "--out" {
            skip = true;
            continue;
        }
        if a.starts_with("--out=") {
            continue;
        }
        h.update((a.len() as u64).to_le_bytes());
        h.update(a.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Files waiting to be written, keyed by name inside the output directory.
#[derive(Default)]
pub struct Staged {
    files: BTreeMap<String, Vec<u8>>,
}

impl Staged {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(name.into(), bytes);
    }

    /// Writes the files plus `manifest.json` into `dir`.
    pub fn commit(self, dir: &Path, mut manifest: RunManifest) -> Result<PathBuf> {
        for (name, bytes) in &self.files {
            manifest.outputs.insert(name.clone(), sha256_hex(bytes));
        }
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        let path = dir.join("manifest.json");
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dir_does_not_change_inputs_hash() {
        let args = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let a = inputs_hash(&[b"x"], &args(&["simulate", "--out", "a", "--seed", "1"]));
        let b = inputs_hash(&[b"x"], &args(&["simulate", "--out=b", "--seed", "1"]));
        let c = inputs_hash(&[b"x"], &args(&["simulate", "--out", "a", "--seed", "2"]));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(
            a,
            inputs_hash(&[b"y"], &args(&["simulate", "--out", "a", "--seed", "1"]))
        );
    }
}
