//! Run manifest: a key=value record of what was run and what it cost.
//! Manifests are never overwritten; reruns in the same directory get
//! versioned suffixes (`manifest.txt`, `manifest.1.txt`, ...).

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ordered key=value pairs describing one run.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(mode: &str, config_text: &str, seed: u64, threads: usize) -> Self {
        let mut m = Self::default();
        m.push("artifact_version", ARTIFACT_VERSION);
        m.push("mode", mode);
        m.push("config_hash", config_hash(config_text));
        m.push("seed", seed.to_string());
        m.push("threads", threads.to_string());
        m
    }

    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.entries.push((key.to_string(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Writes to the first free versioned manifest path in `dir` and returns
    /// that path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = next_manifest_path(dir);
        std::fs::write(&path, self.render())?;
        Ok(path)
    }
}

fn next_manifest_path(dir: &Path) -> PathBuf {
    let first = dir.join("manifest.txt");
    if !first.exists() {
        return first;
    }
    for k in 1.. {
        let p = dir.join(format!("manifest.{k}.txt"));
        if !p.exists() {
            return p;
        }
    }
    unreachable!()
}

pub fn config_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses a manifest back into pairs (for tests and the rerun check).
pub fn parse_manifest(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| {
            let (k, v) = l.split_once(" = ")?;
            Some((k.to_string(), v.to_string()))
        })
        .collect()
}
