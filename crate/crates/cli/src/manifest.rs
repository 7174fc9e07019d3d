//! Run manifest: file digests, stage timings and the assertion summary.

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

impl FileEntry {
    pub fn new(name: &str, contents: &[u8]) -> Self {
        FileEntry {
            name: name.to_string(),
            bytes: contents.len(),
            sha256: hex::encode(Sha256::digest(contents)),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

impl Stage {
    pub fn new(name: &str, seconds: f64) -> Self {
        Stage {
            name: name.to_string(),
            seconds,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct AssertionEntry {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: String,
    /// True when the run was requested as seedless. No stage uses randomness.
    pub seedless: bool,
    pub files: Vec<FileEntry>,
    pub stages: Vec<Stage>,
    pub assertions: Vec<AssertionEntry>,
    pub passed: bool,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
