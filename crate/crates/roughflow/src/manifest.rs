//! Run manifests and output digests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::Result;

/// One named check of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// Enforced checks decide the exit status; the rest are measurements.
    pub enforced: bool,
    pub pass: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub config: Config,
    pub seed: u64,
    pub schedule_hash: String,
    pub versions: BTreeMap<String, String>,
    pub checks: Vec<CheckOutcome>,
    pub wall_clock_s: f64,
    pub threads: usize,
    /// File name (relative to the output directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass || !c.enforced)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Digest of a serialisable value's JSON form.
pub fn json_digest<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(value)?.as_bytes()))
}

/// Names whose digests differ between two manifests (missing files included).
pub fn digest_mismatches(a: &RunManifest, b: &RunManifest) -> Vec<String> {
    let mut names: Vec<&String> = a.outputs.keys().chain(b.outputs.keys()).collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .filter(|k| a.outputs.get(*k) != b.outputs.get(*k))
        .cloned()
        .collect()
}
