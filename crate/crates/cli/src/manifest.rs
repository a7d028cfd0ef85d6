//! Run manifest: the config snapshot, seed, input hashes, and artifact list
//! every command writes next to its outputs.

use mpool_core::Result;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    /// Fully resolved configuration, defaults included.
    pub config: BTreeMap<String, String>,
    /// Keys explicitly overridden by a config file or flag.
    pub overrides: BTreeMap<String, String>,
    /// Content hash (fnv1a-64, hex) of each input file.
    pub input_hashes: BTreeMap<String, String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            config: BTreeMap::new(),
            overrides: BTreeMap::new(),
            input_hashes: BTreeMap::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            artifacts: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn hash_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.input_hashes.insert(
            path.display().to_string(),
            format!("{:016x}", fnv1a64(&bytes)),
        );
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    pub fn finish_and_write(mut self, path: &Path) -> Result<()> {
        self.finished_unix_ms = now_ms();
        let json = serde_json::to_string_pretty(&self)
            .map_err(|e| mpool_core::Error::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
