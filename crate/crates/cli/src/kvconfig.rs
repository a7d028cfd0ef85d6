//! Flat key = value configuration files with typed lookups.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are rejected
//! so a typo cannot silently fall back to a default, and every accepted
//! override is echoed into the run manifest.

use mpool_core::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

/// Keys a config file may set, with the subsystem they act on.
pub const KNOWN_KEYS: &[&str] = &[
    // pipeline
    "t_h",
    "t_f",
    "downsample",
    "segment_len",
    "accel_threshold",
    "split_train",
    "split_val",
    "split_test",
    "onramp_lanes",
    "d_lat",
    "d_lon",
    // training
    "learning_rate",
    "batch_size",
    "epochs",
    "clip_norm",
    "lambda_traj",
    "lambda_mnv",
    // model widths
    "embed_width",
    "enc_hidden",
    "dec_hidden",
    "mlp_width",
];

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "config line {}: unknown key `{key}`",
                    lineno + 1
                )));
            }
            entries.insert(key, value.trim().to_string());
        }
        Ok(KvConfig { entries })
    }

    pub fn overrides(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("key `{key}`: `{v}` is not a number"))),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("key `{key}`: `{v}` is not an integer"))),
        }
    }

    pub fn u32(&self, key: &str) -> Result<Option<u32>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("key `{key}`: `{v}` is not an integer"))),
        }
    }

    /// Comma-separated lane id list.
    pub fn lane_set(&self, key: &str) -> Result<Option<Vec<u32>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => {
                let mut lanes = Vec::new();
                for part in v.split(',') {
                    lanes.push(part.trim().parse().map_err(|_| {
                        Error::Config(format!("key `{key}`: `{part}` is not a lane id"))
                    })?);
                }
                Ok(Some(lanes))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_comments() {
        let cfg = KvConfig::parse("t_h = 3.0\n# comment\nepochs = 5 # trailing\n").unwrap();
        assert_eq!(cfg.f64("t_h").unwrap(), Some(3.0));
        assert_eq!(cfg.usize("epochs").unwrap(), Some(5));
        assert_eq!(cfg.f64("t_f").unwrap(), None);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(KvConfig::parse("warp_speed = 9\n").is_err());
    }

    #[test]
    fn bad_number_rejected() {
        let cfg = KvConfig::parse("t_h = fast\n").unwrap();
        assert!(cfg.f64("t_h").is_err());
    }

    #[test]
    fn lane_sets() {
        let cfg = KvConfig::parse("onramp_lanes = 7, 8\n").unwrap();
        assert_eq!(cfg.lane_set("onramp_lanes").unwrap(), Some(vec![7, 8]));
    }
}
