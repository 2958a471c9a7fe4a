//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are the
//! training fields (`phase`, `batch`, `patch`, `epochs`, `lr`, `w_s`, `w_r2`,
//! `w_vgg`, `w_c`, `seed`, `steps_per_epoch`) plus the network keys in
//! [`MODEL_KEYS`].

use std::path::Path;

use crate::error::{Error, Result};

/// Architecture keys accepted alongside the training keys.
pub const MODEL_KEYS: [&str; 6] = ["base_channels", "scales", "residual_blocks", "layer_norm", "guidance", "init_seed"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: Vec<(String, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(format!("line {}: expected key = value, got {line:?}", i + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            let known = lumidec_core::train::TrainConfig::KEYS.contains(&k) || MODEL_KEYS.contains(&k);
            if !known {
                return Err(Error::config(format!("line {}: unknown key {k:?}", i + 1)));
            }
            if entries.iter().any(|(e, _)| e == k) {
                return Err(Error::config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(ConfigFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Core(lumidec_core::Error::Config(m)) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn parse_value<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::config(format!("{key}: cannot parse {v:?}"))),
        }
    }
}

/// Renders `key = value` lines.
pub fn render(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
