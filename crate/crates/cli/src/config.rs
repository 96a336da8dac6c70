use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use log::warn;

use crate::Usage;

/// Keys read by `build`, `transfer` and `eval`. Anything else in a config
/// file is assumed to be a synthetic-world setting.
pub const PIPELINE_KEYS: &[&str] = &[
    "window",
    "boundary",
    "fuel_a",
    "fuel_b",
    "fuel_c",
    "amr",
    "mu1",
    "mu2",
    "k",
    "tolerance",
    "max_iterations",
    "null_threshold",
    "pair_cap",
    "bands",
];

/// `key = value` settings. Blank lines and lines starting with `#` are
/// skipped.
#[derive(Debug, Default, Clone)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Config::parse(&text).map_err(|e| Usage(format!("{}: {e}", path.display())).into())
    }

    pub fn parse(text: &str) -> std::result::Result<Config, String> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Config { entries })
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Usage(format!("config {key}: cannot parse {v:?}")).into()),
        }
    }

    /// The flag if given, else the config value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn warn_unknown(&self) {
        for k in self.entries.keys() {
            if !PIPELINE_KEYS.contains(&k.as_str()) {
                let mut probe = l2r::ingest::SyntheticConfig::default();
                if probe.set(k, &self.entries[k]).is_err() {
                    warn!("ignoring unknown config key {k:?}");
                }
            }
        }
    }
}
