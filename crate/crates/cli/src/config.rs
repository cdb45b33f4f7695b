//! `key = value` config files merged under command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};

/// Marks an error as a usage problem (exit code 1) rather than a data one.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Every key a config file may set, spelled like the long flag.
pub const KNOWN_KEYS: &[&str] = &[
    "input",
    "output",
    "graph",
    "log",
    "eval-input",
    "window",
    "jaccard",
    "session-gap-secs",
    "max-age-days",
    "depth",
    "neighbors",
    "dim",
    "clicks",
    "lr",
    "epochs",
    "batch",
    "seed",
    "aggregator",
    "threads",
    "num-items",
    "num-clusters",
    "num-users",
    "sessions-per-user",
    "bridge-prob",
    "sparsity-mix",
    "ctr-signal",
    "holdout-frac",
    "samples-per-user",
    "test-samples-per-user",
];

#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    /// Blank lines and `#` comments are skipped; underscores in keys read as
    /// dashes.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            let key = key.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(format!("line {}: unknown key {key:?}", i + 1));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(format!("line {}: duplicate key {key:?}", i + 1));
            }
        }
        Ok(FileConfig { values })
    }

    /// The flag if given, else the file's value for `key`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("config key {key}: {e}"))),
        }
    }

    pub fn or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    pub fn required<T>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| usage(format!("missing required --{key}")))
    }

    /// Flag, then file, then `GIN_SEED`, then zero.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = self.pick(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var("GIN_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| usage(format!("GIN_SEED={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }
}
