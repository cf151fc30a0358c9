//! Parameter resolution: command-line flag, then config file, then default.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::Path;
use std::sync::Mutex;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use cfmw_core::io::{parse_kv, KvMap};

/// Values from an optional `key=value` file. Keys use underscores
/// (`streak_len`) where flags use dashes (`--streak-len`).
#[derive(Debug, Default)]
pub struct Settings {
    file: KvMap,
    used: Mutex<BTreeSet<String>>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file = parse_kv(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(Self { file, used: Mutex::default() })
    }

    #[cfg(test)]
    pub fn from_map(file: KvMap) -> Self {
        Self { file, used: Mutex::default() }
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.lock().unwrap().insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config key {key}={raw:?}: {e}")),
        }
    }

    pub fn optional<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let file = self.file_value(key)?;
        Ok(flag.or(file))
    }

    pub fn value<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.optional(flag, key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        match self.optional(flag, key)? {
            Some(v) => Ok(v),
            None => bail!("missing required parameter --{}", key.replace('_', "-")),
        }
    }

    /// A switch is on when the flag is given or the file sets it true.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        let file: Option<bool> = self.file_value(key)?;
        Ok(flag || file.unwrap_or(false))
    }

    /// Repeated flag values, or a comma-separated file entry.
    pub fn list<T: FromStr>(&self, flag: Vec<T>, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let file: Option<String> = self.file_value(key)?;
        if !flag.is_empty() {
            return Ok(flag);
        }
        file.map(|raw| {
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e| anyhow::anyhow!("config key {key} entry {s:?}: {e}")))
                .collect()
        })
        .unwrap_or_else(|| Ok(Vec::new()))
    }

    /// Rejects file keys that no parameter read.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.lock().unwrap();
        let unknown: Vec<&str> = self.file.keys().filter(|k| !used.contains(*k)).map(String::as_str).collect();
        if !unknown.is_empty() {
            bail!("unknown config key(s): {}", unknown.join(", "));
        }
        Ok(())
    }
}
