//! Plain `key = value` configuration files shared by every service.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

/// A parse failure with its line number.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("missing required key {0:?}")]
    Missing(&'static str),
    #[error("key {key:?}: {reason}")]
    BadValue { key: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parsed configuration: string values by key.
#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    /// Parses `key = value` lines. Blank lines and lines starting with
    /// `#` are ignored; whitespace around keys and values is trimmed.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line,
                    text: trimmed.to_string(),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Malformed {
                    line,
                    text: trimmed.to_string(),
                });
            }
            if values.contains_key(&key) {
                return Err(ConfigError::Duplicate { line, key });
            }
            values.insert(key, value);
        }
        Ok(Config { values })
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &'static str) -> Result<&str, ConfigError> {
        self.get(key).ok_or(ConfigError::Missing(key))
    }

    /// Parses the value under `key` if present, else `default`.
    pub fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(text) => text.parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                reason: e.to_string(),
            }),
        }
    }

    /// The value under `key` as a path, relative paths resolved against
    /// `base` (typically the config file's directory).
    pub fn require_path(&self, key: &'static str, base: &Path) -> Result<PathBuf, ConfigError> {
        Ok(resolve_path(base, self.require(key)?))
    }
}

/// Resolves a possibly-relative path against `base`.
pub fn resolve_path(base: &Path, value: &str) -> PathBuf {
    let path = PathBuf::from(value);
    if path.is_absolute() {
        path
    } else {
        base.join(path)
    }
}
