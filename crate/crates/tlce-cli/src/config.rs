//! Plain-text `key = value` config files with `[section]` headers.
//!
//! Values resolve with uniform precedence: command-line flag, then config
//! file, then built-in default.

use std::path::{Path, PathBuf};
use tlce::{Error, Result};

pub struct FileConfig {
    table: toml::Table,
    source: Option<PathBuf>,
}

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig {
            table: toml::Table::new(),
            source: None,
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::empty());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let table: toml::Table = text.parse().map_err(|e| {
            Error::Config(format!("cannot parse config {}: {e}", path.display()))
        })?;
        Ok(FileConfig {
            table,
            source: Some(path.to_path_buf()),
        })
    }

    fn value(&self, section: Option<&str>, key: &str) -> Option<&toml::Value> {
        match section {
            None => self.table.get(key),
            Some(s) => self.table.get(s)?.as_table()?.get(key),
        }
    }

    fn where_is(&self, section: Option<&str>, key: &str) -> String {
        let file = self
            .source
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "config".into());
        match section {
            None => format!("{file}: {key}"),
            Some(s) => format!("{file}: [{s}] {key}"),
        }
    }

    pub fn f64(&self, section: Option<&str>, key: &str) -> Result<Option<f64>> {
        match self.value(section, key) {
            None => Ok(None),
            Some(v) => v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .map(Some)
                .ok_or_else(|| {
                    Error::Config(format!("{} must be a number", self.where_is(section, key)))
                }),
        }
    }

    pub fn usize(&self, section: Option<&str>, key: &str) -> Result<Option<usize>> {
        match self.value(section, key) {
            None => Ok(None),
            Some(v) => v
                .as_integer()
                .and_then(|i| usize::try_from(i).ok())
                .map(Some)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "{} must be a non-negative integer",
                        self.where_is(section, key)
                    ))
                }),
        }
    }

    pub fn u64(&self, section: Option<&str>, key: &str) -> Result<Option<u64>> {
        match self.value(section, key) {
            None => Ok(None),
            Some(v) => v
                .as_integer()
                .and_then(|i| u64::try_from(i).ok())
                .map(Some)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "{} must be a non-negative integer",
                        self.where_is(section, key)
                    ))
                }),
        }
    }

    pub fn string(&self, section: Option<&str>, key: &str) -> Result<Option<String>> {
        match self.value(section, key) {
            None => Ok(None),
            Some(v) => v.as_str().map(|s| Some(s.to_string())).ok_or_else(|| {
                Error::Config(format!("{} must be a string", self.where_is(section, key)))
            }),
        }
    }

    pub fn path(&self, section: Option<&str>, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.string(section, key)?.map(PathBuf::from))
    }
}

/// flag > config file > default.
pub fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// flag > config file, no default: the caller must have one.
pub fn resolve_required<T>(flag: Option<T>, file: Option<T>, what: &str) -> Result<T> {
    flag.or(file)
        .ok_or_else(|| Error::Config(format!("{what} missing: pass the flag or set it in the config file")))
}

/// Parses comma-separated layer widths; empty means no hidden layers.
pub fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    let trimmed = s.trim();
    if trimmed.is_empty() {
        return Ok(vec![]);
    }
    trimmed
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad hidden layer width {part:?}")))
        })
        .collect()
}

/// Parses comma-separated λ values.
pub fn parse_lambdas(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad lambda value {part:?}")))
        })
        .collect()
}
