//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment. A line `include = other.conf`
//! splices another file in place, resolved relative to the including file.
//! Later keys override earlier ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::new();
        cfg.merge_file(path.as_ref(), 0)?;
        Ok(cfg)
    }

    /// Parses text that may not contain `include` lines.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        cfg.merge_text(text, None, 0)?;
        Ok(cfg)
    }

    fn merge_file(&mut self, path: &Path, depth: usize) -> Result<()> {
        if depth > MAX_INCLUDE_DEPTH {
            return Err(Error::Config(format!(
                "include depth exceeded at {}",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_text(&text, path.parent(), depth)
    }

    fn merge_text(&mut self, text: &str, base: Option<&Path>, depth: usize) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if key == "include" {
                let base = base
                    .ok_or_else(|| Error::Config("include is only allowed in files".to_string()))?;
                let target: PathBuf = base.join(value);
                self.merge_file(&target, depth + 1)?;
            } else {
                self.entries.insert(key.to_string(), value.to_string());
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => parse_list(v)
                .map(Some)
                .map_err(|bad| Error::Config(format!("key `{key}`: cannot parse `{bad}`"))),
        }
    }

    /// Renders the resolved configuration, one sorted key per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

pub fn parse_list<T: FromStr>(text: &str) -> std::result::Result<Vec<T>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| s.to_string()))
        .collect()
}

/// Parses `index:value` pairs such as `50:3.0, 80:0.5`.
pub fn parse_pairs(text: &str) -> std::result::Result<Vec<(usize, f64)>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (i, v) = item.split_once(':').ok_or_else(|| item.to_string())?;
            let i = i.trim().parse().map_err(|_| item.to_string())?;
            let v = v.trim().parse().map_err(|_| item.to_string())?;
            Ok((i, v))
        })
        .collect()
}
