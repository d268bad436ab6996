//! The line-oriented `key=value` format used by profiles, configs,
//! populations and metric reports.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique
//! within a document.

use std::collections::HashMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String, u64)>,
    index: HashMap<String, usize>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i as u64 + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse { line: line_no, message: format!("expected key=value, got {line:?}") });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse { line: line_no, message: "empty key".into() });
            }
            if doc.index.contains_key(key) {
                return Err(Error::Parse { line: line_no, message: format!("duplicate key {key:?}") });
            }
            doc.index.insert(key.to_string(), doc.entries.len());
            doc.entries.push((key.to_string(), v.trim().to_string(), line_no));
        }
        Ok(doc)
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        let key = key.into();
        let value = value.to_string();
        match self.index.get(&key) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(key.clone(), self.entries.len());
                self.entries.push((key, value, 0));
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|&i| self.entries[i].1.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _, _)| k.as_str())
    }

    fn line_of(&self, key: &str) -> u64 {
        self.index.get(key).map_or(0, |&i| self.entries[i].2)
    }

    fn bad(&self, key: &str, message: String) -> Error {
        Error::Parse { line: self.line_of(key), message: format!("{key}: {message}") }
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| self.bad(key, format!("{e} ({v:?})"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.parse_value(key)?.ok_or_else(|| Error::Parse { line: 0, message: format!("missing key {key:?}") })
    }

    /// Comma-separated list value.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(v) = self.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|item| item.trim().parse().map_err(|e| self.bad(key, format!("{e} ({item:?})"))))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Fails on the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.iter().find(|(k, _, _)| !allowed.contains(&k.as_str())) {
            Some((k, _, line)) => Err(Error::Parse { line: *line, message: format!("unknown key {k:?}") }),
            None => Ok(()),
        }
    }
}

impl std::fmt::Display for KvDoc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v, _) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Joins values with commas, the list form read by [`KvDoc::parse_list`].
pub fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
