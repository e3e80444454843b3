use std::path::Path;

use crate::error::{Error, Result};

/// A flat `key=value` settings file.
///
/// Blank lines and lines starting with `#` are ignored; keys and values are
/// trimmed. A key may appear once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    pub entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key=value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::invalid(format!("line {}: empty key", i + 1)));
            }
            if entries.iter().any(|(e, _)| e == k) {
                return Err(Error::invalid(format!("line {}: duplicate key `{k}`", i + 1)));
            }
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(KvFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Feeds every entry to `apply`, which returns `false` for keys it does
    /// not recognise; those are reported together.
    pub fn apply_all(&self, mut apply: impl FnMut(&str, &str) -> Result<bool>) -> Result<()> {
        let mut unknown = Vec::new();
        for (k, v) in &self.entries {
            if !apply(k, v)? {
                unknown.push(k.as_str());
            }
        }
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("unknown key(s): {}", unknown.join(", "))))
        }
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
