//! `key=value` text: one pair per line, `#` starts a comment.
//!
//! Used for config files and for the model description embedded in
//! checkpoint headers. Keys may repeat; order is preserved.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::arg(format!(
                    "line {}: expected key=value, got {line:?}",
                    lineno + 1
                )));
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::arg(format!("line {}: empty key", lineno + 1)));
            }
            entries.push((key.to_string(), v.trim().to_string()));
        }
        Ok(KeyValues { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    /// Replaces every existing value for `key`.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.retain(|(k, _)| k != key);
        self.push(key, value);
    }

    /// Last value wins.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn parse_value<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::arg(format!("invalid value for {key}: {v:?}")))
            })
            .transpose()
    }

    pub fn require<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        self.parse_value(key)?
            .ok_or_else(|| Error::arg(format!("missing key {key}")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Later layers override earlier ones key by key.
    pub fn merged(layers: &[&KeyValues]) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for layer in layers {
            for (k, v) in &layer.entries {
                out.insert(k.clone(), v.clone());
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let kv = KeyValues::parse("# header\n\nepochs = 20 # trailing\nseed=7\n").unwrap();
        assert_eq!(kv.get("epochs"), Some("20"));
        assert_eq!(kv.require::<u64>("seed").unwrap(), 7);
        assert!(kv.get("lr").is_none());
    }

    #[test]
    fn repeated_keys_keep_order_and_last_wins() {
        let kv = KeyValues::parse("block=a\nblock=b\n").unwrap();
        assert_eq!(kv.get_all("block").collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(kv.get("block"), Some("b"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = KeyValues::parse("a=1\noops\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn text_roundtrip() {
        let kv = KeyValues::parse("x=1\ny=a,b\n").unwrap();
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
    }
}
