//! Line-oriented `key = value` text used by case sidecars, checkpoint headers
//! and index record metadata.

use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse {value:?}")]
    Value { key: String, value: String },
}

/// Ordered key-value document. Keys are unique.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl Display) -> &mut Self {
        debug_assert!(self.get(key).is_none(), "duplicate key {key}");
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_list<V: Display>(&mut self, key: &str, values: &[V]) -> &mut Self {
        let joined = values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        self.push(key, joined)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn parse_value<V: FromStr>(&self, key: &str) -> Result<V, KvError> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| KvError::Value {
            key: key.to_string(),
            value: raw.to_string(),
        })
    }

    pub fn parse_list<V: FromStr>(&self, key: &str) -> Result<Vec<V>, KvError> {
        let raw = self.require(key)?;
        raw.split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| KvError::Value {
                    key: key.to_string(),
                    value: raw.to_string(),
                })
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut doc = Self::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(KvError::Syntax {
                    line: i + 1,
                    text: line.to_string(),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(KvError::Syntax {
                    line: i + 1,
                    text: line.to_string(),
                });
            }
            if doc.get(k).is_some() {
                return Err(KvError::Duplicate(k.to_string()));
            }
            doc.entries.push((k.to_string(), v.to_string()));
        }
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_what_it_writes() {
        let mut doc = KvDoc::new();
        doc.push("case_id", "c00-001").push("prescription", 70.25f64);
        doc.push_list("dims", &[16usize, 16, 8]);
        let back = KvDoc::parse(&doc.to_text()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.parse_list::<usize>("dims").unwrap(), vec![16, 16, 8]);
        assert_eq!(back.parse_value::<f64>("prescription").unwrap(), 70.25);
    }

    #[test]
    fn rejects_malformed_lines_and_duplicates() {
        assert!(matches!(KvDoc::parse("a = 1\nnot a pair\n"), Err(KvError::Syntax { line: 2, .. })));
        assert!(matches!(KvDoc::parse("a = 1\na = 2\n"), Err(KvError::Duplicate(_))));
        assert!(matches!(KvDoc::parse("a = x").unwrap().parse_value::<u32>("a"), Err(KvError::Value { .. })));
    }
}
