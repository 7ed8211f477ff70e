//! Whitespace-separated word-vector text files (`token v1 … vD` per line).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    /// Inserts unless the token is already present (first occurrence wins).
    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::dim(format!(
                "vector of length {} in a {}-dim table",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("word vector for `{token}`")));
        }
        if self.vectors.contains_key(token) {
            return Ok(false);
        }
        self.vectors.insert(token.to_string(), vector);
        Ok(true)
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Unknown tokens map to the zero vector.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        self.get(token)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.dim])
    }

    pub fn sorted_tokens(&self) -> Vec<&str> {
        let mut keys: Vec<&str> = self.vectors.keys().map(String::as_str).collect();
        keys.sort_unstable();
        keys
    }

    /// Text serialization, tokens sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in self.sorted_tokens() {
            out.push_str(k);
            for v in &self.vectors[k] {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn parse_word_vectors(text: &str) -> Result<WordVectorTable> {
    let mut table: Option<WordVectorTable> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else {
            continue;
        };
        let values = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Format {
                    line: line_no,
                    msg: format!("cannot parse `{p}` as a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::Format {
                line: line_no,
                msg: format!("token `{token}` has no vector"),
            });
        }
        let t = table.get_or_insert_with(|| WordVectorTable::new(values.len()));
        if values.len() != t.dim {
            return Err(Error::Format {
                line: line_no,
                msg: format!("expected {} values, found {}", t.dim, values.len()),
            });
        }
        t.insert(token, values).map_err(|e| Error::Format {
            line: line_no,
            msg: e.to_string(),
        })?;
    }
    table.ok_or_else(|| Error::EmptyInput("word-vector file has no entries".into()))
}

pub fn load_word_vectors(path: impl AsRef<Path>) -> Result<WordVectorTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(&text)
}
