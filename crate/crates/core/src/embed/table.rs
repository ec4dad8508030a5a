use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-node real vectors sharing one dimension. Insertion order is kept so
/// that serialized tables are reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    keys: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable { dim, keys: Vec::new(), vectors: Vec::new(), index: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Inserts or replaces a vector.
    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let key = key.into();
        if vector.len() != self.dim {
            return Err(Error::Embedding(format!(
                "vector for `{key}` has dimension {}, table has {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Embedding(format!("non-finite vector for `{key}`")));
        }
        match self.index.get(&key) {
            Some(&i) => self.vectors[i] = vector,
            None => {
                self.index.insert(key.clone(), self.keys.len());
                self.keys.push(key);
                self.vectors.push(vector);
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.index.get(key).map(|&i| self.vectors[i].as_slice())
    }

    pub fn require(&self, key: &str) -> Result<&[f64]> {
        self.get(key).ok_or_else(|| Error::MissingEmbedding(key.to_string()))
    }

    /// Looks up every key, substituting the zero vector for absent ones.
    /// Returns the vectors and the number of misses.
    pub fn lookup_or_zero<'a>(&self, keys: impl IntoIterator<Item = &'a str>) -> (Vec<Vec<f64>>, usize) {
        let mut missing = 0;
        let out = keys
            .into_iter()
            .map(|k| match self.get(k) {
                Some(v) => v.to_vec(),
                None => {
                    missing += 1;
                    vec![0.0; self.dim]
                }
            })
            .collect();
        (out, missing)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.keys.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// Text form: a `dim=<d>` header, then `<key> v1 ... vd` per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("dim={}\n", self.dim);
        for (k, v) in self.iter() {
            s.push_str(k);
            for x in v {
                let _ = write!(s, " {x}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse { path: source_name.to_string(), line, msg };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing `dim=` header".into()))?;
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| err(1, format!("bad header `{header}`")))?;
        let mut table = EmbeddingTable::new(dim);
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let key = parts.next().expect("non-empty line");
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>().map_err(|_| err(i + 1, format!("bad number `{p}`"))))
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::Embedding(format!(
                    "{source_name}:{}: row `{key}` has {} values, header declares {dim}",
                    i + 1,
                    values.len()
                )));
            }
            table.insert(key, values)?;
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Loads a precomputed embedding file.
pub fn global_embed_load(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::from_text(&text, &path.display().to_string())
}
