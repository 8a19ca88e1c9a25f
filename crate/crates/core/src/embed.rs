//! Word vectors, sentence vectors, cosine similarity and exact nearest
//! neighbours.
//!
//! Two file formats are read:
//!
//! * word2vec text: an optional `count dim` header line, then
//!   `word v1 v2 ... vdim` per line, space separated;
//! * sentence-vector JSONL: `{"id": ..., "vector": [...]}` per line.
//!
//! The dimension is fixed by the first vector row. Zero vectors are rejected
//! at load time since cosine is undefined for them.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::EmbedError;
use crate::text::{split_affixes, tokenize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VectorFormat {
    Word2vecText,
    JsonlIdVector,
}

impl FromStr for VectorFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word2vec-text" | "word2vec" => Ok(VectorFormat::Word2vecText),
            "jsonl-id-vector" | "jsonl" => Ok(VectorFormat::JsonlIdVector),
            other => Err(format!("unknown vector format `{other}`")),
        }
    }
}

/// What happened while reading a vector file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub rows: usize,
    pub header: bool,
    /// Rows whose key had already been seen; the later row wins.
    pub duplicates: usize,
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Immutable store of word vectors plus optional precomputed sentence
/// vectors keyed by sample id.
#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    dim: usize,
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
    norms: Vec<f64>,
    exact: HashMap<String, usize>,
    folded: HashMap<String, usize>,
    sentences: HashMap<String, Vec<f64>>,
    source_tag: String,
}

impl EmbeddingStore {
    /// Builds a store from `(word, vector)` pairs. Repeated words overwrite
    /// earlier ones; the count of such repeats is returned alongside.
    pub fn from_words<I>(pairs: I, source_tag: &str) -> Result<(Self, usize), EmbedError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut store = EmbeddingStore::empty(0, source_tag);
        let mut duplicates = 0;
        for (word, v) in pairs {
            if store.dim == 0 {
                store.dim = v.len();
            }
            if v.len() != store.dim {
                return Err(EmbedError::DimMismatch(store.dim, v.len()));
            }
            if norm(&v) == 0.0 {
                return Err(EmbedError::ZeroVector);
            }
            if store.insert_word(word, v) {
                duplicates += 1;
            }
        }
        Ok((store, duplicates))
    }

    fn empty(dim: usize, source_tag: &str) -> Self {
        EmbeddingStore {
            dim,
            words: Vec::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
            exact: HashMap::new(),
            folded: HashMap::new(),
            sentences: HashMap::new(),
            source_tag: source_tag.to_string(),
        }
    }

    /// Returns true when the word replaced an existing entry.
    fn insert_word(&mut self, word: String, v: Vec<f64>) -> bool {
        let n = norm(&v);
        if let Some(&i) = self.exact.get(&word) {
            self.vectors[i] = v;
            self.norms[i] = n;
            return true;
        }
        let i = self.words.len();
        self.folded.entry(word.to_lowercase()).or_insert(i);
        self.exact.insert(word.clone(), i);
        self.words.push(word);
        self.vectors.push(v);
        self.norms.push(n);
        false
    }

    /// Attaches precomputed sentence vectors; they take precedence over
    /// pooling in [`sentence_embed`](Self::sentence_embed).
    pub fn with_sentence_vectors(
        mut self,
        vectors: HashMap<String, Vec<f64>>,
    ) -> Result<Self, EmbedError> {
        for v in vectors.values() {
            if self.dim == 0 {
                self.dim = v.len();
            }
            if v.len() != self.dim {
                return Err(EmbedError::DimMismatch(self.dim, v.len()));
            }
            if norm(v) == 0.0 {
                return Err(EmbedError::ZeroVector);
            }
        }
        self.sentences.extend(vectors);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    /// Words in load order (first occurrence).
    pub fn vocabulary(&self) -> &[String] {
        &self.words
    }

    pub fn sentence_vector(&self, id: &str) -> Option<&[f64]> {
        self.sentences.get(id).map(Vec::as_slice)
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    /// Case-folded lookup preferring an exact-case match.
    pub fn resolve(&self, word: &str) -> Option<usize> {
        self.exact
            .get(word)
            .or_else(|| self.folded.get(&word.to_lowercase()))
            .copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.resolve(word).is_some()
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.resolve(word).map(|i| self.vectors[i].as_slice())
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    /// Resolves a raw token, trying the token itself and then its
    /// punctuation-stripped core.
    pub fn resolve_token(&self, token: &str) -> Option<usize> {
        self.resolve(token).or_else(|| {
            let (_, core, _) = split_affixes(token);
            if core.is_empty() || core == token {
                None
            } else {
                self.resolve(core)
            }
        })
    }

    /// The `n` nearest words to `word` by cosine, excluding the word itself,
    /// in descending similarity with ties broken by lexicographic word order.
    /// Exact full scan.
    pub fn top_n_neighbors(&self, word: &str, n: usize) -> Result<Vec<(String, f64)>, EmbedError> {
        let q = self
            .resolve(word)
            .ok_or_else(|| EmbedError::NotFound(word.to_string()))?;
        let qv = &self.vectors[q];
        let qn = self.norms[q];
        let mut scored: Vec<(usize, f64)> = (0..self.words.len())
            .filter(|&i| i != q)
            .map(|i| {
                let c = (dot(qv, &self.vectors[i]) / (qn * self.norms[i])).clamp(-1.0, 1.0);
                (i, c)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.words[a.0].cmp(&self.words[b.0]))
        });
        scored.truncate(n);
        Ok(scored
            .into_iter()
            .map(|(i, c)| (self.words[i].clone(), c))
            .collect())
    }

    /// Sentence embedding: the precomputed vector for `id` when present,
    /// otherwise the mean of the in-vocabulary token vectors of `text`.
    pub fn sentence_embed(&self, id: Option<&str>, text: &str) -> Result<Vec<f64>, EmbedError> {
        if let Some(v) = id.and_then(|id| self.sentences.get(id)) {
            return Ok(v.clone());
        }
        let mut sum = vec![0.0; self.dim];
        let mut count = 0usize;
        for tok in tokenize(text) {
            if let Some(i) = self.resolve_token(tok) {
                for (s, x) in sum.iter_mut().zip(&self.vectors[i]) {
                    *s += x;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(EmbedError::NoEmbedding(text.to_string()));
        }
        let inv = 1.0 / count as f64;
        sum.iter_mut().for_each(|s| *s *= inv);
        Ok(sum)
    }
}

/// Loads a vector file.
///
/// `Word2vecText` fills the word table; `JsonlIdVector` fills the
/// sentence-vector table of an otherwise empty store.
pub fn load_vectors(
    path: &Path,
    format: VectorFormat,
) -> Result<(EmbeddingStore, LoadReport), EmbedError> {
    let tag = path.display().to_string();
    match format {
        VectorFormat::Word2vecText => load_word2vec(path, &tag),
        VectorFormat::JsonlIdVector => {
            let (map, report) = load_sentence_vectors(path)?;
            let store = EmbeddingStore::empty(0, &tag).with_sentence_vectors(map)?;
            Ok((store, report))
        }
    }
}

fn parse_floats(path: &Path, line: usize, parts: &[&str]) -> Result<Vec<f64>, EmbedError> {
    parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| EmbedError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("bad number `{p}`"),
                })
        })
        .collect()
}

fn load_word2vec(path: &Path, tag: &str) -> Result<(EmbeddingStore, LoadReport), EmbedError> {
    let reader = BufReader::new(File::open(path)?);
    let mut store = EmbeddingStore::empty(0, tag);
    let mut report = LoadReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        if report.rows == 0
            && !report.header
            && parts.len() == 2
            && parts.iter().all(|p| p.parse::<usize>().is_ok())
        {
            report.header = true;
            continue;
        }
        let values = parse_floats(path, lineno, &parts[1..])?;
        if store.dim == 0 {
            if values.is_empty() {
                return Err(EmbedError::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: "row has no values".into(),
                });
            }
            store.dim = values.len();
        }
        if values.len() != store.dim {
            return Err(EmbedError::Ragged {
                path: path.to_path_buf(),
                line: lineno,
                expected: store.dim,
                found: values.len(),
            });
        }
        if norm(&values) == 0.0 {
            return Err(EmbedError::ZeroVectorAt {
                path: path.to_path_buf(),
                line: lineno,
            });
        }
        report.rows += 1;
        if store.insert_word(parts[0].to_string(), values) {
            report.duplicates += 1;
            log::warn!(
                "{}: line {lineno}: duplicate word `{}` overrides earlier row",
                path.display(),
                parts[0]
            );
        }
    }
    if report.rows == 0 {
        return Err(EmbedError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok((store, report))
}

#[derive(Deserialize)]
struct IdVector {
    id: serde_json::Value,
    vector: Vec<f64>,
}

/// Reads a sentence-vector JSONL file into an id → vector map.
pub fn load_sentence_vectors(
    path: &Path,
) -> Result<(HashMap<String, Vec<f64>>, LoadReport), EmbedError> {
    let reader = BufReader::new(File::open(path)?);
    let mut map = HashMap::new();
    let mut report = LoadReport::default();
    let mut dim = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: IdVector = serde_json::from_str(&line).map_err(|e| EmbedError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        let id = match row.id {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        if dim == 0 {
            dim = row.vector.len();
        }
        if row.vector.len() != dim || dim == 0 {
            return Err(EmbedError::Ragged {
                path: path.to_path_buf(),
                line: lineno,
                expected: dim,
                found: row.vector.len(),
            });
        }
        if norm(&row.vector) == 0.0 || row.vector.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::ZeroVectorAt {
                path: path.to_path_buf(),
                line: lineno,
            });
        }
        report.rows += 1;
        if map.insert(id, row.vector).is_some() {
            report.duplicates += 1;
        }
    }
    if report.rows == 0 {
        return Err(EmbedError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok((map, report))
}
