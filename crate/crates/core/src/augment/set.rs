use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Method;
use crate::error::AugmentError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Insert,
    Substitute,
    Swap,
    Delete,
}

/// One unit-level change. `position` indexes characters for character
/// methods and whitespace tokens for word methods, measured on the text the
/// edit was applied to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub op: EditOp,
    pub position: usize,
    pub before: String,
    pub after: String,
}

/// Provenance of a generated variant.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    /// True when the output equals the source because no edit could be made.
    #[serde(default)]
    pub identity: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edits: Vec<Edit>,
    /// Intermediate strings (the pivot-language text for back-translation).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intermediates: Vec<String>,
    /// Requests issued to produce this variant, retries included.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cached: Option<bool>,
}

impl Trace {
    pub fn identity(reason: impl Into<String>) -> Self {
        Trace {
            identity: true,
            reason: Some(reason.into()),
            ..Trace::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub text: String,
    pub method: Method,
    pub seed: u64,
    pub trace: Trace,
}

/// Dataset id of the `i`-th variant of a source sample.
pub fn variant_id(source_id: &str, i: usize) -> String {
    format!("{source_id}#aug{i}")
}

/// A source sample with its generated variants. `failure` records why a
/// sample got fewer variants than requested (service errors, for example).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedEntry {
    pub source_id: String,
    pub source_text: String,
    pub label: String,
    pub variants: Vec<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Generated variants for a set of samples, ordered by source id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedSet {
    entries: Vec<AugmentedEntry>,
}

impl AugmentedSet {
    pub fn new(mut entries: Vec<AugmentedEntry>) -> Self {
        entries.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        AugmentedSet { entries }
    }

    pub fn entries(&self) -> &[AugmentedEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn variant_count(&self) -> usize {
        self.entries.iter().map(|e| e.variants.len()).sum()
    }

    pub fn failures(&self) -> impl Iterator<Item = &AugmentedEntry> {
        self.entries.iter().filter(|e| e.failure.is_some())
    }

    /// `(entry, variant)` pairs in entry order.
    pub fn variants(&self) -> impl Iterator<Item = (&AugmentedEntry, &Variant)> {
        self.entries
            .iter()
            .flat_map(|e| e.variants.iter().map(move |v| (e, v)))
    }

    /// Distinct methods used by the variants, sorted by name.
    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.variants().map(|(_, v)| v.method).collect();
        m.sort_by_key(|m| m.name());
        m.dedup();
        m
    }

    /// Keeps only variants of one method (entries are kept even if emptied).
    pub fn filter_method(&self, method: Method) -> AugmentedSet {
        AugmentedSet {
            entries: self
                .entries
                .iter()
                .map(|e| AugmentedEntry {
                    variants: e
                        .variants
                        .iter()
                        .filter(|v| v.method == method)
                        .cloned()
                        .collect(),
                    ..e.clone()
                })
                .collect(),
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), AugmentError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_jsonl_to<W: Write>(&self, mut w: W) -> Result<(), AugmentError> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, AugmentError> {
        let mut entries = Vec::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                entries.push(serde_json::from_str(&line)?);
            }
        }
        Ok(AugmentedSet::new(entries))
    }
}
