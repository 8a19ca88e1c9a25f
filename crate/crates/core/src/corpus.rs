//! Labeled datasets: loading, validation, k-shot draws and the merge that
//! produces the augmented few-shot training set.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::AugmentedSet;
use crate::error::CorpusError;
use crate::rng::{sample_sorted, KeyedRng};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub text: String,
    pub label: String,
}

impl LabeledSample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        LabeledSample {
            id: id.into(),
            text: text.into(),
            label: label.into(),
        }
    }
}

/// Where a dataset sits in the few-shot schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Base,
    Novel,
    AugmentedNovel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Jsonl,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(format!(
                "unknown dataset format `{other}` (expected jsonl or csv)"
            )),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Jsonl => "jsonl",
            Format::Csv => "csv",
        })
    }
}

/// Column / key names used when reading a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fields {
    pub text: String,
    pub label: String,
    /// Optional explicit id column. Rows without it get their 0-based row index.
    pub id: String,
}

impl Default for Fields {
    fn default() -> Self {
        Fields {
            text: "text".into(),
            label: "label".into(),
            id: "id".into(),
        }
    }
}

impl Fields {
    pub fn new(text: &str, label: &str) -> Self {
        Fields {
            text: text.into(),
            label: label.into(),
            ..Fields::default()
        }
    }
}

/// An immutable, validated collection of labeled samples.
///
/// `label_space` keeps first-appearance order so class indices are stable
/// across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    label_space: Vec<String>,
    role: Role,
}

impl Dataset {
    /// Builds a dataset whose label space is the distinct labels in order of
    /// first appearance.
    pub fn new(samples: Vec<LabeledSample>, role: Role) -> Result<Self, CorpusError> {
        let mut label_space = Vec::new();
        let mut seen = HashSet::new();
        for s in &samples {
            if seen.insert(s.label.as_str()) {
                label_space.push(s.label.clone());
            }
        }
        Self::with_label_space(samples, label_space, role)
    }

    /// Builds a dataset over an explicit label space, which may contain
    /// classes with no samples.
    pub fn with_label_space(
        samples: Vec<LabeledSample>,
        label_space: Vec<String>,
        role: Role,
    ) -> Result<Self, CorpusError> {
        let labels: HashSet<&str> = label_space.iter().map(String::as_str).collect();
        let mut ids = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.text.trim().is_empty() {
                return Err(CorpusError::EmptySampleText { id: s.id.clone() });
            }
            if !ids.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
            if !labels.contains(s.label.as_str()) {
                return Err(CorpusError::UnknownLabel {
                    id: s.id.clone(),
                    label: s.label.clone(),
                });
            }
        }
        Ok(Dataset {
            samples,
            label_space,
            role,
        })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn label_space(&self) -> &[String] {
        &self.label_space
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.label_space.iter().position(|l| l == label)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledSample> {
        self.samples.iter()
    }

    /// Samples of one class, in dataset order.
    pub fn class_samples<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a LabeledSample> {
        self.samples.iter().filter(move |s| s.label == label)
    }

    pub fn ensure_trainable(&self) -> Result<(), CorpusError> {
        if self.label_space.len() < 2 {
            return Err(CorpusError::TooFewClasses(self.label_space.len()));
        }
        Ok(())
    }

    /// Base and novel label spaces must not share a class.
    pub fn ensure_disjoint(&self, other: &Dataset) -> Result<(), CorpusError> {
        let mine: HashSet<&str> = self.label_space.iter().map(String::as_str).collect();
        match other.label_space.iter().find(|l| mine.contains(l.as_str())) {
            Some(l) => Err(CorpusError::OverlappingLabels(l.clone())),
            None => Ok(()),
        }
    }

    /// A sub-dataset with the given ids, in dataset order, sharing this
    /// dataset's label space.
    pub fn subset(&self, ids: &HashSet<&str>, role: Role) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| ids.contains(s.id.as_str()))
                .cloned()
                .collect(),
            label_space: self.label_space.clone(),
            role,
        }
    }

    /// Writes `{"id", "text", "label"}` lines.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut w = BufWriter::new(File::create(path)?);
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes a CSV with header `id,text,label`.
    pub fn write_csv(&self, path: &Path) -> Result<(), CorpusError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "text", "label"])?;
        for s in &self.samples {
            w.write_record([&s.id, &s.text, &s.label])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, path: &Path, format: Format) -> Result<(), CorpusError> {
        match format {
            Format::Jsonl => self.write_jsonl(path),
            Format::Csv => self.write_csv(path),
        }
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a LabeledSample;
    type IntoIter = std::slice::Iter<'a, LabeledSample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

fn scalar_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

struct RawRow {
    row: usize,
    id: Option<String>,
    text: String,
    label: String,
}

fn finish(path: &Path, rows: Vec<RawRow>) -> Result<Dataset, CorpusError> {
    if rows.is_empty() {
        return Err(CorpusError::NoRecords {
            path: path.to_path_buf(),
        });
    }
    let mut samples = Vec::with_capacity(rows.len());
    let mut explicit = HashSet::new();
    for (idx, r) in rows.into_iter().enumerate() {
        if r.text.trim().is_empty() {
            return Err(CorpusError::EmptyText {
                path: path.to_path_buf(),
                row: r.row,
            });
        }
        let id = match r.id {
            Some(id) => {
                if !explicit.insert(id.clone()) {
                    return Err(CorpusError::DuplicateId(id));
                }
                id
            }
            None => idx.to_string(),
        };
        samples.push(LabeledSample {
            id,
            text: r.text,
            label: r.label,
        });
    }
    Dataset::new(samples, Role::Novel)
}

/// Loads a JSONL or CSV dataset. Rows are numbered from 1 in error messages
/// (for CSV, row 1 is the first record after the header). The returned
/// dataset has role [`Role::Novel`]; use [`Dataset::with_role`] to change it.
pub fn load_dataset(path: &Path, format: Format, fields: &Fields) -> Result<Dataset, CorpusError> {
    let rows = match format {
        Format::Jsonl => read_jsonl_rows(path, fields)?,
        Format::Csv => read_csv_rows(path, fields)?,
    };
    finish(path, rows)
}

fn read_jsonl_rows(path: &Path, fields: &Fields) -> Result<Vec<RawRow>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| CorpusError::Malformed {
            path: path.to_path_buf(),
            row,
            message: "expected a JSON object".into(),
        })?;
        let get = |field: &str| -> Result<String, CorpusError> {
            obj.get(field)
                .and_then(scalar_to_string)
                .ok_or_else(|| CorpusError::MissingField {
                    path: path.to_path_buf(),
                    row,
                    field: field.to_string(),
                })
        };
        rows.push(RawRow {
            row,
            text: get(&fields.text)?,
            label: get(&fields.label)?,
            id: obj.get(&fields.id).and_then(scalar_to_string),
        });
    }
    Ok(rows)
}

fn read_csv_rows(path: &Path, fields: &Fields) -> Result<Vec<RawRow>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (text_col, label_col, id_col) = (col(&fields.text), col(&fields.label), col(&fields.id));
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let get = |c: Option<usize>, field: &str| -> Result<String, CorpusError> {
            c.and_then(|c| record.get(c))
                .map(str::to_string)
                .ok_or_else(|| CorpusError::MissingField {
                    path: path.to_path_buf(),
                    row,
                    field: field.to_string(),
                })
        };
        rows.push(RawRow {
            row,
            text: get(text_col, &fields.text)?,
            label: get(label_col, &fields.label)?,
            id: id_col
                .and_then(|c| record.get(c))
                .filter(|s| !s.is_empty())
                .map(str::to_string),
        });
    }
    Ok(rows)
}

/// The result of a k-shot draw: `k` sample ids per class, in label-space order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KShotDraw {
    pub k: usize,
    pub seed: u64,
    pub selected: Vec<(String, Vec<String>)>,
}

impl KShotDraw {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.selected
            .iter()
            .flat_map(|(_, ids)| ids.iter().map(String::as_str))
    }

    pub fn len(&self) -> usize {
        self.selected.iter().map(|(_, ids)| ids.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Splits `d` into the drawn few-shot set and the held-out remainder.
    pub fn split(&self, d: &Dataset) -> (Dataset, Dataset) {
        let chosen: HashSet<&str> = self.ids().collect();
        let rest: HashSet<&str> = d
            .iter()
            .map(|s| s.id.as_str())
            .filter(|id| !chosen.contains(id))
            .collect();
        (d.subset(&chosen, Role::Novel), d.subset(&rest, Role::Novel))
    }
}

/// Draws `k` samples per class uniformly without replacement.
///
/// Each class gets its own [`KeyedRng`] stream keyed by `(seed,
/// "corpus/k_shot", label)`, drawing over the class's ids in lexicographic
/// order, so the draw depends only on the dataset's content.
pub fn k_shot_sample(d: &Dataset, k: usize, seed: u64) -> Result<KShotDraw, CorpusError> {
    if k == 0 {
        return Err(CorpusError::ZeroShots);
    }
    let mut selected = Vec::with_capacity(d.label_space().len());
    for label in d.label_space() {
        let mut ids: Vec<&str> = d.class_samples(label).map(|s| s.id.as_str()).collect();
        if ids.len() < k {
            return Err(CorpusError::NotEnoughSamples {
                class: label.clone(),
                available: ids.len(),
                k,
            });
        }
        ids.sort_unstable();
        let mut rng = KeyedRng::new(seed, "corpus/k_shot", label);
        let picks = sample_sorted(&mut rng, ids.len(), k);
        selected.push((
            label.clone(),
            picks.into_iter().map(|i| ids[i].to_string()).collect(),
        ));
    }
    Ok(KShotDraw { k, seed, selected })
}

/// Combines few-shot originals with their generated variants into the
/// augmented-novel training set. Variant ids are `{source_id}#aug{i}`.
pub fn merge_augmented(
    novel_fewshot: &Dataset,
    variants: &AugmentedSet,
) -> Result<Dataset, CorpusError> {
    let by_id: HashMap<&str, &LabeledSample> =
        novel_fewshot.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut samples = novel_fewshot.samples().to_vec();
    for entry in variants.entries() {
        let source = by_id
            .get(entry.source_id.as_str())
            .ok_or_else(|| CorpusError::UnknownSource(entry.source_id.clone()))?;
        if source.label != entry.label {
            return Err(CorpusError::LabelMismatch {
                id: entry.source_id.clone(),
                expected: source.label.clone(),
                found: entry.label.clone(),
            });
        }
        for (i, v) in entry.variants.iter().enumerate() {
            samples.push(LabeledSample {
                id: crate::augment::variant_id(&entry.source_id, i),
                text: v.text.clone(),
                label: entry.label.clone(),
            });
        }
    }
    Dataset::with_label_space(
        samples,
        novel_fewshot.label_space().to_vec(),
        Role::AugmentedNovel,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{AugmentedEntry, Method, Trace, Variant};
    use std::io::Write;

    fn write(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn toy() -> Dataset {
        let samples = (0..9)
            .map(|i| {
                LabeledSample::new(format!("s{i}"), format!("text {i}"), ["a", "b", "c"][i % 3])
            })
            .collect();
        Dataset::new(samples, Role::Novel).unwrap()
    }

    #[test]
    fn label_space_first_appearance() {
        let f = write(
            "{\"text\":\"x\",\"label\":\"a\"}\n{\"text\":\"y\",\"label\":\"a\"}\n{\"text\":\"z\",\"label\":\"b\"}\n",
            ".jsonl",
        );
        let d = load_dataset(f.path(), Format::Jsonl, &Fields::default()).unwrap();
        assert_eq!(d.label_space(), ["a", "b"]);
        assert_eq!(d.len(), 3);
        let ids: Vec<_> = d.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["0", "1", "2"]);
    }

    #[test]
    fn empty_file_has_no_records() {
        let f = write("", ".jsonl");
        let err = load_dataset(f.path(), Format::Jsonl, &Fields::default()).unwrap_err();
        assert!(err.to_string().ends_with("no records"), "{err}");
        let f = write("text,label\n", ".csv");
        assert!(matches!(
            load_dataset(f.path(), Format::Csv, &Fields::default()),
            Err(CorpusError::NoRecords { .. })
        ));
    }

    #[test]
    fn missing_field_names_row() {
        let f = write(
            "{\"text\":\"x\",\"label\":\"a\"}\n{\"text\":\"y\"}\n",
            ".jsonl",
        );
        match load_dataset(f.path(), Format::Jsonl, &Fields::default()) {
            Err(CorpusError::MissingField { row, field, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(field, "label");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_text_and_duplicate_id_rejected() {
        let f = write("text,label\nok,a\n  ,b\n", ".csv");
        assert!(matches!(
            load_dataset(f.path(), Format::Csv, &Fields::default()),
            Err(CorpusError::EmptyText { row: 2, .. })
        ));
        let f = write(
            "{\"id\":\"q\",\"text\":\"x\",\"label\":\"a\"}\n{\"id\":\"q\",\"text\":\"y\",\"label\":\"b\"}\n",
            ".jsonl",
        );
        assert!(matches!(
            load_dataset(f.path(), Format::Jsonl, &Fields::default()),
            Err(CorpusError::DuplicateId(id)) if id == "q"
        ));
    }

    #[test]
    fn csv_custom_fields() {
        let f = write("sentence,intent,extra\n\"a, quoted\",x,1\nb,y,2\n", ".csv");
        let d = load_dataset(f.path(), Format::Csv, &Fields::new("sentence", "intent")).unwrap();
        assert_eq!(d.samples()[0].text, "a, quoted");
        assert_eq!(d.label_space(), ["x", "y"]);
    }

    #[test]
    fn k_shot_counts_and_errors() {
        let d = toy();
        let draw = k_shot_sample(&d, 2, 5).unwrap();
        assert_eq!(draw.len(), 6);
        for (label, ids) in &draw.selected {
            assert_eq!(ids.len(), 2);
            assert!(ids.iter().all(|id| &d.get(id).unwrap().label == label));
        }
        assert!(matches!(
            k_shot_sample(&d, 0, 5),
            Err(CorpusError::ZeroShots)
        ));
        match k_shot_sample(&d, 4, 5) {
            Err(CorpusError::NotEnoughSamples { class, .. }) => assert_eq!(class, "a"),
            other => panic!("{other:?}"),
        }
        assert_eq!(k_shot_sample(&d, 2, 5).unwrap(), draw);
    }

    #[test]
    fn split_partitions() {
        let d = toy();
        let draw = k_shot_sample(&d, 1, 9).unwrap();
        let (few, rest) = draw.split(&d);
        assert_eq!(few.len(), 3);
        assert_eq!(rest.len(), 6);
        assert_eq!(few.label_space(), d.label_space());
    }

    fn variant(text: &str) -> Variant {
        Variant {
            text: text.into(),
            method: Method::SwapWord,
            seed: 0,
            trace: Trace::default(),
        }
    }

    #[test]
    fn merge_counts_and_integrity() {
        let d = toy();
        let entries = d
            .iter()
            .map(|s| AugmentedEntry {
                source_id: s.id.clone(),
                source_text: s.text.clone(),
                label: s.label.clone(),
                variants: (0..6)
                    .map(|i| variant(&format!("{} v{i}", s.text)))
                    .collect(),
                failure: None,
            })
            .collect();
        let set = AugmentedSet::new(entries);
        let merged = merge_augmented(&d, &set).unwrap();
        assert_eq!(merged.len(), 9 * 7);
        assert_eq!(merged.role(), Role::AugmentedNovel);

        let empty = merge_augmented(&d, &AugmentedSet::default()).unwrap();
        assert_eq!(empty.samples(), d.samples());

        let bad = AugmentedSet::new(vec![AugmentedEntry {
            source_id: "s0".into(),
            source_text: "text 0".into(),
            label: "b".into(),
            variants: vec![variant("x")],
            failure: None,
        }]);
        assert!(matches!(
            merge_augmented(&d, &bad),
            Err(CorpusError::LabelMismatch { .. })
        ));
    }

    #[test]
    fn disjointness() {
        let a = Dataset::new(vec![LabeledSample::new("1", "x", "p")], Role::Base).unwrap();
        let b = Dataset::new(vec![LabeledSample::new("1", "x", "q")], Role::Novel).unwrap();
        assert!(a.ensure_disjoint(&b).is_ok());
        assert!(a.ensure_disjoint(&a).is_err());
    }
}
