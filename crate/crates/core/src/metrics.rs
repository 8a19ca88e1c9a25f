//! Quality scores for augmented sets.
//!
//! *Faithfulness* is the cosine similarity between generated variants and
//! real samples of the same label. *TransRate* measures how compact and
//! separable the labelled embeddings are:
//!
//! ```text
//! R(Z, eps) = 1/2 logdet(I_d + d / (n eps^2) * Zc^T Zc)       Zc = Z centred per feature
//! TransRate = R(Z, eps) - sum_c (n_c / n) R(Z_c, eps)          each Z_c centred on its own mean
//! ```
//!
//! The log-determinant is summed from the singular values of `Zc`; a
//! decomposition that produces non-finite values is reported as
//! [`MetricError::NotPositiveDefinite`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{variant_id, AugmentedSet};
use crate::corpus::Dataset;
use crate::embed::{cosine, EmbeddingStore};
use crate::error::MetricError;

pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Labelled feature rows: the `Z` and `Y` of the TransRate formula.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
    centered: bool,
}

impl FeatureMatrix {
    pub fn new(
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self, MetricError> {
        if rows.is_empty() {
            return Err(MetricError::Shape("feature matrix has no rows".into()));
        }
        if rows.len() != labels.len() {
            return Err(MetricError::Shape(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(MetricError::Shape("rows have dimension 0".into()));
        }
        if let Some(r) = rows.iter().position(|r| r.len() != d) {
            return Err(MetricError::Shape(format!(
                "row {r} has dimension {}, expected {d}",
                rows[r].len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(MetricError::Shape(format!(
                "label {l} outside 0..{n_classes}"
            )));
        }
        Ok(FeatureMatrix {
            rows,
            labels,
            n_classes,
            centered: false,
        })
    }

    /// Sentence embeddings of a dataset, labelled by its label-space order.
    pub fn from_dataset(d: &Dataset, store: &EmbeddingStore) -> Result<Self, MetricError> {
        let rows = d
            .iter()
            .map(|s| store.sentence_embed(Some(&s.id), &s.text))
            .collect::<Result<Vec<_>, _>>()?;
        let labels = d
            .iter()
            .map(|s| d.class_index(&s.label).expect("label in label space"))
            .collect();
        Self::new(rows, labels, d.label_space().len())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Subtracts the per-feature mean from every row.
    pub fn center(&mut self) {
        let mean = column_mean(self.rows.iter().map(Vec::as_slice), self.dim());
        for r in &mut self.rows {
            for (x, m) in r.iter_mut().zip(&mean) {
                *x -= m;
            }
        }
        self.centered = true;
    }
}

fn column_mean<'a>(rows: impl Iterator<Item = &'a [f64]>, d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    let mut n = 0usize;
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
        n += 1;
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean
}

/// `R(Z, eps)` for the given rows, centring them first.
pub fn coding_rate(rows: &[&[f64]], epsilon: f64) -> Result<f64, MetricError> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if n == 0 || d == 0 {
        return Err(MetricError::Shape("coding rate of an empty matrix".into()));
    }
    let mean = column_mean(rows.iter().copied(), d);
    let z = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let scale = d as f64 / (n as f64 * epsilon * epsilon);
    // Singular values of Z rather than a factorisation of I + c Z^T Z: the
    // null directions stay at ~1e-32 after squaring instead of picking up
    // rounding scaled by c.
    let sv = z.singular_values();
    if sv.iter().any(|x| !x.is_finite()) {
        return Err(MetricError::NotPositiveDefinite);
    }
    Ok(0.5 * sv.iter().map(|s| (scale * s * s).ln_1p()).sum::<f64>())
}

/// TransRate of labelled features. Every class index below
/// `z.n_classes()` must have at least one row.
pub fn transrate(z: &FeatureMatrix, epsilon: f64) -> Result<f64, MetricError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MetricError::Epsilon(epsilon));
    }
    if z.rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let mut classes: Vec<Vec<&[f64]>> = vec![Vec::new(); z.n_classes];
    for (r, &l) in z.rows.iter().zip(&z.labels) {
        classes[l].push(r);
    }
    if let Some(c) = classes.iter().position(Vec::is_empty) {
        return Err(MetricError::EmptyClass(c));
    }
    let all: Vec<&[f64]> = z.rows.iter().map(Vec::as_slice).collect();
    let whole = coding_rate(&all, epsilon)?;
    let per_class = classes
        .par_iter()
        .map(|rows| coding_rate(rows, epsilon))
        .collect::<Result<Vec<f64>, _>>()?;
    let n = z.len() as f64;
    let conditional: f64 = classes
        .iter()
        .zip(&per_class)
        .map(|(rows, r)| rows.len() as f64 / n * r)
        .sum();
    Ok(whole - conditional)
}

/// How per-variant similarities to the reference class are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over variants of the best match among same-label references.
    #[default]
    Max,
    /// Mean over variants of the mean similarity to same-label references.
    Mean,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(format!("unknown aggregation `{s}` (expected max or mean)")),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Faithfulness {
    pub value: f64,
    pub n_variants: usize,
    /// Variant/reference cosine evaluations.
    pub n_pairs: usize,
}

fn reference_by_label(
    reference: &Dataset,
    store: &EmbeddingStore,
) -> Result<BTreeMap<String, Vec<Vec<f64>>>, MetricError> {
    let mut by_label: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for s in reference.iter() {
        let v = store.sentence_embed(Some(&s.id), &s.text)?;
        by_label.entry(s.label.clone()).or_default().push(v);
    }
    Ok(by_label)
}

pub fn faithfulness(
    augmented: &AugmentedSet,
    reference: &Dataset,
    store: &EmbeddingStore,
    aggregation: Aggregation,
) -> Result<Faithfulness, MetricError> {
    if augmented.variant_count() == 0 {
        return Err(MetricError::NoVariants);
    }
    let refs = reference_by_label(reference, store)?;
    let mut total = 0.0;
    let mut n_variants = 0;
    let mut n_pairs = 0;
    for e in augmented.entries() {
        if e.variants.is_empty() {
            continue;
        }
        let class = refs
            .get(&e.label)
            .ok_or_else(|| MetricError::EmptyReferenceClass(e.label.clone()))?;
        for (i, v) in e.variants.iter().enumerate() {
            let emb = store.sentence_embed(Some(&variant_id(&e.source_id, i)), &v.text)?;
            let sims = class
                .iter()
                .map(|r| cosine(&emb, r))
                .collect::<Result<Vec<f64>, _>>()?;
            total += match aggregation {
                Aggregation::Max => sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Aggregation::Mean => sims.iter().sum::<f64>() / sims.len() as f64,
            };
            n_pairs += sims.len();
            n_variants += 1;
        }
    }
    Ok(Faithfulness {
        value: total / n_variants as f64,
        n_variants,
        n_pairs,
    })
}

/// Features of an augmented set: every source sample plus its variants,
/// classes indexed in sorted label order.
pub fn augmented_features(
    augmented: &AugmentedSet,
    store: &EmbeddingStore,
) -> Result<FeatureMatrix, MetricError> {
    let labels: BTreeMap<&str, usize> = {
        let mut ls: Vec<&str> = augmented
            .entries()
            .iter()
            .map(|e| e.label.as_str())
            .collect();
        ls.sort_unstable();
        ls.dedup();
        ls.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
    };
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for e in augmented.entries() {
        let y = labels[e.label.as_str()];
        rows.push(store.sentence_embed(Some(&e.source_id), &e.source_text)?);
        ys.push(y);
        for (i, v) in e.variants.iter().enumerate() {
            rows.push(store.sentence_embed(Some(&variant_id(&e.source_id, i)), &v.text)?);
            ys.push(y);
        }
    }
    FeatureMatrix::new(rows, ys, labels.len())
}

/// Both scores for one method. `faithfulness` is `None` when the set has no
/// generated variants (the no-augmentation baseline).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub method: String,
    pub faithfulness: Option<f64>,
    pub transrate: f64,
    pub n_samples: usize,
    pub n_pairs: usize,
    pub epsilon: f64,
}

pub fn report(
    method: &str,
    augmented: &AugmentedSet,
    reference: &Dataset,
    store: &EmbeddingStore,
    epsilon: f64,
    aggregation: Aggregation,
) -> Result<QualityReport, MetricError> {
    let (faith, n_pairs) = if augmented.variant_count() == 0 {
        (None, 0)
    } else {
        let f = faithfulness(augmented, reference, store, aggregation)?;
        (Some(f.value), f.n_pairs)
    };
    let z = augmented_features(augmented, store)?;
    Ok(QualityReport {
        method: method.to_string(),
        faithfulness: faith,
        transrate: transrate(&z, epsilon)?,
        n_samples: z.len(),
        n_pairs,
        epsilon,
    })
}

impl QualityReport {
    pub fn to_json(&self) -> Result<String, MetricError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV with a header row; columns in struct order.
    pub fn write_csv<W: Write>(reports: &[QualityReport], w: W) -> Result<(), MetricError> {
        let mut csv = csv::Writer::from_writer(w);
        for r in reports {
            csv.serialize(r)?;
        }
        if reports.is_empty() {
            csv.write_record([
                "method",
                "faithfulness",
                "transrate",
                "n_samples",
                "n_pairs",
                "epsilon",
            ])?;
        }
        csv.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
