//! Text augmentation: the method taxonomy, per-call specs, the rule-based
//! augmenters and the dataset-level [`Augmenter`] interface shared with the
//! model-backed augmenters in [`crate::llm`].

mod rules;
mod set;
mod tables;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::set::{variant_id, AugmentedEntry, AugmentedSet, Edit, EditOp, Trace, Variant};
pub use self::tables::{ConfusionTable, KeyboardLayout, MisspellTable, Thesaurus};

use crate::corpus::Dataset;
use crate::embed::EmbeddingStore;
use crate::error::AugmentError;
use crate::rng::KeyedRng;

/// Every augmentation method the crate knows, rule-based and model-backed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    InsertChar,
    SubstituteChar,
    SwapChar,
    DeleteChar,
    Ocr,
    Spelling,
    Keyboard,
    SwapWord,
    DeleteWord,
    PpdbSynonym,
    WordnetSynonym,
    EmbeddingSubstitute,
    EmbeddingInsert,
    CounterFitted,
    ContextualBertInsert,
    ContextualBertSubstitute,
    ContextualDistilbertInsert,
    ContextualDistilbertSubstitute,
    ContextualRobertaInsert,
    ContextualRobertaSubstitute,
    BackTranslation,
    Chatgpt,
}

/// Fill-mask edit mode for the contextual methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Insert,
    Substitute,
}

impl Method {
    pub const ALL: [Method; 22] = [
        Method::InsertChar,
        Method::SubstituteChar,
        Method::SwapChar,
        Method::DeleteChar,
        Method::Ocr,
        Method::Spelling,
        Method::Keyboard,
        Method::SwapWord,
        Method::DeleteWord,
        Method::PpdbSynonym,
        Method::WordnetSynonym,
        Method::EmbeddingSubstitute,
        Method::EmbeddingInsert,
        Method::CounterFitted,
        Method::ContextualBertInsert,
        Method::ContextualBertSubstitute,
        Method::ContextualDistilbertInsert,
        Method::ContextualDistilbertSubstitute,
        Method::ContextualRobertaInsert,
        Method::ContextualRobertaSubstitute,
        Method::BackTranslation,
        Method::Chatgpt,
    ];

    /// The snake_case identifier used in configs, CLI flags and output.
    pub fn name(self) -> &'static str {
        match self {
            Method::InsertChar => "insert_char",
            Method::SubstituteChar => "substitute_char",
            Method::SwapChar => "swap_char",
            Method::DeleteChar => "delete_char",
            Method::Ocr => "ocr",
            Method::Spelling => "spelling",
            Method::Keyboard => "keyboard",
            Method::SwapWord => "swap_word",
            Method::DeleteWord => "delete_word",
            Method::PpdbSynonym => "ppdb_synonym",
            Method::WordnetSynonym => "wordnet_synonym",
            Method::EmbeddingSubstitute => "embedding_substitute",
            Method::EmbeddingInsert => "embedding_insert",
            Method::CounterFitted => "counter_fitted",
            Method::ContextualBertInsert => "contextual_bert_insert",
            Method::ContextualBertSubstitute => "contextual_bert_substitute",
            Method::ContextualDistilbertInsert => "contextual_distilbert_insert",
            Method::ContextualDistilbertSubstitute => "contextual_distilbert_substitute",
            Method::ContextualRobertaInsert => "contextual_roberta_insert",
            Method::ContextualRobertaSubstitute => "contextual_roberta_substitute",
            Method::BackTranslation => "back_translation",
            Method::Chatgpt => "chatgpt",
        }
    }

    /// The name the method goes by in the nlpaug / textattack ecosystem.
    pub fn library_name(self) -> &'static str {
        match self {
            Method::InsertChar => "InsertCharAugmentation",
            Method::SubstituteChar => "SubstituteCharAugmentation",
            Method::SwapChar => "SwapCharAugmentation",
            Method::DeleteChar => "DeleteCharAugmentation",
            Method::Ocr => "OCRAugmentation",
            Method::Spelling => "SpellingAugmentation",
            Method::Keyboard => "KeyboardAugmentation",
            Method::SwapWord => "SwapWordAug",
            Method::DeleteWord => "DeleteWordAug",
            Method::PpdbSynonym => "PPDBSynonymAug",
            Method::WordnetSynonym => "WordNetSynonymAug",
            Method::EmbeddingSubstitute => "SubstituteWordByGoogleNewsEmbeddings",
            Method::EmbeddingInsert => "InsertWordByGoogleNewsEmbeddings",
            Method::CounterFitted => "CounterFittedEmbeddingAug",
            Method::ContextualBertInsert => "ContextualWordAugUsingBert(Insert)",
            Method::ContextualBertSubstitute => "ContextualWordAugUsingBert(Substitute)",
            Method::ContextualDistilbertInsert => "ContextualWordAugUsingDistilBERT(Insert)",
            Method::ContextualDistilbertSubstitute => {
                "ContextualWordAugUsingDistilBERT(Substitute)"
            }
            Method::ContextualRobertaInsert => "ContextualWordAugUsingRoBERTA(Insert)",
            Method::ContextualRobertaSubstitute => "ContextualWordAugUsingRoBERTA(Substitute)",
            Method::BackTranslation => "BackTranslationAug",
            Method::Chatgpt => "ChatGPTRephrase",
        }
    }

    pub fn is_rule_based(self) -> bool {
        self.contextual().is_none() && !matches!(self, Method::BackTranslation | Method::Chatgpt)
    }

    pub fn rule_based() -> impl Iterator<Item = Method> {
        Self::ALL.into_iter().filter(|m| m.is_rule_based())
    }

    /// For contextual methods, the fill-mask model key and edit mode.
    pub fn contextual(self) -> Option<(&'static str, MaskMode)> {
        Some(match self {
            Method::ContextualBertInsert => ("bert", MaskMode::Insert),
            Method::ContextualBertSubstitute => ("bert", MaskMode::Substitute),
            Method::ContextualDistilbertInsert => ("distilbert", MaskMode::Insert),
            Method::ContextualDistilbertSubstitute => ("distilbert", MaskMode::Substitute),
            Method::ContextualRobertaInsert => ("roberta", MaskMode::Insert),
            Method::ContextualRobertaSubstitute => ("roberta", MaskMode::Substitute),
            _ => return None,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = AugmentError;

    /// Accepts the snake_case name, its kebab-case spelling, or the library
    /// name (case-insensitive).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm || m.library_name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| AugmentError::UnknownMethod(s.to_string()))
    }
}

/// How many units an augmenter edits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Amount {
    /// Fraction in `(0, 1]` of eligible units.
    Rate(f64),
    /// Exact number of edits.
    Count(usize),
}

impl Amount {
    /// Number of edits for `eligible` units.
    ///
    /// A rate gives `max(1, round(rate * eligible))` (round half away from
    /// zero); an explicit count is capped at `eligible`. Zero eligible units
    /// always give zero edits.
    pub fn edits(self, eligible: usize) -> usize {
        if eligible == 0 {
            return 0;
        }
        match self {
            Amount::Rate(r) => ((r * eligible as f64).round() as usize).clamp(1, eligible),
            Amount::Count(c) => c.min(eligible),
        }
    }
}

impl Default for Amount {
    fn default() -> Self {
        Amount::Rate(0.1)
    }
}

/// One augmentation request.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub method: Method,
    pub amount: Amount,
    pub seed: u64,
    pub n_variants: usize,
}

pub const DEFAULT_VARIANTS: usize = 6;
pub const DEFAULT_NEIGHBORS: usize = 10;

impl AugmentSpec {
    pub fn new(
        method: Method,
        amount: Amount,
        seed: u64,
        n_variants: usize,
    ) -> Result<Self, AugmentError> {
        let spec = AugmentSpec {
            method,
            amount,
            seed,
            n_variants,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rate(method: Method, rate: f64, seed: u64) -> Result<Self, AugmentError> {
        Self::new(method, Amount::Rate(rate), seed, DEFAULT_VARIANTS)
    }

    pub fn count(method: Method, count: usize, seed: u64) -> Result<Self, AugmentError> {
        Self::new(method, Amount::Count(count), seed, DEFAULT_VARIANTS)
    }

    pub fn with_variants(mut self, n: usize) -> Result<Self, AugmentError> {
        self.n_variants = n;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        match self.amount {
            Amount::Rate(r) if !(r > 0.0 && r <= 1.0) => {
                return Err(AugmentError::InvalidSpec(format!(
                    "rate {r} is outside (0, 1]"
                )))
            }
            Amount::Count(0) => {
                return Err(AugmentError::InvalidSpec("count must be at least 1".into()))
            }
            _ => {}
        }
        if self.n_variants == 0 {
            return Err(AugmentError::InvalidSpec(
                "n_variants must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Read-only resources the rule-based augmenters draw on.
#[derive(Clone, Debug)]
pub struct Resources {
    pub keyboard: KeyboardLayout,
    pub ocr: ConfusionTable,
    pub misspellings: MisspellTable,
    pub ppdb: Option<Arc<Thesaurus>>,
    pub wordnet: Option<Arc<Thesaurus>>,
    /// General-purpose word vectors (the GoogleNews role).
    pub embeddings: Option<Arc<EmbeddingStore>>,
    /// Counter-fitted word vectors.
    pub counter_fitted: Option<Arc<EmbeddingStore>>,
    /// Neighbourhood size for embedding substitution.
    pub n_neighbors: usize,
}

impl Default for Resources {
    fn default() -> Self {
        Resources {
            keyboard: KeyboardLayout::qwerty(),
            ocr: ConfusionTable::default_ocr(),
            misspellings: MisspellTable::default_english(),
            ppdb: None,
            wordnet: None,
            embeddings: None,
            counter_fitted: None,
            n_neighbors: DEFAULT_NEIGHBORS,
        }
    }
}

/// Runs one rule-based method on one text, returning exactly
/// `spec.n_variants` variants.
///
/// Variant `i` draws from the stream keyed by `(spec.seed, method name, i)`.
/// When a method has nothing to act on, the variant is the source text with
/// `trace.identity = true`.
pub fn augment(
    text: &str,
    spec: &AugmentSpec,
    res: &Resources,
) -> Result<Vec<Variant>, AugmentError> {
    spec.validate()?;
    if !spec.method.is_rule_based() {
        return Err(AugmentError::NotRuleBased(spec.method.name()));
    }
    let mut out = Vec::with_capacity(spec.n_variants);
    for i in 0..spec.n_variants {
        let mut rng = KeyedRng::new(spec.seed, spec.method.name(), &i.to_string());
        let outcome = rules::apply(spec.method, text, spec.amount, &mut rng, res)?;
        out.push(outcome.into_variant(text, spec.method, spec.seed));
    }
    Ok(out)
}

/// Produces an [`AugmentedSet`] for a whole dataset.
pub trait Augmenter: Sync {
    /// Label used in reports.
    fn name(&self) -> String;

    fn augment_dataset(&self, dataset: &Dataset, seed: u64) -> Result<AugmentedSet, AugmentError>;
}

/// Dataset-level driver for a rule-based method.
///
/// Sample `s` is augmented with seed `derive_seed(seed, "augment/sample",
/// "{method}/{s.id}")`, so results do not depend on dataset order or on how
/// rayon schedules the work.
#[derive(Clone, Debug)]
pub struct RuleAugmenter {
    pub method: Method,
    pub amount: Amount,
    pub n_variants: usize,
    pub resources: Arc<Resources>,
}

impl RuleAugmenter {
    pub fn new(
        method: Method,
        amount: Amount,
        n_variants: usize,
        resources: Arc<Resources>,
    ) -> Result<Self, AugmentError> {
        AugmentSpec::new(method, amount, 0, n_variants)?;
        if !method.is_rule_based() {
            return Err(AugmentError::NotRuleBased(method.name()));
        }
        Ok(RuleAugmenter {
            method,
            amount,
            n_variants,
            resources,
        })
    }

    pub fn sample_seed(&self, seed: u64, sample_id: &str) -> u64 {
        KeyedRng::derive_seed(
            seed,
            "augment/sample",
            &format!("{}/{}", self.method.name(), sample_id),
        )
    }
}

impl Augmenter for RuleAugmenter {
    fn name(&self) -> String {
        self.method.name().to_string()
    }

    fn augment_dataset(&self, dataset: &Dataset, seed: u64) -> Result<AugmentedSet, AugmentError> {
        let entries: Result<Vec<AugmentedEntry>, AugmentError> = dataset
            .samples()
            .par_iter()
            .map(|s| {
                let spec = AugmentSpec {
                    method: self.method,
                    amount: self.amount,
                    seed: self.sample_seed(seed, &s.id),
                    n_variants: self.n_variants,
                };
                let (variants, failure) = match augment(&s.text, &spec, &self.resources) {
                    Ok(v) => (v, None),
                    Err(e @ AugmentError::CountTooLarge { .. }) => {
                        (Vec::new(), Some(e.to_string()))
                    }
                    Err(e) => return Err(e),
                };
                Ok(AugmentedEntry {
                    source_id: s.id.clone(),
                    source_text: s.text.clone(),
                    label: s.label.clone(),
                    variants,
                    failure,
                })
            })
            .collect();
        let set = AugmentedSet::new(entries?);
        if !set.is_empty() && set.failures().count() == set.entries().len() {
            let first = set.entries()[0].failure.clone().unwrap_or_default();
            return Err(AugmentError::TotalFailure(first));
        }
        Ok(set)
    }
}

/// The no-augmentation baseline: one entry per sample, no variants.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoAugmentation;

impl Augmenter for NoAugmentation {
    fn name(&self) -> String {
        "raw".into()
    }

    fn augment_dataset(&self, dataset: &Dataset, _seed: u64) -> Result<AugmentedSet, AugmentError> {
        Ok(AugmentedSet::new(
            dataset
                .iter()
                .map(|s| AugmentedEntry {
                    source_id: s.id.clone(),
                    source_text: s.text.clone(),
                    label: s.label.clone(),
                    variants: Vec::new(),
                    failure: None,
                })
                .collect(),
        ))
    }
}
