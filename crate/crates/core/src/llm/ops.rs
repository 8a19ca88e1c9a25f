//! Service-backed augmentation and classification.

use rand::Rng;
use rayon::prelude::*;

use super::client::{CallInfo, LlmClient};
use super::prompt::{
    build_classify_prompt, build_rephrase_prompt, parse_rephrasings, PromptTemplate,
};
use crate::augment::{
    AugmentSpec, AugmentedEntry, AugmentedSet, Edit, EditOp, MaskMode, Method, Trace, Variant,
};
use crate::corpus::{Dataset, LabeledSample};
use crate::error::LlmError;
use crate::rng::{sample_sorted, KeyedRng};
use crate::text::{detokenize, tokenize};

pub const MASK: &str = "<mask>";

fn corrective_turn(n: usize) -> String {
    format!("Please answer with exactly {n} rephrased sentences, one per line, numbered 1. to {n}.")
}

/// Up to `template.n_variants` rephrasings of one sample.
///
/// A short list triggers one re-ask with a corrective user turn. If that is
/// still short, or the re-ask fails, the longer of the two lists is returned
/// with a shortfall note as the third element.
pub fn rephrase_sample(
    client: &LlmClient,
    sample: &LabeledSample,
    template: &PromptTemplate,
) -> Result<(Vec<String>, CallInfo, Option<String>), LlmError> {
    let n = template.n_variants;
    let cfg = client.config();
    let exchange = build_rephrase_prompt(sample, template, &cfg.model, cfg.temperature)?;
    let (reply, info) = client.chat(&exchange)?;
    match parse_rephrasings(&reply, n) {
        Ok(mut items) => {
            items.truncate(n);
            Ok((items, info, None))
        }
        Err(first @ (LlmError::ParseShortfall { .. } | LlmError::ParseFailure { .. })) => {
            let partial = match first {
                LlmError::ParseShortfall { items, .. } => items,
                _ => Vec::new(),
            };
            let shortfall = |items: Vec<String>, info, note: String| {
                let msg = format!("parse shortfall: {} of {n} rephrasings{note}", items.len());
                Ok((items, info, Some(msg)))
            };
            let retry = exchange.follow_up(&reply, &corrective_turn(n));
            let (reply2, info2) = match client.chat(&retry) {
                Ok(r) => r,
                Err(
                    e @ (LlmError::Auth { .. } | LlmError::MissingKey(_) | LlmError::Template(_)),
                ) => return Err(e),
                Err(e) if !partial.is_empty() => {
                    return shortfall(partial, info, format!("; re-ask failed: {e}"))
                }
                Err(e) => return Err(e),
            };
            let info = info.merge(info2);
            match parse_rephrasings(&reply2, n) {
                Ok(mut items) => {
                    items.truncate(n);
                    Ok((items, info, None))
                }
                Err(LlmError::ParseShortfall { items, .. }) if items.len() >= partial.len() => {
                    shortfall(items, info, String::new())
                }
                Err(_) if !partial.is_empty() => shortfall(partial, info, String::new()),
                Err(e) => Err(e),
            }
        }
        Err(e) => Err(e),
    }
}

fn make_variant(source: &str, text: String, method: Method, seed: u64, info: CallInfo) -> Variant {
    let mut trace = if text == source {
        Trace::identity("service returned the input unchanged")
    } else {
        Trace::default()
    };
    trace.attempts = Some(info.attempts);
    trace.cached = Some(info.cached);
    Variant {
        text,
        method,
        seed,
        trace,
    }
}

/// Runs `per_sample` over the dataset with at most `max_in_flight` samples
/// in flight. Credential errors abort the batch; other errors become the
/// entry's failure.
pub(super) fn run_batch<F>(
    client: &LlmClient,
    samples: &Dataset,
    per_sample: F,
) -> Result<AugmentedSet, LlmError>
where
    F: Fn(&LabeledSample) -> Result<(Vec<Variant>, Option<String>), LlmError> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(client.config().max_in_flight)
        .build()
        .map_err(|e| LlmError::Config(e.to_string()))?;
    let entries: Result<Vec<AugmentedEntry>, LlmError> = pool.install(|| {
        samples
            .samples()
            .par_iter()
            .map(|s| {
                let (variants, failure) = match per_sample(s) {
                    Ok(r) => r,
                    Err(
                        e @ (LlmError::Auth { .. }
                        | LlmError::MissingKey(_)
                        | LlmError::Template(_)),
                    ) => return Err(e),
                    Err(e) => {
                        log::warn!("sample {}: {e}", s.id);
                        (Vec::new(), Some(e.to_string()))
                    }
                };
                Ok(AugmentedEntry {
                    source_id: s.id.clone(),
                    source_text: s.text.clone(),
                    label: s.label.clone(),
                    variants,
                    failure,
                })
            })
            .collect()
    });
    Ok(AugmentedSet::new(entries?))
}

/// Chat rephrasing for every sample.
pub fn llm_rephrase_batch(
    client: &LlmClient,
    samples: &Dataset,
    template: &PromptTemplate,
    seed: u64,
) -> Result<AugmentedSet, LlmError> {
    template.validate()?;
    run_batch(client, samples, |s| {
        let (items, info, short) = rephrase_sample(client, s, template)?;
        let variants = items
            .into_iter()
            .map(|t| make_variant(&s.text, t, Method::Chatgpt, seed, info))
            .collect();
        Ok((variants, short))
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classification {
    pub class: String,
    pub raw: String,
}

/// Matches a reply to a class: exact (case-insensitive, ignoring surrounding
/// quotes and a final period), then the longest class name contained in the
/// reply, then [`LlmError::Unmatched`].
pub fn match_class(raw: &str, classes: &[String]) -> Result<String, LlmError> {
    let cleaned = raw
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'')
        .trim_end_matches('.')
        .trim();
    if let Some(c) = classes.iter().find(|c| c.eq_ignore_ascii_case(cleaned)) {
        return Ok(c.clone());
    }
    let lower = raw.to_lowercase();
    let mut best: Option<&String> = None;
    for c in classes {
        if !c.is_empty()
            && lower.contains(&c.to_lowercase())
            && best.is_none_or(|b| c.len() > b.len())
        {
            best = Some(c);
        }
    }
    best.cloned().ok_or_else(|| LlmError::Unmatched {
        raw: raw.to_string(),
    })
}

/// In-context classification of one text at temperature 0.
pub fn llm_classify(
    client: &LlmClient,
    text: &str,
    classes: &[String],
    examples: &[(String, String)],
    template: &PromptTemplate,
) -> Result<Classification, LlmError> {
    if classes.is_empty() {
        return Err(LlmError::Config("no classes to choose from".into()));
    }
    let exchange =
        build_classify_prompt(text, classes, examples, template, &client.config().model)?;
    let (raw, _) = client.chat(&exchange)?;
    let class = match_class(&raw, classes)?;
    Ok(Classification { class, raw })
}

/// Few-shot examples for classification: the first `per_class` samples of
/// each class, in label-space order.
pub fn classify_examples(train: &Dataset, per_class: usize) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for label in train.label_space() {
        for s in train.class_samples(label).take(per_class) {
            out.push((s.text.clone(), s.label.clone()));
        }
    }
    out
}

fn top_candidate(cands: &[super::client::Candidate]) -> Option<&str> {
    let mut best: Option<&super::client::Candidate> = None;
    for c in cands {
        if best.is_none_or(|b| c.score > b.score) {
            best = Some(c);
        }
    }
    best.map(|c| c.token.trim())
}

/// Contextual insert or substitute through a fill-mask service. Each edit
/// masks one position and fills it with the top-scoring candidate; edits
/// are applied one after another.
pub fn fill_mask_augment(
    client: &LlmClient,
    text: &str,
    spec: &AugmentSpec,
) -> Result<Vec<Variant>, LlmError> {
    spec.validate()
        .map_err(|e| LlmError::Config(e.to_string()))?;
    let (model, mode) = spec
        .method
        .contextual()
        .ok_or_else(|| LlmError::Config(format!("{} is not a fill-mask method", spec.method)))?;
    let mut out = Vec::with_capacity(spec.n_variants);
    for i in 0..spec.n_variants {
        let mut rng = KeyedRng::new(spec.seed, spec.method.name(), &i.to_string());
        let mut tokens: Vec<String> = tokenize(text).into_iter().map(String::from).collect();
        let mut info = CallInfo {
            attempts: 0,
            cached: true,
        };
        let mut edits = Vec::new();
        let plan: Vec<usize> = match mode {
            MaskMode::Substitute => {
                sample_sorted(&mut rng, tokens.len(), spec.amount.edits(tokens.len()))
            }
            MaskMode::Insert => {
                let count = match spec.amount {
                    crate::augment::Amount::Count(c) => c,
                    a => a.edits(tokens.len().max(1)),
                };
                let mut gaps = Vec::with_capacity(count);
                for k in 0..count {
                    gaps.push(rng.random_range(0..=tokens.len() + k));
                }
                gaps
            }
        };
        for pos in plan {
            let before = match mode {
                MaskMode::Substitute => std::mem::replace(&mut tokens[pos], MASK.to_string()),
                MaskMode::Insert => {
                    tokens.insert(pos, MASK.to_string());
                    String::new()
                }
            };
            let (cands, call) = client.fill_mask(model, &detokenize(&tokens))?;
            info = info.merge(call);
            let fill = top_candidate(&cands)
                .ok_or_else(|| LlmError::Response("fill-mask returned no candidates".into()))?
                .to_string();
            tokens[pos] = fill.clone();
            edits.push(Edit {
                op: match mode {
                    MaskMode::Substitute => EditOp::Substitute,
                    MaskMode::Insert => EditOp::Insert,
                },
                position: pos,
                before,
                after: fill,
            });
        }
        let mut v = make_variant(text, detokenize(&tokens), spec.method, spec.seed, info);
        if tokens.is_empty() {
            v.trace = Trace::identity("empty text");
        }
        v.trace.edits = edits;
        out.push(v);
    }
    Ok(out)
}

/// Source → pivot → source through the translation service.
pub fn back_translate(client: &LlmClient, text: &str, seed: u64) -> Result<Variant, LlmError> {
    let cfg = client.config();
    let pivot = cfg
        .pivot_language
        .as_deref()
        .ok_or_else(|| LlmError::Config("back-translation needs pivot_language".into()))?;
    let (mid, a) = client.translate(text, &cfg.source_language, pivot)?;
    let (back, b) = client.translate(&mid, pivot, &cfg.source_language)?;
    let mut v = make_variant(text, back, Method::BackTranslation, seed, a.merge(b));
    v.trace.intermediates = vec![mid];
    Ok(v)
}
