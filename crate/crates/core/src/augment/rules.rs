//! The rule-based operators. Each takes the source text and one keyed stream
//! and produces a single variant; [`super::augment`] calls them once per
//! requested variant.
//!
//! Character methods count and index Unicode scalar values. Word methods use
//! the whitespace tokenizer in [`crate::text`], and their output is re-joined
//! with single spaces.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{Amount, Edit, EditOp, Method, Resources, Thesaurus, Trace, Variant};
use crate::embed::EmbeddingStore;
use crate::error::AugmentError;
use crate::rng::{sample_sorted, KeyedRng};
use crate::text::{detokenize, match_case, split_affixes, tokenize};

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

pub(super) struct Outcome {
    text: String,
    edits: Vec<Edit>,
    reason: Option<&'static str>,
}

impl Outcome {
    fn unchanged(text: &str, reason: &'static str) -> Self {
        Outcome {
            text: text.to_string(),
            edits: Vec::new(),
            reason: Some(reason),
        }
    }

    fn edited(text: String, edits: Vec<Edit>) -> Self {
        Outcome {
            text,
            edits,
            reason: None,
        }
    }

    pub(super) fn into_variant(self, source: &str, method: Method, seed: u64) -> Variant {
        let trace = if self.text == source {
            Trace {
                edits: self.edits,
                ..Trace::identity(self.reason.unwrap_or("edits cancelled out"))
            }
        } else {
            Trace {
                edits: self.edits,
                ..Trace::default()
            }
        };
        Variant {
            text: self.text,
            method,
            seed,
            trace,
        }
    }
}

pub(super) fn apply(
    method: Method,
    text: &str,
    amount: Amount,
    rng: &mut KeyedRng,
    res: &Resources,
) -> Result<Outcome, AugmentError> {
    match method {
        Method::InsertChar => Ok(insert_char(text, amount, rng)),
        Method::SubstituteChar => Ok(substitute_char(text, amount, rng)),
        Method::SwapChar => Ok(swap_char(text, amount, rng)),
        Method::DeleteChar => delete_char(text, amount, rng),
        Method::Ocr => Ok(map_chars(text, amount, rng, |c| {
            res.ocr.misreads(c).to_vec()
        })),
        Method::Keyboard => Ok(map_chars(text, amount, rng, |c| keyboard_options(res, c))),
        Method::Spelling => Ok(map_words(text, amount, rng, |w| {
            res.misspellings.misspellings(&w.to_lowercase()).to_vec()
        })),
        Method::SwapWord => Ok(swap_word(text, amount, rng)),
        Method::DeleteWord => delete_word(text, amount, rng),
        Method::PpdbSynonym => synonym(text, amount, rng, res.ppdb.as_deref(), method),
        Method::WordnetSynonym => synonym(text, amount, rng, res.wordnet.as_deref(), method),
        Method::EmbeddingSubstitute => {
            let store = require(res.embeddings.as_deref(), method, "embeddings")?;
            embedding_substitute(text, amount, rng, store, res.n_neighbors)
        }
        Method::CounterFitted => {
            let store = require(res.counter_fitted.as_deref(), method, "counter_fitted")?;
            embedding_substitute(text, amount, rng, store, res.n_neighbors)
        }
        Method::EmbeddingInsert => {
            let store = require(res.embeddings.as_deref(), method, "embeddings")?;
            Ok(embedding_insert(text, amount, rng, store))
        }
        _ => Err(AugmentError::NotRuleBased(method.name())),
    }
}

fn require<T>(r: Option<T>, method: Method, resource: &'static str) -> Result<T, AugmentError> {
    r.ok_or(AugmentError::MissingResource {
        method: method.name(),
        resource,
    })
}

// Inserts are not bounded by the text, so an explicit count is used as is.
fn insert_count(amount: Amount, units: usize) -> usize {
    match amount {
        Amount::Count(c) => c,
        Amount::Rate(_) => amount.edits(units.max(1)),
    }
}

// Deletes never empty the text: a rate is capped at `eligible - 1`, an
// explicit count that would consume everything is an error.
fn delete_count(amount: Amount, len: usize, eligible: usize) -> Result<usize, AugmentError> {
    match amount {
        Amount::Count(c) if c >= len || c >= eligible => {
            Err(AugmentError::CountTooLarge { count: c, len })
        }
        Amount::Count(c) => Ok(c),
        Amount::Rate(_) => Ok(amount.edits(eligible).min(eligible.saturating_sub(1))),
    }
}

fn random_letter(rng: &mut KeyedRng) -> char {
    LETTERS[rng.random_range(0..LETTERS.len())] as char
}

fn insert_char(text: &str, amount: Amount, rng: &mut KeyedRng) -> Outcome {
    let mut chars: Vec<char> = text.chars().collect();
    let count = insert_count(amount, chars.len());
    let mut edits = Vec::with_capacity(count);
    for _ in 0..count {
        let pos = rng.random_range(0..=chars.len());
        let c = random_letter(rng);
        chars.insert(pos, c);
        edits.push(Edit {
            op: EditOp::Insert,
            position: pos,
            before: String::new(),
            after: c.to_string(),
        });
    }
    Outcome::edited(chars.into_iter().collect(), edits)
}

fn non_ws_positions(chars: &[char]) -> Vec<usize> {
    (0..chars.len())
        .filter(|&i| !chars[i].is_whitespace())
        .collect()
}

fn substitute_char(text: &str, amount: Amount, rng: &mut KeyedRng) -> Outcome {
    let mut chars: Vec<char> = text.chars().collect();
    if chars.len() < 2 {
        return Outcome::unchanged(text, "text shorter than two characters");
    }
    let eligible = non_ws_positions(&chars);
    let picks = sample_sorted(rng, eligible.len(), amount.edits(eligible.len()));
    let mut edits = Vec::with_capacity(picks.len());
    for p in picks {
        let pos = eligible[p];
        let old = chars[pos];
        let lower = old.to_lowercase().next().unwrap_or(old);
        // Draw from the 25 (or 26) letters that differ from the old one.
        let options: Vec<char> = LETTERS
            .iter()
            .map(|&b| b as char)
            .filter(|&c| c != lower)
            .collect();
        let mut new = options[rng.random_range(0..options.len())];
        if old.is_uppercase() {
            new = new.to_ascii_uppercase();
        }
        chars[pos] = new;
        edits.push(char_edit(EditOp::Substitute, pos, old, new));
    }
    Outcome::edited(chars.into_iter().collect(), edits)
}

fn char_edit(op: EditOp, position: usize, before: char, after: char) -> Edit {
    Edit {
        op,
        position,
        before: before.to_string(),
        after: after.to_string(),
    }
}

/// Swaps adjacent characters. Eligible positions are the `i` where `c[i]`
/// and `c[i+1]` are both non-whitespace and differ; the chosen positions are
/// applied in ascending order.
fn swap_char(text: &str, amount: Amount, rng: &mut KeyedRng) -> Outcome {
    let mut chars: Vec<char> = text.chars().collect();
    if chars.len() < 2 {
        return Outcome::unchanged(text, "text shorter than two characters");
    }
    let eligible: Vec<usize> = (0..chars.len() - 1)
        .filter(|&i| {
            !chars[i].is_whitespace() && !chars[i + 1].is_whitespace() && chars[i] != chars[i + 1]
        })
        .collect();
    if eligible.is_empty() {
        return Outcome::unchanged(text, "no swappable character pair");
    }
    let picks = sample_sorted(rng, eligible.len(), amount.edits(eligible.len()));
    let mut edits = Vec::with_capacity(picks.len());
    for p in picks {
        let i = eligible[p];
        edits.push(Edit {
            op: EditOp::Swap,
            position: i,
            before: format!("{}{}", chars[i], chars[i + 1]),
            after: format!("{}{}", chars[i + 1], chars[i]),
        });
        chars.swap(i, i + 1);
    }
    Outcome::edited(chars.into_iter().collect(), edits)
}

fn delete_char(text: &str, amount: Amount, rng: &mut KeyedRng) -> Result<Outcome, AugmentError> {
    let chars: Vec<char> = text.chars().collect();
    let eligible = non_ws_positions(&chars);
    let count = delete_count(amount, chars.len(), eligible.len())?;
    if chars.len() < 2 {
        return Ok(Outcome::unchanged(text, "text shorter than two characters"));
    }
    if count == 0 {
        return Ok(Outcome::unchanged(text, "rate rounds to zero deletions"));
    }
    let picks = sample_sorted(rng, eligible.len(), count);
    let mut drop = vec![false; chars.len()];
    let mut edits = Vec::with_capacity(count);
    for p in picks {
        let pos = eligible[p];
        drop[pos] = true;
        edits.push(Edit {
            op: EditOp::Delete,
            position: pos,
            before: chars[pos].to_string(),
            after: String::new(),
        });
    }
    let out = chars
        .iter()
        .zip(&drop)
        .filter(|(_, &d)| !d)
        .map(|(c, _)| *c)
        .collect();
    Ok(Outcome::edited(out, edits))
}

fn keyboard_options(res: &Resources, c: char) -> Vec<char> {
    let mut lower = c.to_lowercase();
    let (Some(l), None) = (lower.next(), lower.next()) else {
        return Vec::new();
    };
    let n = res.keyboard.neighbors(l);
    if c.is_uppercase() {
        n.iter()
            .map(|k| k.to_uppercase().next().unwrap_or(*k))
            .collect()
    } else {
        n.to_vec()
    }
}

/// Replaces characters that have table entries with one of their entries.
fn map_chars(
    text: &str,
    amount: Amount,
    rng: &mut KeyedRng,
    options: impl Fn(char) -> Vec<char>,
) -> Outcome {
    let mut chars: Vec<char> = text.chars().collect();
    let eligible: Vec<(usize, Vec<char>)> = chars
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| {
            let o = options(c);
            (!o.is_empty()).then_some((i, o))
        })
        .collect();
    if eligible.is_empty() {
        return Outcome::unchanged(text, "no character has a table entry");
    }
    let picks = sample_sorted(rng, eligible.len(), amount.edits(eligible.len()));
    let mut edits = Vec::with_capacity(picks.len());
    for p in picks {
        let (pos, opts) = &eligible[p];
        let new = *opts.choose(rng).expect("non-empty");
        edits.push(char_edit(EditOp::Substitute, *pos, chars[*pos], new));
        chars[*pos] = new;
    }
    Outcome::edited(chars.into_iter().collect(), edits)
}

/// Replaces the core of eligible tokens with one of the returned options,
/// keeping the token's punctuation and initial capitalization.
fn map_words(
    text: &str,
    amount: Amount,
    rng: &mut KeyedRng,
    options: impl Fn(&str) -> Vec<String>,
) -> Outcome {
    let tokens = tokenize(text);
    let eligible: Vec<(usize, Vec<String>)> = tokens
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            let (_, core, _) = split_affixes(t);
            if core.is_empty() {
                return None;
            }
            let o = options(core);
            (!o.is_empty()).then_some((i, o))
        })
        .collect();
    if eligible.is_empty() {
        return Outcome::unchanged(text, "no token has a replacement");
    }
    let mut out: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    let picks = sample_sorted(rng, eligible.len(), amount.edits(eligible.len()));
    let mut edits = Vec::with_capacity(picks.len());
    for p in picks {
        let (pos, opts) = &eligible[p];
        let (pre, core, suf) = split_affixes(tokens[*pos]);
        let choice = opts.choose(rng).expect("non-empty");
        let new = format!("{pre}{}{suf}", match_case(core, choice));
        edits.push(Edit {
            op: EditOp::Substitute,
            position: *pos,
            before: tokens[*pos].to_string(),
            after: new.clone(),
        });
        out[*pos] = new;
    }
    Outcome::edited(detokenize(&out), edits)
}

/// Random swap as in EDA: each of `count` rounds picks a token and swaps it
/// with a different, uniformly chosen token.
fn swap_word(text: &str, amount: Amount, rng: &mut KeyedRng) -> Outcome {
    let mut tokens: Vec<&str> = tokenize(text);
    let n = tokens.len();
    if n < 2 {
        return Outcome::unchanged(text, "fewer than two tokens");
    }
    let count = amount.edits(n);
    let mut edits = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        edits.push(Edit {
            op: EditOp::Swap,
            position: i.min(j),
            before: format!("{} {}", tokens[i.min(j)], tokens[i.max(j)]),
            after: format!("{} {}", tokens[i.max(j)], tokens[i.min(j)]),
        });
        tokens.swap(i, j);
    }
    Outcome::edited(detokenize(&tokens), edits)
}

fn delete_word(text: &str, amount: Amount, rng: &mut KeyedRng) -> Result<Outcome, AugmentError> {
    let tokens = tokenize(text);
    let n = tokens.len();
    let count = delete_count(amount, n, n)?;
    if n < 2 {
        return Ok(Outcome::unchanged(text, "fewer than two tokens"));
    }
    let picks = sample_sorted(rng, n, count);
    let edits = picks
        .iter()
        .map(|&p| Edit {
            op: EditOp::Delete,
            position: p,
            before: tokens[p].to_string(),
            after: String::new(),
        })
        .collect();
    let kept: Vec<&str> = tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| picks.binary_search(i).is_err())
        .map(|(_, t)| *t)
        .collect();
    Ok(Outcome::edited(detokenize(&kept), edits))
}

fn synonym(
    text: &str,
    amount: Amount,
    rng: &mut KeyedRng,
    thesaurus: Option<&Thesaurus>,
    method: Method,
) -> Result<Outcome, AugmentError> {
    let resource = if method == Method::PpdbSynonym {
        "ppdb"
    } else {
        "wordnet"
    };
    let th = require(thesaurus, method, resource)?;
    Ok(map_words(text, amount, rng, |w| {
        th.synonyms(&w.to_lowercase()).to_vec()
    }))
}

/// Replaces in-vocabulary tokens with a word drawn uniformly from their
/// `n_neighbors` nearest neighbours.
fn embedding_substitute(
    text: &str,
    amount: Amount,
    rng: &mut KeyedRng,
    store: &EmbeddingStore,
    n_neighbors: usize,
) -> Result<Outcome, AugmentError> {
    if store.vocabulary().len() < 2 || n_neighbors == 0 {
        return Ok(Outcome::unchanged(text, "no neighbours available"));
    }
    let tokens = tokenize(text);
    let eligible: Vec<(usize, usize)> = tokens
        .iter()
        .enumerate()
        .filter_map(|(i, t)| store.resolve_token(t).map(|w| (i, w)))
        .collect();
    if eligible.is_empty() {
        return Ok(Outcome::unchanged(text, "no in-vocabulary token"));
    }
    let mut out: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    let picks = sample_sorted(rng, eligible.len(), amount.edits(eligible.len()));
    let mut edits = Vec::with_capacity(picks.len());
    for p in picks {
        let (pos, widx) = eligible[p];
        let neighbors = store.top_n_neighbors(store.word(widx), n_neighbors)?;
        let (choice, _) = neighbors
            .choose(rng)
            .expect("vocabulary has at least two words");
        let tok = tokens[pos];
        // Keep punctuation when the match came from the token's core.
        let new = if store.resolve(tok).is_some() {
            match_case(tok, choice)
        } else {
            let (pre, core, suf) = split_affixes(tok);
            format!("{pre}{}{suf}", match_case(core, choice))
        };
        edits.push(Edit {
            op: EditOp::Substitute,
            position: pos,
            before: tok.to_string(),
            after: new.clone(),
        });
        out[pos] = new;
    }
    Ok(Outcome::edited(detokenize(&out), edits))
}

/// Inserts vocabulary words, each drawn uniformly and placed at a uniform
/// gap of the current token sequence.
fn embedding_insert(
    text: &str,
    amount: Amount,
    rng: &mut KeyedRng,
    store: &EmbeddingStore,
) -> Outcome {
    let vocab = store.vocabulary();
    if vocab.is_empty() {
        return Outcome::unchanged(text, "empty vocabulary");
    }
    let mut tokens: Vec<String> = tokenize(text).into_iter().map(String::from).collect();
    let count = insert_count(amount, tokens.len());
    let mut edits = Vec::with_capacity(count);
    for _ in 0..count {
        let gap = rng.random_range(0..=tokens.len());
        let word = vocab[rng.random_range(0..vocab.len())].clone();
        edits.push(Edit {
            op: EditOp::Insert,
            position: gap,
            before: String::new(),
            after: word.clone(),
        });
        tokens.insert(gap, word);
    }
    Outcome::edited(detokenize(&tokens), edits)
}
