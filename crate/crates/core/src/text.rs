//! Whitespace tokenization and the small casing rules shared by the word-level
//! augmenters.
//!
//! Tokens are maximal runs of non-whitespace characters (Unicode whitespace).
//! Punctuation stays attached to its token; lookups that need a bare word go
//! through [`split_affixes`]. Augmented text is re-joined with single spaces.

pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

/// Splits a token into leading punctuation, the alphanumeric core and
/// trailing punctuation. Inner punctuation ("can't", "follow-up") stays in
/// the core.
pub fn split_affixes(token: &str) -> (&str, &str, &str) {
    let start = token
        .char_indices()
        .find(|(_, c)| c.is_alphanumeric())
        .map(|(i, _)| i);
    let Some(start) = start else {
        return (token, "", "");
    };
    let end = token
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_alphanumeric())
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(token.len());
    (&token[..start], &token[start..end], &token[end..])
}

/// Re-applies the source token's initial capitalization to a replacement.
/// Only the first letter is touched; the rest of the replacement is kept as is.
pub fn match_case(source: &str, replacement: &str) -> String {
    let upper = source.chars().next().is_some_and(char::is_uppercase);
    if !upper {
        return replacement.to_string();
    }
    let mut chars = replacement.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
