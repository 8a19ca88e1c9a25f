//! Prompt templates, chat message assembly and the numbered-list parser.

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledSample;
use crate::error::LlmError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    SingleTurn,
    MultiTurn,
    Classify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: ChatRole,
    pub content: String,
}

impl Message {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }
}

/// One scripted user/assistant turn shown before the real request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorTurn {
    pub user: String,
    pub assistant: String,
}

/// Placeholders are `{TEXT}`, `{N}`, `{CLASSES}`, `{DESCRIPTION}` and
/// `{CLASS}`, substituted in a single left-to-right pass so that braces in
/// the substituted text are left alone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub mode: PromptMode,
    #[serde(default)]
    pub system_text: String,
    pub user_template: String,
    #[serde(default = "default_variants")]
    pub n_variants: usize,
    /// Multi-turn context, emitted before the final user message.
    #[serde(default)]
    pub prior_turns: Vec<PriorTurn>,
    /// Classification: the pattern for each in-context example.
    #[serde(default)]
    pub example_template: Option<String>,
}

fn default_variants() -> usize {
    crate::augment::DEFAULT_VARIANTS
}

const REPHRASE_SYSTEM: &str = "You rewrite sentences. You keep their meaning and never add facts.";

impl PromptTemplate {
    pub fn single_turn() -> Self {
        PromptTemplate {
            mode: PromptMode::SingleTurn,
            system_text: REPHRASE_SYSTEM.into(),
            user_template:
                "Rephrase the following sentence into {N} semantically equivalent sentences. \
                            Write one sentence per line, numbered 1. to {N}.\nSentence: {TEXT}"
                    .into(),
            n_variants: default_variants(),
            prior_turns: Vec::new(),
            example_template: None,
        }
    }

    pub fn multi_turn() -> Self {
        PromptTemplate {
            mode: PromptMode::MultiTurn,
            system_text: REPHRASE_SYSTEM.into(),
            user_template: "{TEXT}".into(),
            n_variants: default_variants(),
            prior_turns: vec![PriorTurn {
                user: "I will send you a sentence. Rephrase it into {N} semantically equivalent sentences, \
                       one per line, numbered 1. to {N}."
                    .into(),
                assistant: "Understood. Please send the sentence.".into(),
            }],
            example_template: None,
        }
    }

    pub fn classify() -> Self {
        PromptTemplate {
            mode: PromptMode::Classify,
            system_text: String::new(),
            user_template:
                "Given a person's health description or symptom, predict the corresponding \
                            illness from the following categories: {CLASSES}."
                    .into(),
            n_variants: default_variants(),
            prior_turns: Vec::new(),
            example_template: Some(
                "Description: {DESCRIPTION}. Typically, this symptom corresponds to {CLASS}".into(),
            ),
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord, clippy::manual_is_multiple_of)]
    pub fn validate(&self) -> Result<(), LlmError> {
        let need = |s: &str, field: &str, keys: &[&str]| -> Result<(), LlmError> {
            for k in keys {
                if !s.contains(&format!("{{{k}}}")) {
                    return Err(LlmError::Template(format!(
                        "{field} lacks the {{{k}}} placeholder"
                    )));
                }
            }
            Ok(())
        };
        match self.mode {
            PromptMode::SingleTurn => need(&self.user_template, "user_template", &["TEXT", "N"])?,
            PromptMode::MultiTurn => {
                need(&self.user_template, "user_template", &["TEXT"])?;
                let mentions_n = self.user_template.contains("{N}")
                    || self.prior_turns.iter().any(|t| t.user.contains("{N}"));
                if !mentions_n {
                    return Err(LlmError::Template(
                        "multi-turn template must state {N} in the user template or a prior turn"
                            .into(),
                    ));
                }
            }
            PromptMode::Classify => {
                need(&self.user_template, "user_template", &["CLASSES"])?;
                let ex = self.example_template.as_deref().ok_or_else(|| {
                    LlmError::Template("classify template needs example_template".into())
                })?;
                need(ex, "example_template", &["DESCRIPTION", "CLASS"])?;
            }
        }
        if self.n_variants == 0 {
            return Err(LlmError::Template("n_variants must be at least 1".into()));
        }
        Ok(())
    }
}

/// Single-pass `{KEY}` substitution; unknown keys are kept verbatim.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) => {
                let key = &after[..end];
                match values.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(key);
                        out.push('}');
                    }
                }
                rest = &after[end + 1..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// A request-ready dialogue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<Message>,
    pub model_name: String,
    pub temperature: f64,
    pub request_id: String,
}

impl ChatExchange {
    /// Checks that roles alternate user/assistant after an optional leading
    /// system message, and that the last message is from the user.
    #[allow(clippy::neg_cmp_op_on_partial_ord, clippy::manual_is_multiple_of)]
    pub fn validate(&self) -> Result<(), LlmError> {
        let body: &[Message] = match self.messages.first() {
            Some(m) if m.role == ChatRole::System => &self.messages[1..],
            _ => &self.messages,
        };
        for (i, m) in body.iter().enumerate() {
            let expected = if i % 2 == 0 {
                ChatRole::User
            } else {
                ChatRole::Assistant
            };
            if m.role != expected {
                return Err(LlmError::Template(format!(
                    "message {i} should be {expected:?}"
                )));
            }
        }
        if body.len() % 2 == 0 {
            return Err(LlmError::Template(
                "dialogue must end with a user message".into(),
            ));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::Template("temperature must be >= 0".into()));
        }
        Ok(())
    }

    /// Appends an assistant reply and a follow-up user turn.
    pub fn follow_up(&self, reply: &str, user: &str) -> ChatExchange {
        let mut next = self.clone();
        next.messages.push(Message::new(ChatRole::Assistant, reply));
        next.messages.push(Message::new(ChatRole::User, user));
        next.request_id = format!("{}/retry", self.request_id);
        next
    }
}

/// The rephrasing dialogue for one sample. Only the sample text is sent;
/// the label never is.
pub fn build_rephrase_prompt(
    sample: &LabeledSample,
    template: &PromptTemplate,
    model_name: &str,
    temperature: f64,
) -> Result<ChatExchange, LlmError> {
    if template.mode == PromptMode::Classify {
        return Err(LlmError::Template(
            "a classify template cannot build a rephrase prompt".into(),
        ));
    }
    template.validate()?;
    let n = template.n_variants.to_string();
    let values = [("TEXT", sample.text.as_str()), ("N", n.as_str())];
    let mut messages = Vec::new();
    if !template.system_text.is_empty() {
        messages.push(Message::new(ChatRole::System, template.system_text.clone()));
    }
    if template.mode == PromptMode::MultiTurn {
        for t in &template.prior_turns {
            messages.push(Message::new(ChatRole::User, fill(&t.user, &values)));
            messages.push(Message::new(
                ChatRole::Assistant,
                fill(&t.assistant, &values),
            ));
        }
    }
    messages.push(Message::new(
        ChatRole::User,
        fill(&template.user_template, &values),
    ));
    let exchange = ChatExchange {
        messages,
        model_name: model_name.to_string(),
        temperature,
        request_id: format!("rephrase/{}", sample.id),
    };
    exchange.validate()?;
    Ok(exchange)
}

/// The in-context classification prompt: instruction, one example line per
/// `(text, class)` pair, then the query with the class left open.
pub fn build_classify_prompt(
    query: &str,
    classes: &[String],
    examples: &[(String, String)],
    template: &PromptTemplate,
    model_name: &str,
) -> Result<ChatExchange, LlmError> {
    if template.mode != PromptMode::Classify {
        return Err(LlmError::Template(
            "classification needs a classify template".into(),
        ));
    }
    template.validate()?;
    let ex = template.example_template.as_deref().unwrap_or_default();
    let joined = classes.join(", ");
    let mut lines = vec![fill(&template.user_template, &[("CLASSES", &joined)])];
    for (text, class) in examples {
        lines.push(fill(
            ex,
            &[("DESCRIPTION", trim_period(text)), ("CLASS", class)],
        ));
    }
    let open = fill(ex, &[("DESCRIPTION", trim_period(query)), ("CLASS", "")]);
    lines.push(open.trim_end().to_string());
    let mut messages = Vec::new();
    if !template.system_text.is_empty() {
        messages.push(Message::new(ChatRole::System, template.system_text.clone()));
    }
    messages.push(Message::new(ChatRole::User, lines.join("\n")));
    Ok(ChatExchange {
        messages,
        model_name: model_name.to_string(),
        temperature: 0.0,
        request_id: "classify".into(),
    })
}

// The example pattern supplies its own period after the description.
fn trim_period(s: &str) -> &str {
    s.trim().trim_end_matches('.')
}

/// Canonical numbered list: `1. a\n2. b`.
pub fn format_numbered<S: AsRef<str>>(items: &[S]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Splits `"12. rest"`, `"12) rest"` or `"12 - rest"` into `(12, "rest")`.
fn numbered(line: &str) -> Option<(usize, &str)> {
    let t = line.trim_start();
    let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let index: usize = t[..digits].parse().ok()?;
    let rest = &t[digits..];
    // "3.5 mg", "1-2 weeks" and "3-year" are numbers, not indices
    if let Some(body) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
        if body.starts_with(|c: char| c.is_ascii_digit()) {
            return None;
        }
        return Some((index, body.trim()));
    }
    let body = rest.trim_start().strip_prefix('-')?;
    if !(body.is_empty() || body.starts_with(char::is_whitespace)) {
        return None;
    }
    Some((index, body.trim()))
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [
        ('"', '"'),
        ('\'', '\''),
        ('\u{201c}', '\u{201d}'),
        ('\u{2018}', '\u{2019}'),
    ] {
        if s.len() >= open.len_utf8() + close.len_utf8()
            && s.starts_with(open)
            && s.ends_with(close)
        {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    s
}

/// Extracts numbered items from a model reply.
///
/// Lines before the first index are ignored. A non-blank line without an
/// index continues the previous item unless a blank line came between them.
/// Items are returned in index order (stable for repeated indices). Fewer
/// than `expected_n` items is a [`LlmError::ParseShortfall`] carrying what
/// was found; none at all is a [`LlmError::ParseFailure`].
pub fn parse_rephrasings(raw: &str, expected_n: usize) -> Result<Vec<String>, LlmError> {
    let mut items: Vec<(usize, String)> = Vec::new();
    let mut open = false;
    for line in raw.lines() {
        if line.trim().is_empty() {
            open = false;
            continue;
        }
        if let Some((idx, body)) = numbered(line) {
            items.push((idx, body.to_string()));
            open = true;
        } else if open {
            let last = &mut items.last_mut().expect("open implies an item").1;
            if !last.is_empty() {
                last.push(' ');
            }
            last.push_str(line.trim());
        }
    }
    items.sort_by_key(|(i, _)| *i);
    let out: Vec<String> = items
        .into_iter()
        .map(|(_, s)| strip_quotes(&s).to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if out.is_empty() {
        return Err(LlmError::ParseFailure {
            raw: raw.to_string(),
        });
    }
    if out.len() < expected_n {
        return Err(LlmError::ParseShortfall {
            expected: expected_n,
            items: out,
        });
    }
    Ok(out)
}
