//! Chat rephrasing, fill-mask and translation services.
//!
//! Every call goes through [`LlmClient`], which handles the response cache,
//! rate limiting and retries. [`mock`] provides scripted stand-ins for all
//! three services, both in-process and over loopback HTTP.

pub mod client;
pub mod mock;
mod ops;
pub mod prompt;

use std::sync::Arc;

pub use client::{
    is_loopback, CallInfo, Candidate, Clock, HttpResponse, LlmClient, LlmServiceConfig,
    RateLimiter, ResponseCache, SystemClock, Transport, UreqTransport, VirtualClock,
    RATE_WINDOW_SECS,
};
pub use ops::{
    back_translate, classify_examples, fill_mask_augment, llm_classify, llm_rephrase_batch,
    match_class, rephrase_sample, Classification, MASK,
};
pub use prompt::{
    build_classify_prompt, build_rephrase_prompt, format_numbered, parse_rephrasings, ChatExchange,
    ChatRole, Message, PriorTurn, PromptMode, PromptTemplate,
};

use crate::augment::{Amount, AugmentSpec, AugmentedEntry, AugmentedSet, Augmenter, Method};
use crate::corpus::Dataset;
use crate::error::{AugmentError, LlmError};
use crate::rng::KeyedRng;

/// Dataset-level driver for the service-backed methods: chat rephrasing,
/// the contextual fill-mask methods and back-translation.
pub struct LlmAugmenter {
    pub method: Method,
    pub amount: Amount,
    pub n_variants: usize,
    pub template: PromptTemplate,
    client: Arc<LlmClient>,
}

impl LlmAugmenter {
    pub fn new(method: Method, client: Arc<LlmClient>) -> Result<Self, AugmentError> {
        if method.is_rule_based() {
            return Err(AugmentError::InvalidSpec(format!(
                "{} is rule-based",
                method.name()
            )));
        }
        let template = PromptTemplate::single_turn();
        let n_variants = if method == Method::Chatgpt {
            template.n_variants
        } else {
            1
        };
        Ok(LlmAugmenter {
            method,
            amount: Amount::default(),
            n_variants,
            template,
            client,
        })
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Result<Self, AugmentError> {
        template.validate()?;
        if self.method == Method::Chatgpt {
            self.n_variants = template.n_variants;
        }
        self.template = template;
        Ok(self)
    }

    pub fn with_amount(mut self, amount: Amount, n_variants: usize) -> Result<Self, AugmentError> {
        AugmentSpec::new(self.method, amount, 0, n_variants)?;
        self.amount = amount;
        self.n_variants = n_variants;
        if self.method == Method::Chatgpt {
            self.template.n_variants = n_variants;
        }
        Ok(self)
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }

    fn sample_seed(&self, seed: u64, sample_id: &str) -> u64 {
        KeyedRng::derive_seed(
            seed,
            "augment/sample",
            &format!("{}/{}", self.method.name(), sample_id),
        )
    }

    fn run(&self, dataset: &Dataset, seed: u64) -> Result<AugmentedSet, LlmError> {
        match self.method {
            Method::Chatgpt => llm_rephrase_batch(&self.client, dataset, &self.template, seed),
            Method::BackTranslation => ops::run_batch(&self.client, dataset, |s| {
                let mut out = Vec::with_capacity(self.n_variants);
                for _ in 0..self.n_variants {
                    out.push(back_translate(&self.client, &s.text, seed)?);
                }
                Ok((out, None))
            }),
            m => {
                debug_assert!(m.contextual().is_some());
                ops::run_batch(&self.client, dataset, |s| {
                    let spec = AugmentSpec {
                        method: m,
                        amount: self.amount,
                        seed: self.sample_seed(seed, &s.id),
                        n_variants: self.n_variants,
                    };
                    Ok((fill_mask_augment(&self.client, &s.text, &spec)?, None))
                })
            }
        }
    }
}

impl Augmenter for LlmAugmenter {
    fn name(&self) -> String {
        self.method.name().to_string()
    }

    fn augment_dataset(&self, dataset: &Dataset, seed: u64) -> Result<AugmentedSet, AugmentError> {
        let set = self.run(dataset, seed)?;
        let all_failed = set
            .entries()
            .iter()
            .all(|e: &AugmentedEntry| e.failure.is_some() && e.variants.is_empty());
        if !set.is_empty() && all_failed {
            let first = set.entries()[0].failure.clone().unwrap_or_default();
            return Err(AugmentError::TotalFailure(first));
        }
        Ok(set)
    }
}
