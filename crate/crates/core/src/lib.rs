//! Text data augmentation for few-shot classification.

pub mod augment;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod text;
pub mod trainer;

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/rule_augment.md")]
    mod rule_augment {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/llm.md")]
    mod llm {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
