//! # edda
//!
//! Encoder-decoder data augmentation for zero-shot stance detection.
//!
//! The crate is organised around the stages of the pipeline:
//!
//! - [`corpus`]: stance datasets, label normalisation and split regimes.
//! - [`llm`]: the single choke point for chat-completion calls (cache, retries, mock).
//! - [`rules`]: the encoder; renders the rationale prompt and parses if-then rules.
//! - [`augment`]: the decoder; lexicon perturbation plus the three-step generation chain.
//! - [`tdda`]: the text-driven rolling-pool baseline generator.
//! - [`metrics`]: classification scores and text-similarity analysis.
//! - [`ren`]: numeric core of the rationale-enhanced network with gradient checks.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled (the default) and plain iterators otherwise.

pub mod augment;
pub mod config;
pub mod corpus;
pub mod formats;
pub mod jsonl;
pub mod llm;
pub mod metrics;
pub mod par;
pub mod prompts;
pub mod ren;
pub mod rules;
pub mod tdda;

pub use augment::{AugmentConfig, AugmentedInstance, Generator, Lexicon, Polarity};
pub use corpus::{Dataset, LabeledInstance, Split, StanceLabel};
pub use llm::{ChatRequest, CompletionText, Gateway, GatewayConfig, MockBackend};
pub use metrics::{SimilarityReport, EmbeddingProvider};
pub use ren::{HiddenStates, Matrix, RenParams};
pub use rules::IfThenRule;
