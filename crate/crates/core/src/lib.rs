//! Controllable decoding over pluggable logit producers.
//!
//! The crate bundles a smoothed n-gram language model, the standard decoding
//! strategies (temperature sampling, top-k, nucleus, beam search), and a
//! truncate-then-re-rank sampler that steers generation away from (or
//! towards) what an "infected" copy of the model prefers. An experiment
//! harness measures toxicity and diversity across parameter sweeps.

pub mod decoding;
pub mod error;
pub mod harness;
pub mod logits;
pub mod metrics;
pub mod ngram;
pub mod par;
pub mod producers;
pub mod synthetic;
pub mod toxicity;
pub mod vocab;

pub use decoding::{DecoderConfig, GenerationRecord, RerankMode, Strategy};
pub use error::{Error, Result};
pub use logits::{LogitProducer, LogitVector};
pub use ngram::{NGramModel, NGramParams};
pub use toxicity::{Lexicon, LexiconScorer, Scorer};
pub use vocab::{TokenId, TokenizerMode, Vocabulary};
