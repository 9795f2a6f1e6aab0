//! Decoding strategies and the truncate-then-re-rank samplers.
//!
//! Every operation here is a pure function of its inputs plus an explicit
//! random stream, so generation can fan out across prompts freely.

mod beam;
mod filters;
mod generate;
mod rerank;
mod sample;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

pub use beam::beam_search;
pub use filters::{apply_temperature, softmax, top_k_filter, top_p_filter};
pub use generate::{generate, stream_seed};
pub use rerank::{combined_distribution, detox_rerank, toxify_rerank};
pub use sample::{sample, Categorical};

/// Tolerance used when validating that a distribution sums to one.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Dense next-token distribution over the full vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDistribution(Vec<f64>);

impl ProbDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::param("distribution is empty"));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::param(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::param(format!("probabilities sum to {sum}")));
        }
        Ok(ProbDistribution(probs))
    }

    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
        ProbDistribution(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.0.get(id as usize).copied().unwrap_or(0.0)
    }

    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Token ids by descending probability, ties by ascending id.
    pub fn ranked(&self) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = (0..self.0.len() as TokenId).collect();
        ids.sort_by(|&a, &b| self.rank_cmp(a, b));
        ids
    }

    pub(crate) fn rank_cmp(&self, a: TokenId, b: TokenId) -> std::cmp::Ordering {
        self.0[b as usize]
            .total_cmp(&self.0[a as usize])
            .then(a.cmp(&b))
    }
}

/// A distribution restricted to `support`; everything else has probability 0.
///
/// The support is kept in descending order of the probabilities it was
/// selected by (ties by ascending id).
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedDistribution {
    support: Vec<TokenId>,
    probs: Vec<f64>,
    vocab_size: usize,
}

impl TruncatedDistribution {
    pub(crate) fn new(support: Vec<TokenId>, probs: Vec<f64>, vocab_size: usize) -> Self {
        debug_assert_eq!(support.len(), probs.len());
        TruncatedDistribution {
            support,
            probs,
            vocab_size,
        }
    }

    pub fn support(&self) -> &[TokenId] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.support
            .iter()
            .position(|&t| t == id)
            .map_or(0.0, |i| self.probs[i])
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size];
        for (&t, &p) in self.support.iter().zip(&self.probs) {
            out[t as usize] = p;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Sample,
    TopK,
    TopP,
    Beam,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Sample,
        Strategy::TopK,
        Strategy::TopP,
        Strategy::Beam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Sample => "sample",
            Strategy::TopK => "top_k",
            Strategy::TopP => "top_p",
            Strategy::Beam => "beam",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    #[default]
    Off,
    Detoxify,
    Toxify,
}

impl RerankMode {
    pub const ALL: [RerankMode; 3] = [RerankMode::Off, RerankMode::Detoxify, RerankMode::Toxify];

    pub fn as_str(self) -> &'static str {
        match self {
            RerankMode::Off => "off",
            RerankMode::Detoxify => "detoxify",
            RerankMode::Toxify => "toxify",
        }
    }
}

impl fmt::Display for RerankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RerankMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RerankMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown rerank mode {s:?}")))
    }
}

pub const DEFAULT_MAX_LENGTH: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub strategy: Strategy,
    pub temperature: f64,
    pub k: usize,
    pub p: f64,
    pub beam_size: usize,
    pub max_length: usize,
    pub rerank: RerankMode,
    /// Weight of the base logits inside the combined re-ranking distribution.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            strategy: Strategy::Sample,
            temperature: 1.0,
            k: 40,
            p: 0.9,
            beam_size: 5,
            max_length: DEFAULT_MAX_LENGTH,
            rerank: RerankMode::Off,
            alpha: 0.0,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::param(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.max_length < 1 {
            return Err(Error::param("max_length must be at least 1"));
        }
        match self.strategy {
            Strategy::TopK if self.k < 1 => return Err(Error::param("k must be at least 1")),
            Strategy::TopP if !(self.p > 0.0 && self.p <= 1.0) => {
                return Err(Error::param(format!(
                    "p must lie in (0, 1], got {}",
                    self.p
                )))
            }
            Strategy::Beam if self.beam_size < 1 => {
                return Err(Error::param("beam size must be at least 1"))
            }
            _ => {}
        }
        if !self.alpha.is_finite() {
            return Err(Error::param("alpha must be finite"));
        }
        if self.rerank != RerankMode::Off && self.strategy != Strategy::TopK {
            return Err(Error::RerankStrategy(self.strategy.to_string()));
        }
        Ok(())
    }

    /// The swept parameter of this configuration's strategy.
    pub fn parameter(&self) -> f64 {
        match self.strategy {
            Strategy::Sample => self.temperature,
            Strategy::TopK => self.k as f64,
            Strategy::TopP => self.p,
            Strategy::Beam => self.beam_size as f64,
        }
    }

    /// Sets the swept parameter of `strategy` to `value`.
    pub fn with_parameter(mut self, strategy: Strategy, value: f64) -> Self {
        self.strategy = strategy;
        match strategy {
            Strategy::Sample => self.temperature = value,
            Strategy::TopK => self.k = value as usize,
            Strategy::TopP => self.p = value,
            Strategy::Beam => self.beam_size = value as usize,
        }
        self
    }
}

/// One generation. `generated_tokens` never includes the prompt or a
/// terminating end-of-sequence token.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub prompt_id: String,
    pub prompt_tokens: Vec<TokenId>,
    pub generated_tokens: Vec<TokenId>,
    pub config: DecoderConfig,
    pub seed: u64,
    pub scores: BTreeMap<String, f64>,
}
