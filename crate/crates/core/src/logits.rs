use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Natural-log scores over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("logit {i} is not finite")));
        }
        Ok(LogitVector(values))
    }

    /// Log of each probability. Zero probabilities are rejected.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        Self::new(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Anything that maps a token context to next-token logits whose softmax is
/// its next-token distribution.
pub trait LogitProducer: Sync {
    fn vocab_size(&self) -> usize;

    fn next_token_logits(&self, context: &[TokenId]) -> LogitVector;

    fn eos_id(&self) -> Option<TokenId> {
        None
    }
}

impl<T: LogitProducer + ?Sized> LogitProducer for &T {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_token_logits(&self, context: &[TokenId]) -> LogitVector {
        (**self).next_token_logits(context)
    }

    fn eos_id(&self) -> Option<TokenId> {
        (**self).eos_id()
    }
}
