//! Small fixed logit producers for tests, benchmarks and examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::logits::{LogitProducer, LogitVector};
use crate::vocab::TokenId;

/// Distribution given by a closure of the full context.
pub struct TableModel<F> {
    vocab_size: usize,
    eos: Option<TokenId>,
    table: F,
}

impl<F> TableModel<F>
where
    F: Fn(&[TokenId]) -> Vec<f64> + Sync,
{
    /// `table` returns unnormalized positive weights for a context.
    pub fn new(vocab_size: usize, eos: Option<TokenId>, table: F) -> Self {
        TableModel {
            vocab_size,
            eos,
            table,
        }
    }
}

impl<F> LogitProducer for TableModel<F>
where
    F: Fn(&[TokenId]) -> Vec<f64> + Sync,
{
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_logits(&self, context: &[TokenId]) -> LogitVector {
        let w = (self.table)(context);
        assert_eq!(w.len(), self.vocab_size);
        let total: f64 = w.iter().sum();
        LogitVector::from_probs(&w.iter().map(|x| x / total).collect::<Vec<_>>())
            .expect("table weights must be positive")
    }

    fn eos_id(&self) -> Option<TokenId> {
        self.eos
    }
}

/// Pseudo-random but fixed logits for every context, keyed by `seed`.
#[derive(Debug, Clone)]
pub struct RandomModel {
    vocab_size: usize,
    seed: u64,
    eos: Option<TokenId>,
    spread: f64,
}

impl RandomModel {
    pub fn new(vocab_size: usize, seed: u64, eos: Option<TokenId>) -> Self {
        RandomModel {
            vocab_size,
            seed,
            eos,
            spread: 3.0,
        }
    }

    /// Logits are drawn uniformly from `[-spread, spread]`.
    pub fn with_spread(mut self, spread: f64) -> Self {
        self.spread = spread;
        self
    }

    fn context_seed(&self, context: &[TokenId]) -> u64 {
        // FNV-1a over the seed and the context ids
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self
            .seed
            .to_le_bytes()
            .into_iter()
            .chain(context.iter().flat_map(|t| t.to_le_bytes()))
        {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^ (context.len() as u64)
    }
}

impl LogitProducer for RandomModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_logits(&self, context: &[TokenId]) -> LogitVector {
        let mut rng = ChaCha8Rng::seed_from_u64(self.context_seed(context));
        let values = (0..self.vocab_size)
            .map(|_| rng.random_range(-self.spread..=self.spread))
            .collect();
        LogitVector::new(values).expect("finite")
    }

    fn eos_id(&self) -> Option<TokenId> {
        self.eos
    }
}
