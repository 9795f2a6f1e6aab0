use super::filters::{softmax, top_k_filter};
use super::{ProbDistribution, TruncatedDistribution};
use crate::error::{Error, Result};
use crate::logits::LogitVector;

/// Mass below this on the re-ranked support is treated as zero.
const MIN_SUPPORT_MASS: f64 = 1e-300;

/// `softmax(-v + alpha * u)`: favours tokens the toxic model (`v`) disfavours.
pub fn combined_distribution(
    u: &LogitVector,
    v: &LogitVector,
    alpha: f64,
) -> Result<ProbDistribution> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    if u.is_empty() {
        return Err(Error::param("empty logit vector"));
    }
    let scores: Vec<f64> = if alpha == 0.0 {
        v.values().iter().map(|x| -x).collect()
    } else {
        u.values()
            .iter()
            .zip(v.values())
            .map(|(u, v)| -v + alpha * u)
            .collect()
    };
    Ok(softmax(&scores))
}

fn reassign(
    base: &ProbDistribution,
    weights: &ProbDistribution,
    k: usize,
) -> Result<TruncatedDistribution> {
    if base.len() != weights.len() {
        return Err(Error::LengthMismatch {
            expected: base.len(),
            actual: weights.len(),
        });
    }
    let truncated = top_k_filter(base, k)?;
    let mass: f64 = truncated.support().iter().map(|&t| weights.prob(t)).sum();
    if mass < MIN_SUPPORT_MASS {
        log::warn!("re-ranking weights vanish on the top-{k} support; using plain top-k");
        return Ok(truncated);
    }
    let support = truncated.support().to_vec();
    let probs = support.iter().map(|&t| weights.prob(t) / mass).collect();
    Ok(TruncatedDistribution::new(support, probs, base.len()))
}

/// Keeps the base top-k support and redistributes its mass by `qbar`.
pub fn detox_rerank(
    base: &ProbDistribution,
    qbar: &ProbDistribution,
    k: usize,
) -> Result<TruncatedDistribution> {
    reassign(base, qbar, k)
}

/// Keeps the base top-k support and redistributes its mass by the toxic
/// model's own distribution.
pub fn toxify_rerank(
    base: &ProbDistribution,
    q_toxic: &ProbDistribution,
    k: usize,
) -> Result<TruncatedDistribution> {
    reassign(base, q_toxic, k)
}
