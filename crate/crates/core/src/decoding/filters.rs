use super::{ProbDistribution, TruncatedDistribution};
use crate::error::{Error, Result};
use crate::logits::LogitVector;
use crate::vocab::TokenId;

/// Numerically stable softmax of `scores`.
pub fn softmax(scores: &[f64]) -> ProbDistribution {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    ProbDistribution::from_normalized(out)
}

/// `softmax(logits / temperature)`.
pub fn apply_temperature(logits: &LogitVector, temperature: f64) -> Result<ProbDistribution> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::param(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::param("empty logit vector"));
    }
    if temperature == 1.0 {
        return Ok(softmax(logits.values()));
    }
    let scaled: Vec<f64> = logits.values().iter().map(|u| u / temperature).collect();
    Ok(softmax(&scaled))
}

fn renormalized(dist: &ProbDistribution, support: Vec<TokenId>) -> TruncatedDistribution {
    let mass: f64 = support.iter().map(|&t| dist.prob(t)).sum();
    let probs = support.iter().map(|&t| dist.prob(t) / mass).collect();
    TruncatedDistribution::new(support, probs, dist.len())
}

fn identity(dist: &ProbDistribution) -> TruncatedDistribution {
    let support = dist.ranked();
    let probs = support.iter().map(|&t| dist.prob(t)).collect();
    TruncatedDistribution::new(support, probs, dist.len())
}

/// Keeps the `k` most probable tokens (ties by ascending id) and renormalizes.
pub fn top_k_filter(dist: &ProbDistribution, k: usize) -> Result<TruncatedDistribution> {
    if k < 1 {
        return Err(Error::param("k must be at least 1"));
    }
    if k >= dist.len() {
        return Ok(identity(dist));
    }
    let mut ids: Vec<TokenId> = (0..dist.len() as TokenId).collect();
    ids.select_nth_unstable_by(k - 1, |&a, &b| dist.rank_cmp(a, b));
    ids.truncate(k);
    ids.sort_by(|&a, &b| dist.rank_cmp(a, b));
    Ok(renormalized(dist, ids))
}

/// Keeps the shortest descending-probability prefix whose cumulative mass is
/// at least `p`, including the token that crosses the threshold.
pub fn top_p_filter(dist: &ProbDistribution, p: f64) -> Result<TruncatedDistribution> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param(format!("p must lie in (0, 1], got {p}")));
    }
    if p >= 1.0 {
        return Ok(identity(dist));
    }
    let ranked = dist.ranked();
    let mut cumulative = 0.0;
    let mut cut = ranked.len();
    for (i, &t) in ranked.iter().enumerate() {
        cumulative += dist.prob(t);
        if cumulative >= p {
            cut = i + 1;
            break;
        }
    }
    let mut support = ranked;
    support.truncate(cut);
    Ok(renormalized(dist, support))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(p: &[f64]) -> ProbDistribution {
        ProbDistribution::new(p.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn temperature_one_is_identity() {
        let l = LogitVector::from_probs(&[0.5, 0.3, 0.2]).unwrap();
        let d = apply_temperature(&l, 1.0).unwrap();
        assert!(close(d.probs(), &[0.5, 0.3, 0.2], 1e-12));
    }

    #[test]
    fn uniform_logits_stay_uniform() {
        let l = LogitVector::new(vec![1.7; 4]).unwrap();
        for t in [0.1, 0.5, 1.0, 3.0] {
            let d = apply_temperature(&l, t).unwrap();
            assert!(close(d.probs(), &[0.25; 4], 1e-15));
        }
    }

    #[test]
    fn half_temperature_squares_odds() {
        // softmax(0, 2 ln 2) = (1/5, 4/5)
        let l = LogitVector::new(vec![0.0, 2f64.ln()]).unwrap();
        let d = apply_temperature(&l, 0.5).unwrap();
        assert!(close(d.probs(), &[0.2, 0.8], 1e-12));
    }

    #[test]
    fn temperature_must_be_positive() {
        let l = LogitVector::new(vec![0.0, 1.0]).unwrap();
        assert!(apply_temperature(&l, 0.0).is_err());
        assert!(apply_temperature(&l, -1.0).is_err());
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let l = LogitVector::new(vec![1000.0, 999.0, -1000.0]).unwrap();
        let d = apply_temperature(&l, 0.1).unwrap();
        assert!(d.probs().iter().all(|p| p.is_finite()));
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top_k_examples() {
        let d = dist(&[0.5, 0.3, 0.2]);
        let t = top_k_filter(&d, 2).unwrap();
        assert_eq!(t.support(), &[0, 1]);
        assert!(close(t.probs(), &[0.625, 0.375], 1e-12));

        let t = top_k_filter(&dist(&[0.2, 0.5, 0.3]), 1).unwrap();
        assert_eq!(t.support(), &[1]);
        assert_eq!(t.probs(), &[1.0]);

        let t = top_k_filter(&d, 3).unwrap();
        assert_eq!(t.to_dense(), d.probs());
        assert!(top_k_filter(&d, 0).is_err());
    }

    #[test]
    fn top_k_ties_prefer_lower_ids() {
        let t = top_k_filter(&dist(&[0.25, 0.25, 0.25, 0.25]), 2).unwrap();
        assert_eq!(t.support(), &[0, 1]);
    }

    #[test]
    fn top_p_examples() {
        let d = dist(&[0.5, 0.3, 0.2]);
        let t = top_p_filter(&d, 0.7).unwrap();
        assert_eq!(t.support(), &[0, 1]);
        assert!(close(t.probs(), &[0.625, 0.375], 1e-12));

        assert_eq!(top_p_filter(&d, 1.0).unwrap().to_dense(), d.probs());
        let one_hot = dist(&[0.0, 1.0, 0.0]);
        for p in [0.01, 0.5, 0.99, 1.0] {
            let t = top_p_filter(&one_hot, p).unwrap();
            assert_eq!(t.to_dense(), vec![0.0, 1.0, 0.0]);
        }
        assert!(top_p_filter(&d, 0.0).is_err());
        assert!(top_p_filter(&d, 1.5).is_err());
    }

    #[test]
    fn top_p_threshold_is_inclusive() {
        // cumulative mass hits exactly 0.75 at the second token
        let t = top_p_filter(&dist(&[0.5, 0.25, 0.25]), 0.75).unwrap();
        assert_eq!(t.support(), &[0, 1]);
    }

    proptest! {
        #[test]
        fn lower_temperature_never_raises_entropy(
            logits in proptest::collection::vec(-10.0f64..10.0, 2..30),
            t1 in 0.05f64..2.0,
            t2 in 0.05f64..2.0,
        ) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let l = LogitVector::new(logits).unwrap();
            let h_lo = apply_temperature(&l, lo).unwrap().entropy();
            let h_hi = apply_temperature(&l, hi).unwrap().entropy();
            prop_assert!(h_lo <= h_hi + 1e-12);
        }
    }
}
