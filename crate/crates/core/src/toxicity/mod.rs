//! Attribute scoring of generations.

mod lexicon;
mod remote;

use thiserror::Error;

use crate::decoding::GenerationRecord;
use crate::par;
use crate::vocab::{TokenId, Vocabulary};

pub use lexicon::{lexicon_score, Lexicon, LexiconScorer, DEFAULT_SATURATION};
pub use remote::{RemoteConfig, RemoteScorer, SCORER_URL_ENV};

pub const TOXICITY_KEY: &str = "toxicity";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("scorer request timed out")]
    Timeout,
    #[error("scorer returned HTTP {0}")]
    Status(u16),
    #[error("malformed scorer response: {0}")]
    MalformedBody(String),
    #[error("score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("scorer transport error: {0}")]
    Transport(String),
    #[error("{0}")]
    Other(String),
}

impl ScoreError {
    /// Whether retrying the same request might succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            ScoreError::Timeout | ScoreError::Transport(_) => true,
            ScoreError::Status(code) => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ToxicityScore(f64);

impl ToxicityScore {
    pub fn new(value: f64) -> Result<Self, ScoreError> {
        if (0.0..=1.0).contains(&value) {
            Ok(ToxicityScore(value))
        } else {
            Err(ScoreError::OutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub trait Scorer: Sync {
    fn score(&self, tokens: &[TokenId], vocab: &Vocabulary) -> Result<ToxicityScore, ScoreError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, tokens: &[TokenId], vocab: &Vocabulary) -> Result<ToxicityScore, ScoreError> {
        (**self).score(tokens, vocab)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreSummary {
    /// Mean over successfully scored records; `None` if all failed.
    pub mean: Option<f64>,
    pub scored: usize,
    pub failures: usize,
}

/// Scores the generated span of every record, attaching `scores["toxicity"]`
/// on success. Failed records are left unscored and counted.
pub fn score_generations<S: Scorer + ?Sized>(
    records: &mut [GenerationRecord],
    scorer: &S,
    vocab: &Vocabulary,
) -> ScoreSummary {
    let results = par::map_ordered(records, |_, r| scorer.score(&r.generated_tokens, vocab));
    let mut sum = 0.0;
    let mut scored = 0;
    let mut failures = 0;
    for (record, result) in records.iter_mut().zip(results) {
        match result {
            Ok(score) => {
                record
                    .scores
                    .insert(TOXICITY_KEY.to_string(), score.value());
                sum += score.value();
                scored += 1;
            }
            Err(e) => {
                log::warn!("scoring {} failed: {e}", record.prompt_id);
                failures += 1;
            }
        }
    }
    ScoreSummary {
        mean: (scored > 0).then(|| sum / scored as f64),
        scored,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::DecoderConfig;
    use crate::vocab::TokenizerMode;
    use std::collections::BTreeMap;

    struct Fixed(Vec<Result<f64, ScoreError>>);

    impl Scorer for Fixed {
        fn score(&self, tokens: &[TokenId], _: &Vocabulary) -> Result<ToxicityScore, ScoreError> {
            self.0[tokens[0] as usize]
                .clone()
                .and_then(ToxicityScore::new)
        }
    }

    fn records(n: usize) -> Vec<GenerationRecord> {
        (0..n)
            .map(|i| GenerationRecord {
                prompt_id: i.to_string(),
                prompt_tokens: vec![],
                generated_tokens: vec![i as TokenId],
                config: DecoderConfig::default(),
                seed: 0,
                scores: BTreeMap::new(),
            })
            .collect()
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["a"], TokenizerMode::Whitespace).unwrap()
    }

    #[test]
    fn means() {
        let mut r = records(1);
        let s = score_generations(&mut r, &Fixed(vec![Ok(0.3)]), &vocab());
        assert_eq!(s.mean, Some(0.3));
        assert_eq!(r[0].scores[TOXICITY_KEY], 0.3);

        let mut r = records(2);
        let s = score_generations(&mut r, &Fixed(vec![Ok(0.0), Ok(1.0)]), &vocab());
        assert_eq!(s.mean, Some(0.5));
    }

    #[test]
    fn failures_are_excluded_and_counted() {
        let n = 500;
        let scores: Vec<Result<f64, ScoreError>> = (0..n)
            .map(|i| {
                if i % 20 == 7 {
                    Err(ScoreError::Status(503))
                } else {
                    Ok((i % 11) as f64 / 10.0)
                }
            })
            .collect();
        let want: Vec<f64> = scores.iter().filter_map(|s| s.clone().ok()).collect();
        let mut r = records(n);
        let s = score_generations(&mut r, &Fixed(scores), &vocab());
        assert_eq!(s.failures, 25);
        assert_eq!(s.scored, 475);
        let brute = want.iter().sum::<f64>() / want.len() as f64;
        assert!((s.mean.unwrap() - brute).abs() < 1e-12);
        let attached: Vec<f64> = r
            .iter()
            .filter_map(|r| r.scores.get(TOXICITY_KEY).copied())
            .collect();
        assert_eq!(attached, want);
    }

    #[test]
    fn out_of_range_is_an_error_not_a_clamp() {
        assert_eq!(ToxicityScore::new(1.7), Err(ScoreError::OutOfRange(1.7)));
        assert!(ToxicityScore::new(-0.1).is_err());
        assert!(ToxicityScore::new(f64::NAN).is_err());
    }
}
