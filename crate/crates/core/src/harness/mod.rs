//! Experiment pipelines: toxic-corpus construction, infection, evaluation
//! sweeps and report files.
//!
//! Every condition draws the same per-sample seeds: sample `j` continues
//! prompt `j mod |prompts|` with seed `stream_seed(seed, j)`. Modes and
//! conditions therefore differ only in the decoder, never in the randomness.

mod config;
mod pipeline;
mod report;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::decoding::{
    generate, stream_seed, DecoderConfig, GenerationRecord, RerankMode, Strategy,
};
use crate::error::{Error, Result};
use crate::logits::LogitProducer;
use crate::metrics::metrics_report;
use crate::par;
use crate::toxicity::{score_generations, Scorer};
use crate::vocab::{PromptRecord, TokenId, Vocabulary};

pub use config::{
    ModelSource, PipelineConfig, CONFIG_FILE_EXAMPLE, DEFAULT_TOXIC_CORPUS_MAX_LENGTH,
};
pub use pipeline::{
    run_self_detox_pipeline, PipelineOutput, BASE_MODEL_FILE, INFECTED_MODEL_FILE, REPORT_FILE,
    TOXIC_CORPUS_FILE,
};
pub use report::{
    emit_report, parse_report, quantize, read_report, write_curve, write_report, ExperimentReport,
    ReportRow, REPORT_HEADER,
};

/// One decoder setting of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub strategy: Strategy,
    pub parameter: f64,
}

impl Condition {
    pub fn new(strategy: Strategy, parameter: f64) -> Self {
        Condition {
            strategy,
            parameter,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.strategy, self.parameter)
    }
}

/// Settings shared by every condition of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub samples: usize,
    pub max_length: usize,
    /// Temperature for the strategies that do not sweep it.
    pub temperature: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            samples: 200,
            max_length: 100,
            temperature: 1.0,
            alpha: 0.0,
            seed: 0,
        }
    }
}

impl RunSettings {
    pub fn decoder(&self, condition: Condition, rerank: RerankMode) -> DecoderConfig {
        DecoderConfig {
            temperature: self.temperature,
            max_length: self.max_length,
            alpha: self.alpha,
            rerank,
            ..DecoderConfig::default()
        }
        .with_parameter(condition.strategy, condition.parameter)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedPrompt {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

pub fn tokenize_prompts(prompts: &[PromptRecord], vocab: &Vocabulary) -> Vec<TokenizedPrompt> {
    prompts
        .iter()
        .map(|p| TokenizedPrompt {
            id: p.id.clone(),
            tokens: vocab.tokenize(&p.text),
        })
        .collect()
}

/// Generates `settings.samples` continuations under one decoder setting.
pub fn run_condition(
    base: &dyn LogitProducer,
    toxic: Option<&dyn LogitProducer>,
    prompts: &[TokenizedPrompt],
    decoder: DecoderConfig,
    settings: &RunSettings,
) -> Result<Vec<GenerationRecord>> {
    if prompts.is_empty() {
        return Err(Error::param("no prompts"));
    }
    if settings.samples < 1 {
        return Err(Error::param("need at least one sample per condition"));
    }
    decoder.validate()?;
    let jobs: Vec<usize> = (0..settings.samples).collect();
    par::map_ordered(&jobs, |_, &j| {
        let prompt = &prompts[j % prompts.len()];
        let config = DecoderConfig {
            seed: stream_seed(settings.seed, j as u64),
            ..decoder
        };
        generate(base, toxic, &prompt.id, &prompt.tokens, &config)
    })
    .into_iter()
    .collect()
}

/// Generations of `base` on toxic prompts under every grid condition,
/// concatenated in grid order. Prompts are excluded from the sequences.
pub fn build_toxic_corpus(
    base: &dyn LogitProducer,
    toxic_prompts: &[TokenizedPrompt],
    grid: &[Condition],
    per_condition: usize,
    settings: &RunSettings,
) -> Result<Vec<Vec<TokenId>>> {
    if grid.is_empty() {
        return Err(Error::param("empty decoder grid"));
    }
    let settings = RunSettings {
        samples: per_condition,
        ..*settings
    };
    let mut corpus = Vec::with_capacity(grid.len() * per_condition);
    for &condition in grid {
        let decoder = settings.decoder(condition, RerankMode::Off);
        let records = run_condition(base, None, toxic_prompts, decoder, &settings)?;
        corpus.extend(records.into_iter().map(|r| r.generated_tokens));
    }
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionFailure {
    pub condition: Condition,
    pub rerank_mode: RerankMode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Rows in grid order, modes varying fastest; values quantized to report
    /// precision.
    pub report: ExperimentReport,
    pub failures: Vec<ConditionFailure>,
    /// Records left unscored across all successful conditions.
    pub scoring_failures: usize,
}

/// Evaluates every grid condition under every mode in `modes`.
///
/// A condition whose generation fails, or whose records all fail scoring, is
/// recorded in `failures` and the sweep moves on.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    base: &dyn LogitProducer,
    toxic: Option<&dyn LogitProducer>,
    prompts: &[TokenizedPrompt],
    grid: &[Condition],
    modes: &[RerankMode],
    settings: &RunSettings,
    scorer: &dyn Scorer,
    vocab: &Vocabulary,
) -> Result<SweepOutcome> {
    if grid.is_empty() {
        return Err(Error::param("empty decoder grid"));
    }
    if modes.is_empty() {
        return Err(Error::param("no rerank modes"));
    }
    if prompts.is_empty() {
        return Err(Error::param("no prompts"));
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut scoring_failures = 0;
    for &condition in grid {
        for &mode in modes {
            let decoder = settings.decoder(condition, mode);
            let fail = |message: String| ConditionFailure {
                condition,
                rerank_mode: mode,
                message,
            };
            let mut records = match run_condition(base, toxic, prompts, decoder, settings) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("{condition} {mode}: {e}");
                    failures.push(fail(e.to_string()));
                    continue;
                }
            };
            let summary = score_generations(&mut records, scorer, vocab);
            scoring_failures += summary.failures;
            let Some(mean) = summary.mean else {
                failures.push(fail(format!(
                    "all {} records failed scoring",
                    summary.failures
                )));
                continue;
            };
            let metrics = metrics_report(&records)?;
            log::info!(
                "{condition} {mode}: toxicity {mean:.4} over {} samples",
                summary.scored
            );
            rows.push(
                ReportRow {
                    strategy: condition.strategy.to_string(),
                    parameter: condition.parameter,
                    rerank_mode: mode.to_string(),
                    mean_toxicity: mean,
                    distinct1: metrics.distinct1,
                    distinct2: metrics.distinct2,
                    diversity: metrics.diversity,
                    repetition4: metrics.repetition4,
                    sample_count: summary.scored,
                }
                .quantized(),
            );
        }
    }
    Ok(SweepOutcome {
        report: ExperimentReport::new(rows),
        failures,
        scoring_failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::producers::RandomModel;
    use crate::toxicity::{Lexicon, LexiconScorer, ScoreError, ToxicityScore};
    use crate::vocab::TokenizerMode;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["a", "b", "c", "bad"], TokenizerMode::Whitespace).unwrap()
    }

    fn prompts() -> Vec<TokenizedPrompt> {
        tokenize_prompts(
            &[PromptRecord {
                id: "p".into(),
                text: "a b".into(),
                toxicity_hint: None,
            }],
            &vocab(),
        )
    }

    fn settings(samples: usize) -> RunSettings {
        RunSettings {
            samples,
            max_length: 8,
            seed: 3,
            ..Default::default()
        }
    }

    fn scorer() -> LexiconScorer {
        LexiconScorer::new(Lexicon::new("l", ["bad"]).unwrap(), 2.0).unwrap()
    }

    #[test]
    fn toxic_corpus_size() {
        let m = RandomModel::new(5, 1, None);
        let grid = [Condition::new(Strategy::TopK, 3.0)];
        let c = build_toxic_corpus(&m, &prompts(), &grid, 2, &settings(0)).unwrap();
        assert_eq!(c.len(), 2);
        let grid = [
            Condition::new(Strategy::TopK, 3.0),
            Condition::new(Strategy::Beam, 2.0),
        ];
        let again = build_toxic_corpus(&m, &prompts(), &grid, 3, &settings(0)).unwrap();
        assert_eq!(again.len(), 6);
        assert_eq!(
            build_toxic_corpus(&m, &prompts(), &grid, 3, &settings(0)).unwrap(),
            again
        );
    }

    #[test]
    fn one_condition_one_row() {
        let m = RandomModel::new(5, 1, None);
        let out = sweep(
            &m,
            None,
            &prompts(),
            &[Condition::new(Strategy::TopP, 0.9)],
            &[RerankMode::Off],
            &settings(10),
            &scorer(),
            &vocab(),
        )
        .unwrap();
        assert_eq!(out.report.len(), 1);
        assert_eq!(out.report.rows[0].sample_count, 10);
        assert_eq!(out.report.rows[0].strategy, "top_p");
    }

    #[test]
    fn failed_condition_is_recorded_and_sweep_continues() {
        let m = RandomModel::new(5, 1, None);
        let grid = [
            Condition::new(Strategy::TopP, 0.9),
            Condition::new(Strategy::TopK, 2.0),
        ];
        // detoxify without a toxic model fails on the top-p condition (wrong
        // strategy) and on top-k (no toxic model) but off still runs
        let out = sweep(
            &m,
            None,
            &prompts(),
            &grid,
            &[RerankMode::Off, RerankMode::Detoxify],
            &settings(4),
            &scorer(),
            &vocab(),
        )
        .unwrap();
        assert_eq!(out.report.len(), 2);
        assert_eq!(out.failures.len(), 2);
        assert!(matches!(out.failures[0].rerank_mode, RerankMode::Detoxify));
    }

    struct Flaky;

    impl Scorer for Flaky {
        fn score(
            &self,
            tokens: &[TokenId],
            _: &Vocabulary,
        ) -> std::result::Result<ToxicityScore, ScoreError> {
            if tokens.first() == Some(&0) {
                Err(ScoreError::Timeout)
            } else {
                ToxicityScore::new(0.5)
            }
        }
    }

    #[test]
    fn scoring_failures_are_counted() {
        let m = RandomModel::new(5, 2, None);
        let out = sweep(
            &m,
            None,
            &prompts(),
            &[Condition::new(Strategy::Sample, 1.0)],
            &[RerankMode::Off],
            &settings(200),
            &Flaky,
            &vocab(),
        )
        .unwrap();
        let row = &out.report.rows[0];
        assert!(out.scoring_failures > 0);
        assert_eq!(row.sample_count + out.scoring_failures, 200);
        assert_eq!(row.mean_toxicity, 0.5);
    }

    #[test]
    fn empty_inputs_are_errors() {
        let m = RandomModel::new(5, 1, None);
        let s = scorer();
        let v = vocab();
        assert!(sweep(
            &m,
            None,
            &prompts(),
            &[],
            &[RerankMode::Off],
            &settings(1),
            &s,
            &v
        )
        .is_err());
        assert!(build_toxic_corpus(
            &m,
            &[],
            &[Condition::new(Strategy::Sample, 1.0)],
            1,
            &settings(1)
        )
        .is_err());
    }
}
