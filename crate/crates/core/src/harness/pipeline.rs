//! The two-step self-detoxification workflow: infect a copy of the model on
//! its own toxic generations, then re-rank the base model's top-k candidates
//! with it.

use std::io::Write;
use std::path::PathBuf;

use super::config::ModelSource;
use super::{
    build_toxic_corpus, emit_report, sweep, tokenize_prompts, ExperimentReport, PipelineConfig,
    RunSettings, TokenizedPrompt,
};
use crate::decoding::{stream_seed, RerankMode};
use crate::error::{Error, Result};
use crate::ngram::NGramModel;
use crate::toxicity::{Lexicon, LexiconScorer};
use crate::vocab::{build_vocabulary, load_prompts, TokenId, Vocabulary};

pub const BASE_MODEL_FILE: &str = "base.ng";
pub const INFECTED_MODEL_FILE: &str = "infected.ng";
pub const TOXIC_CORPUS_FILE: &str = "toxic_corpus.txt";
pub const REPORT_FILE: &str = "report.csv";

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub base: NGramModel,
    pub infected: NGramModel,
    pub toxic_corpus: Vec<Vec<TokenId>>,
    pub report: ExperimentReport,
    pub scoring_failures: usize,
    /// Every file written, in order.
    pub artifacts: Vec<PathBuf>,
}

/// Runs toxic-corpus construction, infection and evaluation of every grid
/// condition under the off, detoxify and toxify modes on the neutral prompts.
///
/// Artifacts are written to the output directory as soon as they exist, so a
/// failing stage leaves the earlier ones in place. Errors name their stage.
pub fn run_self_detox_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e).in_stage("setup"))?;
    let mut artifacts = Vec::new();

    let base = load_base(&config.model).map_err(|e| e.in_stage("load-model"))?;
    let vocab = base.vocab().clone();
    let (neutral, toxic_prompts, scorer) =
        load_inputs(config, &vocab).map_err(|e| e.in_stage("load-inputs"))?;
    let path = out.join(BASE_MODEL_FILE);
    base.save(&path).map_err(|e| e.in_stage("save-base"))?;
    artifacts.push(path);

    log::info!(
        "building toxic corpus: {} conditions x {} generations",
        config.toxic_corpus_grid.len(),
        config.toxic_corpus_per_condition
    );
    // own seed stream, so corpus and evaluation draws are independent
    let corpus_settings = RunSettings {
        max_length: config.toxic_corpus_max_length,
        seed: stream_seed(config.settings.seed, u64::MAX),
        ..config.settings
    };
    let toxic_corpus = build_toxic_corpus(
        &base,
        &toxic_prompts,
        &config.toxic_corpus_grid,
        config.toxic_corpus_per_condition,
        &corpus_settings,
    )
    .map_err(|e| e.in_stage("toxic-corpus"))?;
    let path = out.join(TOXIC_CORPUS_FILE);
    write_corpus(&path, &toxic_corpus, &vocab).map_err(|e| e.in_stage("toxic-corpus"))?;
    artifacts.push(path);

    let infected = base
        .infect(&toxic_corpus, config.blend_weight)
        .map_err(|e| e.in_stage("infect"))?;
    let path = out.join(INFECTED_MODEL_FILE);
    infected.save(&path).map_err(|e| e.in_stage("infect"))?;
    artifacts.push(path);

    let outcome = sweep(
        &base,
        Some(&infected),
        &neutral,
        &config.grid,
        &[RerankMode::Off, RerankMode::Detoxify, RerankMode::Toxify],
        &config.settings,
        &scorer,
        &vocab,
    )
    .map_err(|e| e.in_stage("evaluate"))?;
    if !outcome.report.is_empty() {
        let path = out.join(REPORT_FILE);
        emit_report(&outcome.report, &path).map_err(|e| e.in_stage("report"))?;
        artifacts.push(path);
        artifacts.extend(
            outcome
                .report
                .write_curves(out)
                .map_err(|e| e.in_stage("report"))?,
        );
    }
    if let Some(f) = outcome.failures.first() {
        return Err(Error::Format(format!(
            "{} of {} conditions failed, first {} {}: {}",
            outcome.failures.len(),
            config.grid.len() * 3,
            f.condition,
            f.rerank_mode,
            f.message
        ))
        .in_stage("evaluate"));
    }
    if outcome.scoring_failures > 0 {
        log::warn!("{} records could not be scored", outcome.scoring_failures);
    }
    Ok(PipelineOutput {
        base,
        infected,
        toxic_corpus,
        report: outcome.report,
        scoring_failures: outcome.scoring_failures,
        artifacts,
    })
}

fn load_base(source: &ModelSource) -> Result<NGramModel> {
    match source {
        ModelSource::Trained(path) => NGramModel::load(path),
        ModelSource::Corpus {
            path,
            tokenizer,
            min_count,
            params,
        } => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            let vocab = build_vocabulary(&lines, *tokenizer, *min_count)?;
            let corpus: Vec<Vec<TokenId>> = lines.iter().map(|l| vocab.tokenize(l)).collect();
            NGramModel::train(vocab, &corpus, *params)
        }
    }
}

fn load_inputs(
    config: &PipelineConfig,
    vocab: &Vocabulary,
) -> Result<(Vec<TokenizedPrompt>, Vec<TokenizedPrompt>, LexiconScorer)> {
    let load = |path: &PathBuf| -> Result<Vec<TokenizedPrompt>> {
        let mut prompts = load_prompts(path)?;
        if prompts.is_empty() {
            return Err(Error::param(format!("{}: no prompts", path.display())));
        }
        if let Some(n) = config.max_prompts {
            prompts.truncate(n);
        }
        Ok(tokenize_prompts(&prompts, vocab))
    };
    let scorer = LexiconScorer::new(Lexicon::load(&config.lexicon)?, config.saturation)?;
    Ok((
        load(&config.neutral_prompts)?,
        load(&config.toxic_prompts)?,
        scorer,
    ))
}

fn write_corpus(path: &PathBuf, corpus: &[Vec<TokenId>], vocab: &Vocabulary) -> Result<()> {
    let mut buf = Vec::new();
    for seq in corpus {
        writeln!(buf, "{}", vocab.detokenize(seq)).map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
