//! TOML configuration of the self-detoxification pipeline.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Condition, RunSettings};
use crate::decoding::Strategy;
use crate::error::{Error, Result};
use crate::ngram::{
    NGramParams, DEFAULT_BLEND_WEIGHT, DEFAULT_DELTA, DEFAULT_LAMBDA, DEFAULT_ORDER,
};
use crate::toxicity::DEFAULT_SATURATION;
use crate::vocab::TokenizerMode;

pub const DEFAULT_TOXIC_CORPUS_MAX_LENGTH: usize = 10;

/// A complete, commented configuration. Relative paths resolve against the
/// directory holding the config file.
pub const CONFIG_FILE_EXAMPLE: &str = r#"# Either a trained model or a corpus to train one from.
corpus = "corpus.txt"
# base_model = "base.ng"
neutral_prompts = "neutral_prompts.jsonl"
toxic_prompts = "toxic_prompts.jsonl"
lexicon = "lexicon.txt"
output_dir = "out"

max_prompts = 500
generations_per_condition = 200
toxic_corpus_per_condition = 200
toxic_corpus_max_length = 10
max_length = 100
temperature = 1.0
blend_weight = 5.0
saturation = 2.0
alpha = 0.0
seed = 1

[[grid]]
strategy = "top_k"
parameter = 10

[[grid]]
strategy = "top_k"
parameter = 20

[[grid]]
strategy = "top_k"
parameter = 40
"#;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    base_model: Option<PathBuf>,
    corpus: Option<PathBuf>,
    tokenizer: Option<TokenizerMode>,
    min_count: Option<usize>,
    order: Option<usize>,
    delta: Option<f64>,
    lambda: Option<f64>,
    neutral_prompts: PathBuf,
    toxic_prompts: PathBuf,
    lexicon: PathBuf,
    output_dir: PathBuf,
    max_prompts: Option<usize>,
    generations_per_condition: usize,
    toxic_corpus_per_condition: Option<usize>,
    toxic_corpus_max_length: Option<usize>,
    max_length: Option<usize>,
    temperature: Option<f64>,
    blend_weight: Option<f64>,
    saturation: Option<f64>,
    alpha: Option<f64>,
    seed: Option<u64>,
    grid: Vec<Condition>,
    toxic_corpus_grid: Option<Vec<Condition>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Trained(PathBuf),
    Corpus {
        path: PathBuf,
        tokenizer: TokenizerMode,
        min_count: usize,
        params: NGramParams,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub model: ModelSource,
    pub neutral_prompts: PathBuf,
    pub toxic_prompts: PathBuf,
    pub lexicon: PathBuf,
    pub output_dir: PathBuf,
    /// Uses only the first `max_prompts` prompts of each set.
    pub max_prompts: Option<usize>,
    /// Top-k conditions evaluated under every re-rank mode.
    pub grid: Vec<Condition>,
    /// Conditions whose generations on toxic prompts form the toxic corpus.
    /// Defaults to `grid`.
    pub toxic_corpus_grid: Vec<Condition>,
    pub toxic_corpus_per_condition: usize,
    /// Token cap for toxic-corpus generations. An order-n model forgets the
    /// prompt within a sentence or two, so long continuations mostly dilute
    /// the corpus with ordinary text.
    pub toxic_corpus_max_length: usize,
    pub blend_weight: f64,
    pub saturation: f64,
    pub settings: RunSettings,
}

impl PipelineConfig {
    pub fn parse(source: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(source)?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        let model = match (raw.base_model, raw.corpus) {
            (Some(m), None) => ModelSource::Trained(resolve(m)),
            (None, Some(c)) => ModelSource::Corpus {
                path: resolve(c),
                tokenizer: raw.tokenizer.unwrap_or(TokenizerMode::Whitespace),
                min_count: raw.min_count.unwrap_or(1),
                params: NGramParams {
                    order: raw.order.unwrap_or(DEFAULT_ORDER),
                    delta: raw.delta.unwrap_or(DEFAULT_DELTA),
                    lambda: raw.lambda.unwrap_or(DEFAULT_LAMBDA),
                },
            },
            _ => {
                return Err(Error::param(
                    "config needs exactly one of base_model and corpus",
                ))
            }
        };
        let toxic_corpus_grid = raw.toxic_corpus_grid.unwrap_or_else(|| raw.grid.clone());
        let config = PipelineConfig {
            model,
            neutral_prompts: resolve(raw.neutral_prompts),
            toxic_prompts: resolve(raw.toxic_prompts),
            lexicon: resolve(raw.lexicon),
            output_dir: resolve(raw.output_dir),
            max_prompts: raw.max_prompts,
            toxic_corpus_per_condition: raw
                .toxic_corpus_per_condition
                .unwrap_or(raw.generations_per_condition),
            toxic_corpus_max_length: raw
                .toxic_corpus_max_length
                .unwrap_or(DEFAULT_TOXIC_CORPUS_MAX_LENGTH),
            grid: raw.grid,
            toxic_corpus_grid,
            blend_weight: raw.blend_weight.unwrap_or(DEFAULT_BLEND_WEIGHT),
            saturation: raw.saturation.unwrap_or(DEFAULT_SATURATION),
            settings: RunSettings {
                samples: raw.generations_per_condition,
                max_length: raw.max_length.unwrap_or(100),
                temperature: raw.temperature.unwrap_or(1.0),
                alpha: raw.alpha.unwrap_or(0.0),
                seed: raw.seed.unwrap_or(0),
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::parse(&source, dir)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.toxic_corpus_grid.is_empty() {
            return Err(Error::param("decoder grids must be non-empty"));
        }
        if let Some(c) = self.grid.iter().find(|c| c.strategy != Strategy::TopK) {
            return Err(Error::RerankStrategy(c.strategy.to_string()));
        }
        if self.settings.samples < 1 || self.toxic_corpus_per_condition < 1 {
            return Err(Error::param("generations per condition must be at least 1"));
        }
        if self.toxic_corpus_max_length < 1 {
            return Err(Error::param("toxic_corpus_max_length must be at least 1"));
        }
        if self.max_prompts == Some(0) {
            return Err(Error::param("max_prompts must be at least 1"));
        }
        if !(self.blend_weight > 0.0 && self.blend_weight.is_finite()) {
            return Err(Error::param("blend_weight must be positive"));
        }
        if !(self.saturation > 0.0 && self.saturation.is_finite()) {
            return Err(Error::param("saturation must be positive"));
        }
        for &c in self.grid.iter().chain(&self.toxic_corpus_grid) {
            self.settings
                .decoder(c, crate::decoding::RerankMode::Off)
                .validate()?;
        }
        if let ModelSource::Corpus { params, .. } = &self.model {
            params.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_parses_with_resolved_paths() {
        let c = PipelineConfig::parse(CONFIG_FILE_EXAMPLE, Path::new("/data")).unwrap();
        assert_eq!(c.grid.len(), 3);
        assert_eq!(c.toxic_corpus_grid, c.grid);
        assert_eq!(c.output_dir, Path::new("/data/out"));
        assert!(
            matches!(&c.model, ModelSource::Corpus { path, .. } if path == Path::new("/data/corpus.txt"))
        );
        assert_eq!(c.settings.samples, 200);
    }

    #[test]
    fn rejects_bad_configs() {
        let dir = Path::new(".");
        let empty_grid = CONFIG_FILE_EXAMPLE
            .split("[[grid]]")
            .next()
            .unwrap()
            .to_string()
            + "grid = []\n";
        assert!(PipelineConfig::parse(&empty_grid, dir).is_err());
        let zero = CONFIG_FILE_EXAMPLE.replace(
            "generations_per_condition = 200",
            "generations_per_condition = 0",
        );
        assert!(PipelineConfig::parse(&zero, dir).is_err());
        let both = format!("base_model = \"m.ng\"\n{CONFIG_FILE_EXAMPLE}");
        assert!(PipelineConfig::parse(&both, dir).is_err());
        let top_p = CONFIG_FILE_EXAMPLE.replacen("\"top_k\"", "\"top_p\"", 1);
        assert!(matches!(
            PipelineConfig::parse(&top_p, dir),
            Err(Error::RerankStrategy(_))
        ));
        let unknown = format!("bogus = 1\n{CONFIG_FILE_EXAMPLE}");
        assert!(matches!(
            PipelineConfig::parse(&unknown, dir),
            Err(Error::Config(_))
        ));
    }
}
