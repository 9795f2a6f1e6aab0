//! `rerank`: train n-gram models, generate with controllable decoding, score
//! and sweep.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors. Data goes
//! to stdout, logs to stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rerank_core::decoding::{RerankMode, Strategy};
use rerank_core::ngram::{DEFAULT_BLEND_WEIGHT, DEFAULT_DELTA, DEFAULT_LAMBDA, DEFAULT_ORDER};
use rerank_core::toxicity::{DEFAULT_SATURATION, SCORER_URL_ENV};
use rerank_core::TokenizerMode;

#[derive(Debug, Parser)]
#[command(
    name = "rerank",
    version,
    about = "Controllable decoding over n-gram language models"
)]
pub struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an n-gram model on a text corpus (one document per line).
    Train(TrainArgs),
    /// Add weighted counts of a toxic corpus to a trained model.
    Infect(InfectArgs),
    /// Continue prompts; prints one JSON object per generation.
    Generate(GenerateArgs),
    /// Score generations read as JSON lines; prints them with scores attached.
    Score(ScoreArgs),
    /// Evaluate a grid of decoding conditions and write a CSV report.
    Sweep(SweepArgs),
    /// Run the full self-detoxification pipeline from a TOML config.
    Pipeline(PipelineArgs),
    /// Validate a report CSV and print it as an aligned table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training corpus, one document per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory; the model is written to `<out>/model.ng`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_tokenizer, default_value = "whitespace")]
    pub tokenizer: TokenizerMode,
    /// Tokens seen fewer times map to <unk>.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub order: usize,
    /// Add-delta smoothing of the unigram base case.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// Interpolation weight of each higher order.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct InfectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Toxic corpus, one document per line, tokenized with the model's vocabulary.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BLEND_WEIGHT)]
    pub blend_weight: f64,
    /// Output directory; the model is written to `<out>/infected.ng`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Sample,
    #[value(name = "top_k")]
    TopK,
    #[value(name = "top_p")]
    TopP,
    Beam,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Sample => Strategy::Sample,
            StrategyArg::TopK => Strategy::TopK,
            StrategyArg::TopP => Strategy::TopP,
            StrategyArg::Beam => Strategy::Beam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RerankArg {
    Off,
    Detoxify,
    Toxify,
}

impl From<RerankArg> for RerankMode {
    fn from(r: RerankArg) -> Self {
        match r {
            RerankArg::Off => RerankMode::Off,
            RerankArg::Detoxify => RerankMode::Detoxify,
            RerankArg::Toxify => RerankMode::Toxify,
        }
    }
}

#[derive(Debug, Args)]
pub struct DecodingArgs {
    #[arg(long, value_enum, default_value = "sample")]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 40)]
    pub k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub p: f64,
    /// Beam size.
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long, default_value_t = 200)]
    pub max_length: usize,
    /// Re-rank the top-k candidates against --toxic-model (top_k only).
    #[arg(long, value_enum, default_value = "off")]
    pub rerank: RerankArg,
    /// Weight of the base logits in the re-ranking distribution.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["prompt", "prompts"])))]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub toxic_model: Option<PathBuf>,
    /// A single prompt text.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Prompt file, one JSON object per line with a "prompt" field.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Generations per prompt.
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub decoding: DecodingArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerArg {
    Lexicon,
    Remote,
}

#[derive(Debug, Args)]
pub struct ScorerArgs {
    #[arg(long, value_enum, default_value = "lexicon")]
    pub scorer: ScorerArg,
    /// Word list for the lexicon scorer.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Lexicon hits at which the score reaches one half.
    #[arg(long, default_value_t = DEFAULT_SATURATION)]
    pub saturation: f64,
    /// Endpoint of the remote scorer.
    #[arg(long, env = SCORER_URL_ENV)]
    pub scorer_url: Option<String>,
    /// Remote request budget per second.
    #[arg(long)]
    pub rate_limit: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Model whose vocabulary tokenizes the generations.
    #[arg(long)]
    pub model: PathBuf,
    /// JSON lines from `rerank generate`; `-` reads stdin.
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
    /// Mention list; prints the coverage rate to stderr.
    #[arg(long)]
    pub mentions: Option<PathBuf>,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Required for detoxify/toxify modes.
    #[arg(long)]
    pub toxic_model: Option<PathBuf>,
    #[arg(long)]
    pub prompts: PathBuf,
    /// Comma-separated `strategy=parameter` conditions.
    #[arg(long, default_value = commands::DEFAULT_GRID)]
    pub grid: String,
    /// Comma-separated re-rank modes evaluated per condition.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "off")]
    pub rerank: Vec<RerankArg>,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 100)]
    pub max_length: usize,
    /// Temperature for the strategies that do not sweep it.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for report.csv and curve files.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub input: PathBuf,
}

fn parse_tokenizer(s: &str) -> Result<TokenizerMode, String> {
    s.parse().map_err(|e: rerank_core::Error| e.to_string())
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<rerank_core::Error> for Failure {
    fn from(e: rerank_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
