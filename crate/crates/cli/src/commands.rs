use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use rerank_core::decoding::{DecoderConfig, GenerationRecord, RerankMode, Strategy};
use rerank_core::harness::{
    emit_report, parse_report, run_condition, run_self_detox_pipeline, sweep, tokenize_prompts,
    write_report, Condition, PipelineConfig, RunSettings, TokenizedPrompt,
};
use rerank_core::metrics::coverage_rate;
use rerank_core::toxicity::{
    score_generations, Lexicon, LexiconScorer, RemoteConfig, RemoteScorer, Scorer, TOXICITY_KEY,
};
use rerank_core::vocab::{build_vocabulary, load_prompts, TokenId};
use rerank_core::{Error, LogitProducer, NGramModel, NGramParams};
use serde_json::{json, Value};

use crate::{
    Command, Failure, GenerateArgs, InfectArgs, PipelineArgs, ReportArgs, RerankArg, ScoreArgs,
    ScorerArg, ScorerArgs, SweepArgs, TrainArgs,
};

pub const DEFAULT_GRID: &str =
    "sample=0.7,sample=1.0,top_k=10,top_k=20,top_k=40,top_p=0.5,top_p=0.7,top_p=0.9,beam=1,beam=5";

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Train(a) => train(a),
        Command::Infect(a) => infect(a),
        Command::Generate(a) => generate(a),
        Command::Score(a) => score(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Report(a) => report(a),
    }
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn train(a: TrainArgs) -> Outcome {
    let params = NGramParams {
        order: a.order,
        delta: a.delta,
        lambda: a.lambda,
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    if a.min_count < 1 {
        return Err(usage("--min-count must be at least 1"));
    }
    let lines = read_lines(&a.corpus)?;
    let vocab = build_vocabulary(&lines, a.tokenizer, a.min_count)?;
    let corpus: Vec<Vec<TokenId>> = lines.iter().map(|l| vocab.tokenize(l)).collect();
    let model = NGramModel::train(vocab, &corpus, params)?;
    create_out(&a.out)?;
    let path = a.out.join("model.ng");
    model.save(&path)?;
    log::info!(
        "trained order-{} model with {} tokens and {} counts",
        params.order,
        model.vocab().len(),
        model.num_counts()
    );
    println!("{}", path.display());
    Ok(())
}

fn infect(a: InfectArgs) -> Outcome {
    if !(a.blend_weight > 0.0 && a.blend_weight.is_finite()) {
        return Err(usage("--blend-weight must be positive"));
    }
    let base = NGramModel::load(&a.model)?;
    let corpus: Vec<Vec<TokenId>> = read_lines(&a.corpus)?
        .iter()
        .map(|l| base.vocab().tokenize(l))
        .collect();
    let infected = base.infect(&corpus, a.blend_weight)?;
    create_out(&a.out)?;
    let path = a.out.join("infected.ng");
    infected.save(&path)?;
    println!("{}", path.display());
    Ok(())
}

fn decoder_config(a: &crate::DecodingArgs) -> Result<DecoderConfig, Failure> {
    let config = DecoderConfig {
        strategy: a.strategy.into(),
        temperature: a.temperature,
        k: a.k,
        p: a.p,
        beam_size: a.beam,
        max_length: a.max_length,
        rerank: a.rerank.into(),
        alpha: a.alpha,
        seed: 0,
    };
    config.validate().map_err(|e| match e {
        Error::RerankStrategy(s) => usage(format!(
            "--rerank requires --strategy top_k (got {s}); re-ranking is defined over the top-k set"
        )),
        other => usage(other.to_string()),
    })?;
    Ok(config)
}

fn load_toxic(path: Option<&Path>, base: &NGramModel) -> anyhow::Result<Option<NGramModel>> {
    let Some(path) = path else { return Ok(None) };
    let toxic = NGramModel::load(path)?;
    if toxic.vocab() != base.vocab() {
        return Err(anyhow!(
            "{} does not share the base model's vocabulary",
            path.display()
        ));
    }
    Ok(Some(toxic))
}

fn generate(a: GenerateArgs) -> Outcome {
    let decoder = decoder_config(&a.decoding)?;
    if decoder.rerank != RerankMode::Off && a.toxic_model.is_none() {
        return Err(usage(format!(
            "--rerank {} requires --toxic-model",
            decoder.rerank
        )));
    }
    if a.samples < 1 {
        return Err(usage("--samples must be at least 1"));
    }
    let base = NGramModel::load(&a.model)?;
    let toxic = load_toxic(a.toxic_model.as_deref(), &base)?;
    let prompts: Vec<TokenizedPrompt> = match (&a.prompt, &a.prompts) {
        (Some(text), _) => vec![TokenizedPrompt {
            id: "prompt".into(),
            tokens: base.vocab().tokenize(text),
        }],
        (None, Some(path)) => tokenize_prompts(&load_prompts(path)?, base.vocab()),
        (None, None) => unreachable!("clap enforces the input group"),
    };
    if prompts.is_empty() {
        return Err(Failure::Runtime(anyhow!("no prompts")));
    }
    let settings = RunSettings {
        samples: prompts.len() * a.samples,
        seed: a.seed,
        ..RunSettings::default()
    };
    let records = run_condition(
        &base,
        toxic.as_ref().map(|t| t as &dyn LogitProducer),
        &prompts,
        decoder,
        &settings,
    )?;
    let vocab = base.vocab();
    let mut out = std::io::stdout().lock();
    for r in &records {
        let line = json!({
            "prompt_id": r.prompt_id,
            "prompt": vocab.detokenize(&r.prompt_tokens),
            "generation": vocab.detokenize(&r.generated_tokens),
            "seed": r.seed,
        });
        writeln!(out, "{line}").context("writing stdout")?;
    }
    Ok(())
}

fn build_scorer(a: &ScorerArgs) -> Result<Box<dyn Scorer>, Failure> {
    match a.scorer {
        ScorerArg::Lexicon => {
            let path = a
                .lexicon
                .as_ref()
                .ok_or_else(|| usage("--scorer lexicon requires --lexicon"))?;
            let lexicon = Lexicon::load(path)?;
            let scorer =
                LexiconScorer::new(lexicon, a.saturation).map_err(|e| usage(e.to_string()))?;
            Ok(Box::new(scorer))
        }
        ScorerArg::Remote => {
            let url =
                RemoteScorer::endpoint_from_env(a.scorer_url.as_deref()).ok_or_else(|| {
                    usage(format!(
                        "--scorer remote requires --scorer-url or {}",
                        rerank_core::toxicity::SCORER_URL_ENV
                    ))
                })?;
            let mut config = RemoteConfig::new(url);
            if let Some(rps) = a.rate_limit {
                if !(rps > 0.0 && rps.is_finite()) {
                    return Err(usage("--rate-limit must be positive"));
                }
                config.requests_per_second = Some(rps);
            }
            Ok(Box::new(RemoteScorer::new(config)))
        }
    }
}

fn score(a: ScoreArgs) -> Outcome {
    let scorer = build_scorer(&a.scorer)?;
    let model = NGramModel::load(&a.model)?;
    let vocab = model.vocab();
    let reader: Box<dyn BufRead> = if a.input == Path::new("-") {
        Box::new(std::io::stdin().lock())
    } else {
        let f = std::fs::File::open(&a.input)
            .with_context(|| format!("opening {}", a.input.display()))?;
        Box::new(std::io::BufReader::new(f))
    };
    let mut objects = Vec::new();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.context("reading input")?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: not JSON", a.input.display(), i + 1))?;
        let text = obj
            .get("generation")
            .and_then(Value::as_str)
            .ok_or_else(|| anyhow!("{}:{}: missing \"generation\"", a.input.display(), i + 1))?;
        records.push(GenerationRecord {
            prompt_id: obj
                .get("prompt_id")
                .and_then(Value::as_str)
                .unwrap_or("")
                .to_string(),
            prompt_tokens: Vec::new(),
            generated_tokens: vocab.tokenize(text),
            config: DecoderConfig::default(),
            seed: obj.get("seed").and_then(Value::as_u64).unwrap_or(0),
            scores: Default::default(),
        });
        objects.push(obj);
    }
    if records.is_empty() {
        return Err(Failure::Runtime(anyhow!("no generations to score")));
    }
    let summary = score_generations(&mut records, scorer.as_ref(), vocab);
    let mut out = std::io::stdout().lock();
    for (mut obj, r) in objects.into_iter().zip(&records) {
        obj[TOXICITY_KEY] = r
            .scores
            .get(TOXICITY_KEY)
            .map_or(Value::Null, |&s| json!(s));
        writeln!(out, "{obj}").context("writing stdout")?;
    }
    match summary.mean {
        Some(m) => eprintln!(
            "mean toxicity {m:.4} over {} records ({} failed)",
            summary.scored, summary.failures
        ),
        None => {
            return Err(Failure::Runtime(anyhow!(
                "all {} records failed scoring",
                summary.failures
            )))
        }
    }
    if let Some(path) = &a.mentions {
        let mentions = Lexicon::load(path)?;
        eprintln!(
            "coverage rate {:.1}%",
            coverage_rate(&records, &mentions, vocab)?
        );
    }
    Ok(())
}

fn parse_grid(list: &str) -> Result<Vec<Condition>, Failure> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (name, value) = item
                .trim()
                .split_once('=')
                .ok_or_else(|| usage(format!("--grid entry {item:?} is not strategy=parameter")))?;
            let strategy: Strategy = name.parse().map_err(|e: Error| usage(e.to_string()))?;
            let parameter: f64 = value
                .parse()
                .map_err(|_| usage(format!("--grid entry {item:?} has a non-numeric parameter")))?;
            Ok(Condition::new(strategy, parameter))
        })
        .collect()
}

fn run_sweep(a: SweepArgs) -> Outcome {
    let grid = parse_grid(&a.grid)?;
    if grid.is_empty() {
        return Err(usage("--grid is empty"));
    }
    let modes: Vec<RerankMode> = a.rerank.iter().map(|&m| m.into()).collect();
    if a.rerank.iter().any(|&m| m != RerankArg::Off) {
        if a.toxic_model.is_none() {
            return Err(usage("--rerank detoxify/toxify requires --toxic-model"));
        }
        if let Some(c) = grid.iter().find(|c| c.strategy != Strategy::TopK) {
            return Err(usage(format!(
                "--rerank requires top_k conditions only, --grid has {c}"
            )));
        }
    }
    let settings = RunSettings {
        samples: a.samples,
        max_length: a.max_length,
        temperature: a.temperature,
        alpha: a.alpha,
        seed: a.seed,
    };
    for &c in &grid {
        settings
            .decoder(c, RerankMode::Off)
            .validate()
            .map_err(|e| usage(format!("--grid {c}: {e}")))?;
    }
    if a.samples < 1 {
        return Err(usage("--samples must be at least 1"));
    }
    let scorer = build_scorer(&a.scorer)?;
    let base = NGramModel::load(&a.model)?;
    let toxic = load_toxic(a.toxic_model.as_deref(), &base)?;
    let prompts = tokenize_prompts(&load_prompts(&a.prompts)?, base.vocab());
    let outcome = sweep(
        &base,
        toxic.as_ref().map(|t| t as &dyn LogitProducer),
        &prompts,
        &grid,
        &modes,
        &settings,
        scorer.as_ref(),
        base.vocab(),
    )?;
    for f in &outcome.failures {
        eprintln!(
            "condition {} {} failed: {}",
            f.condition, f.rerank_mode, f.message
        );
    }
    if outcome.scoring_failures > 0 {
        eprintln!("{} records could not be scored", outcome.scoring_failures);
    }
    if outcome.report.is_empty() {
        return Err(Failure::Runtime(anyhow!("every condition failed")));
    }
    create_out(&a.out)?;
    emit_report(&outcome.report, &a.out.join("report.csv"))?;
    outcome.report.write_curves(&a.out)?;
    write_report(std::io::stdout().lock(), &outcome.report)?;
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Outcome {
    let mut config = PipelineConfig::load(&a.config)?;
    if let Some(out) = a.out {
        config.output_dir = out;
    }
    if let Some(seed) = a.seed {
        config.settings.seed = seed;
    }
    let output = run_self_detox_pipeline(&config)?;
    for path in &output.artifacts {
        eprintln!("wrote {}", path.display());
    }
    write_report(std::io::stdout().lock(), &output.report)?;
    Ok(())
}

fn report(a: ReportArgs) -> Outcome {
    let report = parse_report(&a.input)?;
    let header = [
        "strategy",
        "parameter",
        "mode",
        "toxicity",
        "dist-1",
        "dist-2",
        "div",
        "rep-4",
        "n",
    ];
    let rows: Vec<[String; 9]> = report
        .rows
        .iter()
        .map(|r| {
            [
                r.strategy.clone(),
                format!("{}", r.parameter),
                r.rerank_mode.clone(),
                format!("{:.4}", r.mean_toxicity),
                format!("{:.4}", r.distinct1),
                format!("{:.4}", r.distinct2),
                format!("{:.4}", r.diversity),
                format!("{:.4}", r.repetition4),
                r.sample_count.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].len())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = std::io::stdout().lock();
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(out, "{}", line(header.to_vec())).context("writing stdout")?;
    for r in &rows {
        writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))
            .context("writing stdout")?;
    }
    Ok(())
}
