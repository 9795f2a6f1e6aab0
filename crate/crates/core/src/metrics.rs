//! Diversity, repetition, Zipf and coverage metrics over generations.
//!
//! Ratios are fractions in `[0, 1]` unless a function says it returns a
//! percentage.

use std::collections::HashSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoding::GenerationRecord;
use crate::error::{Error, Result};
use crate::logits::LogitProducer;
use crate::par;
use crate::toxicity::Lexicon;
use crate::vocab::{TokenId, Vocabulary};

/// Most frequent types used in the Zipf fit.
pub const ZIPF_MAX_RANK: usize = 5000;
pub const DEFAULT_CORRELATION_CONTEXTS: usize = 1000;

/// Unique n-grams over total n-grams; sequences shorter than `n` score 1.
pub fn distinct_n(tokens: &[TokenId], n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::param("n must be at least 1"));
    }
    if tokens.len() < n {
        return Ok(1.0);
    }
    let windows = tokens.windows(n);
    let total = windows.len();
    let unique: HashSet<&[TokenId]> = windows.collect();
    Ok(unique.len() as f64 / total as f64)
}

/// `1 - distinct_n(tokens, n)`.
pub fn repetition_rate(tokens: &[TokenId], n: usize) -> Result<f64> {
    Ok(1.0 - distinct_n(tokens, n)?)
}

fn mean_per_record(records: &[GenerationRecord], f: impl Fn(&[TokenId]) -> f64) -> f64 {
    records.iter().map(|r| f(&r.generated_tokens)).sum::<f64>() / records.len() as f64
}

/// Mean per-record `(distinct_1 + distinct_2) / 2`, in percent.
pub fn diversity(records: &[GenerationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::param("no records"));
    }
    Ok(100.0 * mean_per_record(records, |t| (distinct(t, 1) + distinct(t, 2)) / 2.0))
}

fn distinct(tokens: &[TokenId], n: usize) -> f64 {
    distinct_n(tokens, n).expect("n >= 1")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub distinct1: f64,
    pub distinct2: f64,
    /// `(distinct1 + distinct2) / 2`.
    pub diversity: f64,
    pub repetition4: f64,
    /// `None` when the pooled generations have fewer than two token types.
    pub zipf_coefficient: Option<f64>,
    pub sample_count: usize,
}

/// Per-record metrics averaged over `records`; the Zipf fit pools all
/// generated tokens.
pub fn metrics_report(records: &[GenerationRecord]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::param("no records"));
    }
    let distinct1 = mean_per_record(records, |t| distinct(t, 1));
    let distinct2 = mean_per_record(records, |t| distinct(t, 2));
    let repetition4 = mean_per_record(records, |t| 1.0 - distinct(t, 4));
    let zipf = zipf_coefficient(
        records
            .iter()
            .flat_map(|r| r.generated_tokens.iter().copied()),
    )
    .ok();
    Ok(MetricsReport {
        distinct1,
        distinct2,
        diversity: (distinct1 + distinct2) / 2.0,
        repetition4,
        zipf_coefficient: zipf,
        sample_count: records.len(),
    })
}

/// Negated least-squares slope of `ln(frequency)` against `ln(rank)` over the
/// top [`ZIPF_MAX_RANK`] types. Zero counts are ignored.
pub fn zipf_coefficient_from_counts(counts: &[f64]) -> Result<f64> {
    let mut freqs: Vec<f64> = counts.iter().copied().filter(|c| *c > 0.0).collect();
    if freqs.len() < 2 {
        return Err(Error::param(format!(
            "need at least 2 token types, got {}",
            freqs.len()
        )));
    }
    freqs.sort_by(|a, b| b.total_cmp(a));
    freqs.truncate(ZIPF_MAX_RANK);
    let xs: Vec<f64> = (1..=freqs.len()).map(|r| (r as f64).ln()).collect();
    let ys: Vec<f64> = freqs.iter().map(|f| f.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(-sxy / sxx)
}

pub fn zipf_coefficient<I: IntoIterator<Item = TokenId>>(tokens: I) -> Result<f64> {
    zipf_coefficient_from_counts(&unigram_counts(tokens))
}

fn unigram_counts<I: IntoIterator<Item = TokenId>>(tokens: I) -> Vec<f64> {
    let mut counts: Vec<f64> = Vec::new();
    for t in tokens {
        let t = t as usize;
        if t >= counts.len() {
            counts.resize(t + 1, 0.0);
        }
        counts[t] += 1.0;
    }
    counts
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va <= 0.0 {
        return Err(Error::ZeroVariance("first vector"));
    }
    if vb <= 0.0 {
        return Err(Error::ZeroVariance("second vector"));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub r: f64,
    /// Normalized corpus unigram frequency, indexed by token id.
    pub frequencies: Vec<f64>,
    /// Model next-token probability averaged over sampled contexts, indexed by
    /// token id.
    pub probabilities: Vec<f64>,
}

/// Pearson correlation between corpus unigram frequency and the model's
/// average next-token probability over `contexts` corpus positions drawn
/// uniformly with `seed`.
pub fn freq_prob_correlation<S: AsRef<[TokenId]> + Sync>(
    corpus: &[S],
    model: &dyn LogitProducer,
    contexts: usize,
    seed: u64,
) -> Result<CorrelationReport> {
    let v = model.vocab_size();
    let mut frequencies = vec![0.0; v];
    let mut positions = Vec::new();
    for (si, seq) in corpus.iter().enumerate() {
        for (pi, &t) in seq.as_ref().iter().enumerate() {
            if t as usize >= v {
                return Err(Error::VocabularyMismatch(format!(
                    "corpus token {t} outside model vocabulary of {v}"
                )));
            }
            frequencies[t as usize] += 1.0;
            positions.push((si, pi));
        }
    }
    if positions.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if contexts < 1 {
        return Err(Error::param("need at least one context"));
    }
    let total = positions.len() as f64;
    for f in &mut frequencies {
        *f /= total;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(usize, usize)> = (0..contexts)
        .map(|_| positions[rng.random_range(0..positions.len())])
        .collect();
    let dists = par::map_ordered(&picks, |_, &(si, pi)| {
        let ctx = &corpus[si].as_ref()[..pi];
        let logits = model.next_token_logits(ctx);
        crate::decoding::softmax(logits.values()).probs().to_vec()
    });
    let mut probabilities = vec![0.0; v];
    for d in &dists {
        for (acc, p) in probabilities.iter_mut().zip(d) {
            *acc += p;
        }
    }
    for p in &mut probabilities {
        *p /= contexts as f64;
    }
    let r = pearson(&frequencies, &probabilities)?;
    Ok(CorrelationReport {
        r,
        frequencies,
        probabilities,
    })
}

/// Percentage of records whose generated span contains a mention-list token.
pub fn coverage_rate(
    records: &[GenerationRecord],
    mentions: &Lexicon,
    vocab: &Vocabulary,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::param("no records"));
    }
    let mask = mentions.mask(vocab);
    let covered = records
        .iter()
        .filter(|r| {
            r.generated_tokens
                .iter()
                .any(|&t| mask.get(t as usize).copied().unwrap_or(false))
        })
        .count();
    Ok(100.0 * covered as f64 / records.len() as f64)
}

/// Two-column `token_index<TAB>value` table with a header row.
pub fn write_plot_tsv<W: Write>(mut w: W, column: &str, values: &[f64]) -> std::io::Result<()> {
    writeln!(w, "token_index\t{column}")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{i}\t{v}")?;
    }
    Ok(())
}
