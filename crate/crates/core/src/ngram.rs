//! Interpolated backoff n-gram language model.
//!
//! The unigram level is add-delta smoothed, so every token has positive
//! probability in every context:
//!
//! ```text
//! P_1(x)     = (c(x) + delta) / (N + delta * |V|)
//! P_m(x | c) = lambda * c(c, x) / c(c) + (1 - lambda) * P_{m-1}(x | c')   if c(c) > 0
//!            = P_{m-1}(x | c')                                            otherwise
//! ```
//!
//! where `c'` drops the oldest token of `c`. Logits are natural-log
//! probabilities.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::logits::{LogitProducer, LogitVector};
use crate::vocab::{field, next_line, parse_fields, TokenId, Vocabulary};

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.7;
pub const DEFAULT_BLEND_WEIGHT: f64 = 5.0;

const MODEL_MAGIC: &str = "NGRAM v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NGramParams {
    pub order: usize,
    pub delta: f64,
    pub lambda: f64,
}

impl Default for NGramParams {
    fn default() -> Self {
        NGramParams {
            order: DEFAULT_ORDER,
            delta: DEFAULT_DELTA,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl NGramParams {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::param("order must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::param(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::param(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextStats {
    total: f64,
    next: HashMap<TokenId, f64>,
}

impl ContextStats {
    fn add(&mut self, token: TokenId, weight: f64) {
        *self.next.entry(token).or_insert(0.0) += weight;
        self.total += weight;
    }
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    params: NGramParams,
    vocab: Vocabulary,
    /// `tables[m]` holds contexts of length `m`.
    tables: Vec<HashMap<Vec<TokenId>, ContextStats>>,
    unigram: Vec<f64>,
}

impl NGramModel {
    /// A model with no observations: every distribution is uniform.
    pub fn empty(vocab: Vocabulary, params: NGramParams) -> Result<Self> {
        params.validate()?;
        let mut model = NGramModel {
            params,
            vocab,
            tables: vec![HashMap::new(); params.order],
            unigram: Vec::new(),
        };
        model.refresh();
        Ok(model)
    }

    pub fn train<I, S>(vocab: Vocabulary, corpus: I, params: NGramParams) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[TokenId]>,
    {
        let mut model = Self::empty(vocab, params)?;
        let mut any = false;
        for seq in corpus {
            let seq = seq.as_ref();
            any |= !seq.is_empty();
            model.observe(seq, 1.0)?;
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        model.refresh();
        Ok(model)
    }

    /// Returns a copy of `self` whose counts are `self.counts + blend_weight *
    /// counts(toxic_corpus)`.
    pub fn infect<I, S>(&self, toxic_corpus: I, blend_weight: f64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[TokenId]>,
    {
        if !(blend_weight > 0.0 && blend_weight.is_finite()) {
            return Err(Error::param(format!(
                "blend weight must be positive, got {blend_weight}"
            )));
        }
        let toxic = Self::train(self.vocab.clone(), toxic_corpus, self.params)?;
        self.blend(&toxic, blend_weight)
    }

    /// Adds `weight * other.counts` to a copy of `self`.
    pub fn blend(&self, other: &NGramModel, weight: f64) -> Result<Self> {
        if other.vocab != self.vocab {
            return Err(Error::VocabularyMismatch(format!(
                "base has {} tokens, other has {}",
                self.vocab.len(),
                other.vocab.len()
            )));
        }
        if other.params.order != self.params.order {
            return Err(Error::VocabularyMismatch(format!(
                "order {} vs {}",
                self.params.order, other.params.order
            )));
        }
        let mut out = self.clone();
        for (m, table) in other.tables.iter().enumerate() {
            let mut contexts: Vec<_> = table.iter().collect();
            contexts.sort_by(|a, b| a.0.cmp(b.0));
            for (ctx, stats) in contexts {
                let entry = out.tables[m].entry(ctx.clone()).or_default();
                let mut next: Vec<_> = stats.next.iter().collect();
                next.sort_by_key(|(t, _)| **t);
                for (&tok, &w) in next {
                    entry.add(tok, weight * w);
                }
            }
        }
        out.refresh();
        Ok(out)
    }

    fn observe(&mut self, seq: &[TokenId], weight: f64) -> Result<()> {
        let n = self.vocab.len();
        if let Some(bad) = seq.iter().find(|&&t| t as usize >= n) {
            return Err(Error::param(format!(
                "token id {bad} outside vocabulary of {n}"
            )));
        }
        for i in 0..seq.len() {
            for m in 0..self.params.order.min(i + 1) {
                self.tables[m]
                    .entry(seq[i - m..i].to_vec())
                    .or_default()
                    .add(seq[i], weight);
            }
        }
        Ok(())
    }

    fn refresh(&mut self) {
        let v = self.vocab.len() as f64;
        let delta = self.params.delta;
        let uni = self.tables[0].get(&[][..]);
        let total = uni.map_or(0.0, |s| s.total);
        let denom = total + delta * v;
        self.unigram = (0..self.vocab.len() as TokenId)
            .map(|t| {
                let c = uni.and_then(|s| s.next.get(&t)).copied().unwrap_or(0.0);
                (c + delta) / denom
            })
            .collect();
    }

    pub fn params(&self) -> NGramParams {
        self.params
    }

    pub fn order(&self) -> usize {
        self.params.order
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Weight of `token` after `context` (of any length below the order).
    pub fn count(&self, context: &[TokenId], token: TokenId) -> f64 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(context))
            .and_then(|s| s.next.get(&token))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn context_total(&self, context: &[TokenId]) -> f64 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(context))
            .map_or(0.0, |s| s.total)
    }

    /// Number of (context, token) cells over all orders.
    pub fn num_counts(&self) -> usize {
        self.tables
            .iter()
            .flat_map(|t| t.values())
            .map(|s| s.next.len())
            .sum()
    }

    /// All contexts with a positive total, shortest first.
    pub fn contexts(&self) -> Vec<Vec<TokenId>> {
        let mut out: Vec<Vec<TokenId>> = self
            .tables
            .iter()
            .flat_map(|t| {
                t.iter()
                    .filter(|(_, s)| s.total > 0.0)
                    .map(|(c, _)| c.clone())
            })
            .collect();
        out.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
        out
    }

    /// Sorted `(context, token, weight)` cells; the on-disk order.
    pub fn cells(&self) -> Vec<(Vec<TokenId>, TokenId, f64)> {
        let mut out = Vec::with_capacity(self.num_counts());
        for table in &self.tables {
            let mut contexts: Vec<_> = table.iter().collect();
            contexts.sort_by(|a, b| a.0.cmp(b.0));
            for (ctx, stats) in contexts {
                let mut next: Vec<_> = stats.next.iter().collect();
                next.sort_by_key(|(t, _)| **t);
                out.extend(next.into_iter().map(|(&t, &w)| (ctx.clone(), t, w)));
            }
        }
        out
    }

    fn effective_context<'a>(&self, context: &'a [TokenId]) -> &'a [TokenId] {
        let keep = (self.params.order - 1).min(context.len());
        &context[context.len() - keep..]
    }

    pub fn next_token_probs(&self, context: &[TokenId]) -> Vec<f64> {
        let ctx = self.effective_context(context);
        let lambda = self.params.lambda;
        let mut dist = self.unigram.clone();
        for m in 1..=ctx.len() {
            let c = &ctx[ctx.len() - m..];
            let Some(stats) = self.tables[m].get(c) else {
                break;
            };
            if stats.total <= 0.0 {
                break;
            }
            for p in dist.iter_mut() {
                *p *= 1.0 - lambda;
            }
            for (&tok, &w) in &stats.next {
                dist[tok as usize] += lambda * (w / stats.total);
            }
        }
        dist
    }

    /// Probability of a single token; the same recursion as
    /// [`next_token_probs`](Self::next_token_probs) without building the vector.
    pub fn token_prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        let ctx = self.effective_context(context);
        let lambda = self.params.lambda;
        let mut p = self.unigram[token as usize];
        for m in 1..=ctx.len() {
            let c = &ctx[ctx.len() - m..];
            let Some(stats) = self.tables[m].get(c) else {
                break;
            };
            if stats.total <= 0.0 {
                break;
            }
            p *= 1.0 - lambda;
            if let Some(&w) = stats.next.get(&token) {
                p += lambda * (w / stats.total);
            }
        }
        p
    }

    pub fn sequence_log_likelihood(&self, seq: &[TokenId]) -> f64 {
        (0..seq.len())
            .map(|i| self.token_prob(&seq[..i], seq[i]).ln())
            .sum()
    }

    pub fn corpus_log_likelihood<S: AsRef<[TokenId]>>(&self, corpus: &[S]) -> f64 {
        corpus
            .iter()
            .map(|s| self.sequence_log_likelihood(s.as_ref()))
            .sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{MODEL_MAGIC} order={} delta={} lambda={} vocab_size={}",
            self.params.order,
            self.params.delta,
            self.params.lambda,
            self.vocab.len()
        )?;
        self.vocab.write_to(&mut w)?;
        let mut line = String::new();
        for (ctx, tok, weight) in self.cells() {
            use std::fmt::Write as _;
            line.clear();
            let _ = write!(line, "{}", ctx.len() + 1);
            for c in &ctx {
                let _ = write!(line, " {c}");
            }
            let _ = write!(line, " {tok} {weight}");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = next_line(&mut lines)?
            .ok_or_else(|| Error::Format(format!("empty model file: expected {MODEL_MAGIC:?}")))?;
        let rest = header.strip_prefix(MODEL_MAGIC).ok_or_else(|| {
            Error::Format(format!(
                "bad model header {:?}: expected magic {MODEL_MAGIC:?}",
                header.chars().take(40).collect::<String>()
            ))
        })?;
        let fields = parse_fields(rest)?;
        let num = |key: &str| -> Result<f64> {
            field(&fields, key)?
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("header field `{key}` is not a number")))
        };
        let order = field(&fields, "order")?
            .parse::<usize>()
            .map_err(|_| Error::Format("header field `order` is not an integer".into()))?;
        let vocab_size = field(&fields, "vocab_size")?
            .parse::<usize>()
            .map_err(|_| Error::Format("header field `vocab_size` is not an integer".into()))?;
        let params = NGramParams {
            order,
            delta: num("delta")?,
            lambda: num("lambda")?,
        };
        let vocab = Vocabulary::read_from(&mut lines)?;
        if vocab.len() != vocab_size {
            return Err(Error::Format(format!(
                "header declares vocab_size={vocab_size} but vocabulary has {} tokens",
                vocab.len()
            )));
        }
        let mut model = Self::empty(vocab, params)?;
        let mut lineno = vocab_size + 2;
        while let Some(line) = next_line(&mut lines)? {
            lineno += 1;
            let bad = |what: &str| Error::Format(format!("model line {lineno}: {what}"));
            let parts: Vec<&str> = line.split(' ').collect();
            let m: usize = parts
                .first()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("missing n-gram order"))?;
            if m < 1 || m > order {
                return Err(bad(&format!("n-gram order {m} outside 1..={order}")));
            }
            if parts.len() != m + 2 {
                return Err(bad(&format!(
                    "expected {} fields, found {} (truncated?)",
                    m + 2,
                    parts.len()
                )));
            }
            let ids: Vec<TokenId> = parts[1..=m]
                .iter()
                .map(|s| s.parse::<TokenId>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("token id is not an integer"))?;
            if let Some(t) = ids.iter().find(|&&t| t as usize >= vocab_size) {
                return Err(bad(&format!("token id {t} outside vocabulary")));
            }
            let weight: f64 = parts[m + 1]
                .parse()
                .map_err(|_| bad("weight is not a number"))?;
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(bad("weight must be finite and nonnegative"));
            }
            let (ctx, tok) = ids.split_at(m - 1);
            model.tables[m - 1]
                .entry(ctx.to_vec())
                .or_default()
                .add(tok[0], weight);
        }
        model.refresh();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

impl LogitProducer for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn next_token_logits(&self, context: &[TokenId]) -> LogitVector {
        LogitVector::from_probs(&self.next_token_probs(context))
            .expect("smoothed n-gram probabilities are positive")
    }

    fn eos_id(&self) -> Option<TokenId> {
        self.vocab.eos_id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::TokenizerMode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_tokens(
            (0..n - 1).map(|i| format!("w{i}")),
            TokenizerMode::Whitespace,
        )
        .unwrap()
    }

    fn random_corpus(rng: &mut ChaCha8Rng, v: usize, seqs: usize) -> Vec<Vec<TokenId>> {
        (0..seqs)
            .map(|_| {
                let len = rng.random_range(1..12);
                // skewed towards low ids so that contexts repeat
                (0..len)
                    .map(|_| {
                        let a = rng.random_range(0..v as u32);
                        let b = rng.random_range(0..v as u32);
                        a.min(b)
                    })
                    .collect()
            })
            .collect()
    }

    /// Independent recursive reimplementation of the interpolation rule.
    fn oracle_prob(model: &NGramModel, context: &[TokenId], token: TokenId) -> f64 {
        let p = model.params();
        let keep = (p.order - 1).min(context.len());
        let ctx = &context[context.len() - keep..];
        fn rec(model: &NGramModel, ctx: &[TokenId], token: TokenId, p: NGramParams) -> f64 {
            if ctx.is_empty() {
                let v = model.vocab().len() as f64;
                let total = model.context_total(&[]);
                return (model.count(&[], token) + p.delta) / (total + p.delta * v);
            }
            let lower = rec(model, &ctx[1..], token, p);
            let total = model.context_total(ctx);
            if total > 0.0 {
                p.lambda * model.count(ctx, token) / total + (1.0 - p.lambda) * lower
            } else {
                lower
            }
        }
        rec(model, ctx, token, p)
    }

    #[test]
    fn bigram_counts() {
        let v = Vocabulary::from_tokens(["a", "b"], TokenizerMode::Whitespace).unwrap();
        let model = NGramModel::train(
            v,
            [vec![0, 1], vec![0, 1]],
            NGramParams {
                order: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(model.count(&[0], 1), 2.0);
        assert_eq!(model.context_total(&[0]), 2.0);
        let probs = model.next_token_probs(&[0]);
        let argmax = (0..probs.len())
            .max_by(|&a, &b| probs[a].total_cmp(&probs[b]))
            .unwrap();
        assert_eq!(argmax, 1);
    }

    #[test]
    fn unigram_approaches_maximum_likelihood() {
        let v = Vocabulary::from_tokens(["a", "b"], TokenizerMode::Whitespace).unwrap();
        let model = NGramModel::train(
            v,
            [vec![0, 0, 1]],
            NGramParams {
                order: 1,
                delta: 1e-9,
                lambda: 0.7,
            },
        )
        .unwrap();
        let p = model.next_token_probs(&[]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn empty_context_is_smoothed_unigram() {
        let v = vocab(5);
        let model = NGramModel::train(v, [vec![0, 1, 0, 2]], NGramParams::default()).unwrap();
        let p = model.next_token_probs(&[]);
        let denom = 4.0 + 0.1 * 5.0;
        assert!((p[0] - 2.1 / denom).abs() < 1e-15);
        assert!((p[3] - 0.1 / denom).abs() < 1e-15);
    }

    #[test]
    fn empty_corpus_and_bad_params() {
        let empty: [Vec<TokenId>; 0] = [];
        assert!(matches!(
            NGramModel::train(vocab(3), empty, NGramParams::default()),
            Err(Error::EmptyCorpus)
        ));
        for bad in [
            NGramParams {
                order: 0,
                ..Default::default()
            },
            NGramParams {
                delta: 0.0,
                ..Default::default()
            },
            NGramParams {
                lambda: 1.0,
                ..Default::default()
            },
        ] {
            assert!(NGramModel::train(vocab(3), [vec![0]], bad).is_err());
        }
    }

    #[test]
    fn matches_recursive_oracle_on_seen_and_unseen_contexts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = 12;
        let corpus = random_corpus(&mut rng, v, 60);
        let model = NGramModel::train(vocab(v), &corpus, NGramParams::default()).unwrap();
        for _ in 0..200 {
            let len = rng.random_range(0..5);
            let ctx: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..v as u32)).collect();
            let probs = model.next_token_probs(&ctx);
            for t in 0..v as TokenId {
                let want = oracle_prob(&model, &ctx, t);
                assert!((probs[t as usize] - want).abs() < 1e-14);
                assert_eq!(model.token_prob(&ctx, t), probs[t as usize]);
            }
        }
        // An unseen context falls through to the lower-order distribution.
        let unseen = [v as TokenId - 2, v as TokenId - 1];
        assert_eq!(model.context_total(&unseen), 0.0);
        let lower = model.next_token_probs(&unseen[1..]);
        assert_eq!(model.next_token_probs(&unseen), lower);
    }

    #[test]
    fn log_likelihood_is_sum_of_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corpus = random_corpus(&mut rng, 8, 40);
        let model = NGramModel::train(vocab(8), &corpus, NGramParams::default()).unwrap();
        let s1 = [0, 1, 2, 3];
        let s2 = vec![3, 2, 7, 7, 0];
        let joined: Vec<TokenId> = s1.iter().chain(&s2).copied().collect();
        let mut oracle = 0.0;
        for i in 0..joined.len() {
            let logits = model.next_token_logits(&joined[..i]);
            oracle += logits.values()[joined[i] as usize];
        }
        assert!((model.sequence_log_likelihood(&joined) - oracle).abs() < 1e-12);
        let single = model.sequence_log_likelihood(&[5]);
        assert!((single - model.next_token_probs(&[])[5].ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_model_log_likelihood() {
        let model = NGramModel::empty(vocab(7), NGramParams::default()).unwrap();
        let seq = [0, 3, 6, 6, 2];
        let want = 5.0 * (1.0f64 / 7.0).ln();
        assert!((model.sequence_log_likelihood(&seq) - want).abs() < 1e-12);
    }

    #[test]
    fn swapping_count_cells_never_improves_training_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let corpus = random_corpus(&mut rng, 10, 80);
        let model = NGramModel::train(vocab(10), &corpus, NGramParams::default()).unwrap();
        let best = model.corpus_log_likelihood(&corpus);
        let top = model.order() - 1;
        let mut contexts: Vec<_> = model.tables[top]
            .iter()
            .filter(|(_, s)| s.next.len() >= 2)
            .map(|(c, _)| c.clone())
            .collect();
        contexts.sort();
        let mut checked = 0;
        while checked < 20 {
            let ctx = &contexts[rng.random_range(0..contexts.len())];
            let mut cells: Vec<(TokenId, f64)> = model.tables[top][ctx]
                .next
                .iter()
                .map(|(&t, &w)| (t, w))
                .collect();
            cells.sort_by_key(|c| c.0);
            let i = rng.random_range(0..cells.len());
            let j = rng.random_range(0..cells.len());
            if cells[i].1 == cells[j].1 {
                continue;
            }
            let mut perturbed = model.clone();
            let next = &mut perturbed.tables[top].get_mut(ctx).unwrap().next;
            next.insert(cells[i].0, cells[j].1);
            next.insert(cells[j].0, cells[i].1);
            assert!(perturbed.corpus_log_likelihood(&corpus) <= best);
            checked += 1;
        }
    }

    #[test]
    fn infect_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base_corpus = random_corpus(&mut rng, 9, 50);
        let toxic_corpus = random_corpus(&mut rng, 9, 20);
        let base = NGramModel::train(vocab(9), &base_corpus, NGramParams::default()).unwrap();

        let barely = base.infect(&toxic_corpus, 1e-12).unwrap();
        for ctx in base.contexts() {
            let a = base.next_token_probs(&ctx);
            let b = barely.next_token_probs(&ctx);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-6);
            }
        }

        // With overwhelming weight the base counts vanish and so does the
        // relative size of delta; compare to the toxic model with delta / w.
        let w = 1e12;
        let swamped = base.infect(&toxic_corpus, w).unwrap();
        let toxic_only = NGramModel::train(
            vocab(9),
            &toxic_corpus,
            NGramParams {
                delta: DEFAULT_DELTA / w,
                ..Default::default()
            },
        )
        .unwrap();
        for ctx in toxic_only.contexts() {
            let a = swamped.next_token_probs(&ctx);
            let b = toxic_only.next_token_probs(&ctx);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        // base is untouched
        assert_eq!(
            base.cells(),
            NGramModel::train(vocab(9), &base_corpus, NGramParams::default())
                .unwrap()
                .cells()
        );
    }

    #[test]
    fn infect_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = NGramModel::train(
            vocab(9),
            random_corpus(&mut rng, 9, 30),
            NGramParams::default(),
        )
        .unwrap();
        let toxic = random_corpus(&mut rng, 9, 10);
        let twice = base
            .infect(&toxic, 2.5)
            .unwrap()
            .infect(&toxic, 2.5)
            .unwrap();
        let once = base.infect(&toxic, 5.0).unwrap();
        let (a, b) = (twice.cells(), once.cells());
        assert_eq!(a.len(), b.len());
        for ((ca, ta, wa), (cb, tb, wb)) in a.iter().zip(&b) {
            assert_eq!((ca, ta), (cb, tb));
            assert!((wa - wb).abs() <= 1e-12 * wb.abs().max(1.0));
        }
    }

    #[test]
    fn infect_rejects_mismatched_vocabulary() {
        let base = NGramModel::train(vocab(5), [vec![0, 1]], NGramParams::default()).unwrap();
        let other = NGramModel::train(vocab(6), [vec![0, 1]], NGramParams::default()).unwrap();
        assert!(matches!(
            base.blend(&other, 1.0),
            Err(Error::VocabularyMismatch(_))
        ));
        assert!(base.infect([vec![0u32]], 0.0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let v = Vocabulary::from_tokens(["a", "b"], TokenizerMode::Whitespace).unwrap();
        let model =
            NGramModel::train(v, [vec![0, 1, 1], vec![0, 1]], NGramParams::default()).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "NGRAM v1 order=3 delta=0.1 lambda=0.7 vocab_size=3\nVOCAB v1 mode=whitespace size=3\na\nb\n<unk>\n1 0 2\n1 1 3\n2 0 1 2\n"
        ), "{text}");
        let loaded = NGramModel::read_from(&buf[..]).unwrap();
        assert_eq!(loaded.cells(), model.cells());
        let mut again = Vec::new();
        loaded.write_to(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn load_reports_bad_header_and_truncation() {
        let err = NGramModel::read_from(&b"GARBAGE v1\n"[..]).unwrap_err();
        assert!(err.to_string().contains("NGRAM v1"), "{err}");
        let err = NGramModel::read_from(&b"NGRAM v2 order=3\n"[..]).unwrap_err();
        assert!(err.to_string().contains("NGRAM v1"), "{err}");

        let v = Vocabulary::from_tokens(["a", "b"], TokenizerMode::Whitespace).unwrap();
        let model = NGramModel::train(v, [vec![0, 1, 1]], NGramParams::default()).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() - 3];
        let err = NGramModel::read_from(cut.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
        // inside the token list, after both header lines
        let cut = text.match_indices('\n').nth(1).unwrap().0 + 2;
        let err = NGramModel::read_from(&text.as_bytes()[..cut]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn large_round_trip_preserves_probed_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let v = 400;
        let corpus: Vec<Vec<TokenId>> = (0..4000)
            .map(|_| (0..30).map(|_| rng.random_range(0..v as u32)).collect())
            .collect();
        let model = NGramModel::train(vocab(v), &corpus, NGramParams::default()).unwrap();
        assert!(model.num_counts() > 100_000);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ng");
        model.save(&path).unwrap();
        let loaded = NGramModel::load(&path).unwrap();
        let contexts = model.contexts();
        for _ in 0..50 {
            let ctx = &contexts[rng.random_range(0..contexts.len())];
            let a = model.next_token_logits(ctx);
            let b = loaded.next_token_logits(ctx);
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn distributions_normalize(seed in 0u64..1000, ctx in proptest::collection::vec(0u32..10, 0..6)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let corpus = random_corpus(&mut rng, 10, 15);
            let model = NGramModel::train(vocab(10), &corpus, NGramParams::default()).unwrap();
            let sum: f64 = model.next_token_logits(&ctx).values().iter().map(|l| l.exp()).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }

        #[test]
        fn adding_an_occurrence_never_lowers_its_probability(
            seed in 0u64..1000,
            ctx in proptest::collection::vec(0u32..8, 0..3),
            token in 0u32..8,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let corpus = random_corpus(&mut rng, 8, 10);
            let model = NGramModel::train(vocab(8), &corpus, NGramParams::default()).unwrap();
            let mut seq = ctx.clone();
            seq.push(token);
            let mut bumped = model.clone();
            // one more occurrence of (ctx, token) at every order, as training would add it
            for m in 0..=ctx.len() {
                bumped.tables[m].entry(ctx[ctx.len() - m..].to_vec()).or_default().add(token, 1.0);
            }
            bumped.refresh();
            prop_assert!(bumped.token_prob(&ctx, token) >= model.token_prob(&ctx, token) - 1e-15);
        }
    }
}
