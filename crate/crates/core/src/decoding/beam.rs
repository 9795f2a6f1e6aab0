use std::cmp::Ordering;

use crate::logits::LogitProducer;
use crate::vocab::TokenId;

struct Hypothesis {
    tokens: Vec<TokenId>,
    log_prob: f64,
}

impl Hypothesis {
    fn normalized(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }
}

fn log_softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    values.iter().map(|v| v - lse).collect()
}

/// Beam search over continuations of `prompt`.
///
/// Each step keeps the `beam_size` highest log-probability extensions. An
/// extension ending in end-of-sequence moves to the finished list and shrinks
/// the beam by one. Whatever is still live after `max_length` steps is
/// finished too. The winner maximizes log-probability divided by length; the
/// returned tokens exclude the prompt and any trailing end-of-sequence token.
pub fn beam_search<M: LogitProducer + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    beam_size: usize,
    max_length: usize,
) -> Vec<TokenId> {
    let eos = model.eos_id();
    let mut width = beam_size.max(1);
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut context = prompt.to_vec();

    for _ in 0..max_length {
        if live.is_empty() || width == 0 {
            break;
        }
        // (score, parent, token)
        let mut candidates: Vec<(f64, usize, TokenId)> = Vec::new();
        for (parent, hyp) in live.iter().enumerate() {
            context.truncate(prompt.len());
            context.extend_from_slice(&hyp.tokens);
            let scores = log_softmax(model.next_token_logits(&context).values());
            candidates.extend(
                scores
                    .iter()
                    .enumerate()
                    .map(|(t, s)| (hyp.log_prob + s, parent, t as TokenId)),
            );
        }
        let order = |a: &(f64, usize, TokenId), b: &(f64, usize, TokenId)| {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        };
        if candidates.len() > width {
            candidates.select_nth_unstable_by(width - 1, order);
            candidates.truncate(width);
        }
        candidates.sort_by(order);

        let mut next = Vec::with_capacity(candidates.len());
        for (score, parent, token) in candidates {
            let mut tokens = live[parent].tokens.clone();
            tokens.push(token);
            let hyp = Hypothesis {
                tokens,
                log_prob: score,
            };
            if Some(token) == eos {
                finished.push(hyp);
                width -= 1;
            } else {
                next.push(hyp);
            }
        }
        live = next;
    }
    finished.extend(live);

    let best = finished
        .into_iter()
        .reduce(
            |best, h| match h.normalized().total_cmp(&best.normalized()) {
                Ordering::Greater => h,
                _ => best,
            },
        )
        .map(|h| h.tokens)
        .unwrap_or_default();
    strip_eos(best, eos)
}

fn strip_eos(mut tokens: Vec<TokenId>, eos: Option<TokenId>) -> Vec<TokenId> {
    if eos.is_some() && tokens.last().copied() == eos {
        tokens.pop();
    }
    tokens
}
