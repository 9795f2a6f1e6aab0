use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    apply_temperature, beam_search, combined_distribution, detox_rerank, sample, softmax,
    top_k_filter, top_p_filter, toxify_rerank, DecoderConfig, GenerationRecord, RerankMode,
    Strategy,
};
use crate::error::{Error, Result};
use crate::logits::LogitProducer;
use crate::vocab::TokenId;

/// Seed of the `index`-th independent stream under `base_seed`.
pub fn stream_seed(base_seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// Continues `prompt` under `config`.
///
/// Per token: base logits, temperature, strategy filter, optional re-rank
/// against `toxic`, then one draw from a stream seeded by `config.seed`.
/// Re-ranking uses the temperature-scaled base distribution for the top-k
/// support and the raw toxic logits for the reassigned mass.
pub fn generate(
    base: &dyn LogitProducer,
    toxic: Option<&dyn LogitProducer>,
    prompt_id: &str,
    prompt: &[TokenId],
    config: &DecoderConfig,
) -> Result<GenerationRecord> {
    config.validate()?;
    let toxic = match (config.rerank, toxic) {
        (RerankMode::Off, _) => None,
        (_, None) => return Err(Error::MissingToxicModel),
        (_, Some(t)) => {
            if t.vocab_size() != base.vocab_size() {
                return Err(Error::VocabularyMismatch(format!(
                    "base has {} tokens, toxic model has {}",
                    base.vocab_size(),
                    t.vocab_size()
                )));
            }
            Some(t)
        }
    };
    let eos = base.eos_id();

    let generated = if config.strategy == Strategy::Beam {
        beam_search(base, prompt, config.beam_size, config.max_length)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut context = prompt.to_vec();
        let mut out = Vec::with_capacity(config.max_length);
        for _ in 0..config.max_length {
            let u = base.next_token_logits(&context);
            let dist = apply_temperature(&u, config.temperature)?;
            let token = match (config.strategy, toxic) {
                (Strategy::Sample, _) => sample(&dist, &mut rng),
                (Strategy::TopP, _) => sample(&top_p_filter(&dist, config.p)?, &mut rng),
                (Strategy::TopK, None) => sample(&top_k_filter(&dist, config.k)?, &mut rng),
                (Strategy::TopK, Some(toxic)) => {
                    let v = toxic.next_token_logits(&context);
                    let reranked = match config.rerank {
                        RerankMode::Detoxify => {
                            let qbar = combined_distribution(&u, &v, config.alpha)?;
                            detox_rerank(&dist, &qbar, config.k)?
                        }
                        _ => toxify_rerank(&dist, &softmax(v.values()), config.k)?,
                    };
                    sample(&reranked, &mut rng)
                }
                (Strategy::Beam, _) => unreachable!(),
            };
            if Some(token) == eos {
                break;
            }
            out.push(token);
            context.push(token);
        }
        out
    };

    Ok(GenerationRecord {
        prompt_id: prompt_id.to_string(),
        prompt_tokens: prompt.to_vec(),
        generated_tokens: generated,
        config: *config,
        seed: config.seed,
        scores: BTreeMap::new(),
    })
}
