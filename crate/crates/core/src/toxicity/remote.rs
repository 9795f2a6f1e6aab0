use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::{ScoreError, Scorer, ToxicityScore};
use crate::vocab::{TokenId, Vocabulary};

pub const SCORER_URL_ENV: &str = "RERANK_SCORER_URL";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout: Duration,
    pub max_attempts: usize,
    /// Delay before the first retry; doubles on each subsequent one.
    pub initial_backoff: Duration,
    /// `None` disables rate limiting.
    pub requests_per_second: Option<f64>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(10),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(250),
            requests_per_second: Some(1.0),
        }
    }
}

/// Spaces calls at least `interval` apart across all threads.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn new(requests_per_second: f64) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / requests_per_second),
            next: Mutex::new(None),
        }
    }

    fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Deserialize)]
struct ScoreBody {
    score: serde_json::Value,
}

/// Client for a toxicity endpoint that accepts `{"text": ...}` and answers
/// `{"score": x}`.
#[derive(Debug)]
pub struct RemoteScorer {
    config: RemoteConfig,
    agent: ureq::Agent,
    limiter: Option<RateLimiter>,
    retries: AtomicUsize,
}

impl RemoteScorer {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = config
            .requests_per_second
            .filter(|r| *r > 0.0)
            .map(RateLimiter::new);
        RemoteScorer {
            config,
            agent,
            limiter,
            retries: AtomicUsize::new(0),
        }
    }

    /// Endpoint from `explicit`, falling back to `RERANK_SCORER_URL`.
    pub fn endpoint_from_env(explicit: Option<&str>) -> Option<String> {
        explicit
            .map(str::to_string)
            .or_else(|| std::env::var(SCORER_URL_ENV).ok())
            .filter(|s| !s.is_empty())
    }

    /// Retries performed so far by this client.
    pub fn retries(&self) -> usize {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn score_text(&self, text: &str) -> Result<ToxicityScore, ScoreError> {
        let attempts = self.config.max_attempts.max(1);
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 1;
        loop {
            match self.attempt(text) {
                Ok(score) => return Ok(score),
                Err(e) if e.is_transient() && attempt < attempts => {
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    log::warn!(
                        "scorer attempt {attempt}/{attempts} failed ({e}); retrying in {backoff:?}"
                    );
                    std::thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn attempt(&self, text: &str) -> Result<ToxicityScore, ScoreError> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let body = serde_json::json!({ "text": text }).to_string();
        let mut response = self
            .agent
            .post(&self.config.endpoint)
            .header("content-type", "application/json")
            .send(body.as_str())
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => ScoreError::Timeout,
                other => ScoreError::Transport(other.to_string()),
            })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ScoreError::Status(status));
        }
        let raw = response.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => ScoreError::Timeout,
            other => ScoreError::Transport(other.to_string()),
        })?;
        let parsed: ScoreBody =
            serde_json::from_str(&raw).map_err(|e| ScoreError::MalformedBody(e.to_string()))?;
        let value = parsed.score.as_f64().ok_or_else(|| {
            ScoreError::MalformedBody(format!("score is not a number: {}", parsed.score))
        })?;
        ToxicityScore::new(value)
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, tokens: &[TokenId], vocab: &Vocabulary) -> Result<ToxicityScore, ScoreError> {
        self.score_text(&vocab.detokenize(tokens))
    }
}
