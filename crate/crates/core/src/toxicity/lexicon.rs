use std::borrow::Cow;
use std::collections::BTreeSet;
use std::path::Path;

use super::{ScoreError, Scorer, ToxicityScore};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

pub const DEFAULT_SATURATION: f64 = 2.0;

/// A named set of case-folded tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    name: String,
    entries: BTreeSet<String>,
}

fn fold(token: &str) -> Cow<'_, str> {
    if token.chars().any(char::is_uppercase) {
        Cow::Owned(token.to_lowercase())
    } else {
        Cow::Borrowed(token)
    }
}

impl Lexicon {
    pub fn new<I, S>(name: impl Into<String>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries: BTreeSet<String> = entries
            .into_iter()
            .map(|e| fold(e.as_ref().trim()).into_owned())
            .filter(|e| !e.is_empty())
            .collect();
        if entries.is_empty() {
            return Err(Error::param("lexicon is empty"));
        }
        Ok(Lexicon {
            name: name.into(),
            entries,
        })
    }

    /// One token per line; `#` starts a comment.
    pub fn parse(name: impl Into<String>, source: &str) -> Result<Self> {
        let entries = source
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        Self::new(name, entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(name, &source)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains(fold(token).as_ref())
    }

    /// Number of tokens in `tokens` that belong to the lexicon.
    pub fn hits(&self, tokens: &[TokenId], vocab: &Vocabulary) -> usize {
        tokens
            .iter()
            .filter(|&&t| t != vocab.unk_id() && self.contains(vocab.token(t)))
            .count()
    }

    /// Per-id membership mask for `vocab`.
    pub fn mask(&self, vocab: &Vocabulary) -> Vec<bool> {
        (0..vocab.len() as TokenId)
            .map(|t| t != vocab.unk_id() && self.contains(vocab.token(t)))
            .collect()
    }
}

/// `h / (h + saturation)` where `h` counts lexicon hits.
pub fn lexicon_score(
    tokens: &[TokenId],
    vocab: &Vocabulary,
    lexicon: &Lexicon,
    saturation: f64,
) -> ToxicityScore {
    let h = lexicon.hits(tokens, vocab) as f64;
    ToxicityScore::new(h / (h + saturation)).expect("saturating score lies in [0, 1)")
}

#[derive(Debug, Clone)]
pub struct LexiconScorer {
    lexicon: Lexicon,
    saturation: f64,
}

impl LexiconScorer {
    pub fn new(lexicon: Lexicon, saturation: f64) -> Result<Self> {
        if !(saturation > 0.0 && saturation.is_finite()) {
            return Err(Error::param(format!(
                "saturation must be positive, got {saturation}"
            )));
        }
        Ok(LexiconScorer {
            lexicon,
            saturation,
        })
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }
}

impl Scorer for LexiconScorer {
    fn score(&self, tokens: &[TokenId], vocab: &Vocabulary) -> Result<ToxicityScore, ScoreError> {
        Ok(lexicon_score(tokens, vocab, &self.lexicon, self.saturation))
    }
}
