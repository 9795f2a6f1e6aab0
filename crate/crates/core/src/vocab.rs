//! Tokenization, vocabulary construction and prompt ingestion.
//!
//! A [`Vocabulary`] is a frozen bijection between token strings and dense ids.
//! Ids are assigned by descending corpus frequency with first-occurrence
//! tie-breaking, so the same corpus always yields the same indices. The
//! unknown token is appended last.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const UNK_TOKEN: &str = "<unk>";
/// Whitespace-mode corpora may mark document ends with this token; when it is
/// part of the vocabulary it is treated as end-of-sequence.
pub const EOS_TOKEN: &str = "</s>";

const VOCAB_MAGIC: &str = "VOCAB v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    #[default]
    Whitespace,
    Character,
}

impl fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerMode::Whitespace => "whitespace",
            TokenizerMode::Character => "character",
        })
    }
}

impl FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(TokenizerMode::Whitespace),
            "character" => Ok(TokenizerMode::Character),
            other => Err(Error::param(format!("unknown tokenizer mode {other:?}"))),
        }
    }
}

impl TokenizerMode {
    fn split<'a>(self, text: &'a str) -> Box<dyn Iterator<Item = &'a str> + 'a> {
        match self {
            TokenizerMode::Whitespace => Box::new(text.split_whitespace()),
            TokenizerMode::Character => Box::new(
                text.char_indices()
                    .map(move |(i, c)| &text[i..i + c.len_utf8()]),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
    unk_id: TokenId,
    eos_id: Option<TokenId>,
    mode: TokenizerMode,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list. `<unk>` is appended if
    /// the list does not already contain it.
    pub fn from_tokens<I, S>(tokens: I, mode: TokenizerMode) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if !list.iter().any(|t| t == UNK_TOKEN) {
            list.push(UNK_TOKEN.to_string());
        }
        Self::from_list(list, mode)
    }

    fn from_list(tokens: Vec<String>, mode: TokenizerMode) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::Format(format!(
                "vocabulary needs at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if id_of.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate token {tok:?}")));
            }
        }
        let unk_id = *id_of
            .get(UNK_TOKEN)
            .ok_or_else(|| Error::Format("vocabulary lacks <unk>".into()))?;
        let eos_id = match mode {
            TokenizerMode::Whitespace => id_of.get(EOS_TOKEN).copied(),
            TokenizerMode::Character => None,
        };
        Ok(Vocabulary {
            tokens,
            id_of,
            unk_id,
            eos_id,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    pub fn eos_id(&self) -> Option<TokenId> {
        self.eos_id
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    /// Token string for `id`, or `<unk>` for ids outside the vocabulary.
    pub fn token(&self, id: TokenId) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(UNK_TOKEN)
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        self.mode
            .split(text)
            .map(|t| self.id(t).unwrap_or(self.unk_id))
            .collect()
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let sep = match self.mode {
            TokenizerMode::Whitespace => " ",
            TokenizerMode::Character => "",
        };
        let parts: Vec<&str> = ids.iter().map(|&id| self.token(id)).collect();
        parts.join(sep)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{VOCAB_MAGIC} mode={} size={}",
            self.mode,
            self.tokens.len()
        )?;
        for tok in &self.tokens {
            writeln!(w, "{tok}")?;
        }
        Ok(())
    }

    /// Reads a vocabulary block from `lines`, consuming exactly the header and
    /// `size` token lines.
    pub fn read_from<I>(lines: &mut I) -> Result<Self>
    where
        I: Iterator<Item = std::io::Result<String>>,
    {
        let header = next_line(lines)?.ok_or_else(|| {
            Error::Format(format!(
                "truncated vocabulary: expected header {VOCAB_MAGIC:?}"
            ))
        })?;
        let rest = header.strip_prefix(VOCAB_MAGIC).ok_or_else(|| {
            Error::Format(format!(
                "bad vocabulary header {header:?}: expected magic {VOCAB_MAGIC:?}"
            ))
        })?;
        let fields = parse_fields(rest)?;
        let mode: TokenizerMode = field(&fields, "mode")?.parse()?;
        let size: usize = field(&fields, "size")?
            .parse()
            .map_err(|_| Error::Format("vocabulary size is not an integer".into()))?;
        let mut tokens = Vec::with_capacity(size);
        for i in 0..size {
            let tok = next_line(lines)?.ok_or_else(|| {
                Error::Format(format!(
                    "truncated vocabulary: expected {size} tokens, found {i}"
                ))
            })?;
            tokens.push(tok);
        }
        Self::from_list(tokens, mode)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        Self::read_from(&mut lines)
    }
}

/// Next line with only the trailing line terminator removed; leading and
/// trailing spaces are significant in character mode.
pub(crate) fn next_line<I>(lines: &mut I) -> Result<Option<String>>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    match lines.next() {
        None => Ok(None),
        Some(Ok(mut l)) => {
            if l.ends_with('\r') {
                l.pop();
            }
            Ok(Some(l))
        }
        Some(Err(e)) => Err(Error::Format(format!("read error: {e}"))),
    }
}

pub(crate) fn parse_fields(s: &str) -> Result<HashMap<String, String>> {
    s.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Format(format!("malformed header field {kv:?}")))
        })
        .collect()
}

pub(crate) fn field<'a>(fields: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    fields
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Format(format!("header is missing `{key}`")))
}

/// Builds a vocabulary holding every token seen at least `min_count` times.
pub fn build_vocabulary<I, S>(
    corpus: I,
    mode: TokenizerMode,
    min_count: usize,
) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count < 1 {
        return Err(Error::param("min_count must be at least 1"));
    }
    // token -> (count, first occurrence)
    let mut stats: HashMap<String, (usize, usize)> = HashMap::new();
    let mut seen = 0usize;
    let mut non_empty = false;
    for line in corpus {
        let line = line.as_ref();
        if line.trim().is_empty() {
            continue;
        }
        non_empty = true;
        for tok in mode.split(line) {
            if tok == UNK_TOKEN {
                continue;
            }
            let entry = stats.entry(tok.to_string()).or_insert((0, seen));
            entry.0 += 1;
            seen += 1;
        }
    }
    if !non_empty {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(String, usize, usize)> = stats
        .into_iter()
        .filter(|(_, (count, _))| *count >= min_count)
        .map(|(tok, (count, first))| (tok, count, first))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut tokens: Vec<String> = kept.into_iter().map(|(t, _, _)| t).collect();
    tokens.push(UNK_TOKEN.to_string());
    Vocabulary::from_list(tokens, mode)
}

/// One prompt from a newline-delimited JSON prompt file.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    pub toxicity_hint: Option<f64>,
}

#[derive(Deserialize)]
struct RawPrompt {
    id: Option<serde_json::Value>,
    prompt: Option<String>,
    toxicity: Option<f64>,
}

pub fn parse_prompts(source: &str, path: &Path) -> Result<Vec<PromptRecord>> {
    let mut out = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let raw: RawPrompt = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let text = raw
            .prompt
            .ok_or_else(|| err("missing required key \"prompt\"".into()))?;
        if text.trim().is_empty() {
            return Err(err("empty prompt text".into()));
        }
        if let Some(t) = raw.toxicity {
            if !(0.0..=1.0).contains(&t) {
                return Err(err(format!("toxicity {t} outside [0, 1]")));
            }
        }
        let id = match raw.id {
            None | Some(serde_json::Value::Null) => lineno.to_string(),
            Some(serde_json::Value::String(s)) => s,
            Some(other) => other.to_string(),
        };
        out.push(PromptRecord {
            id,
            text,
            toxicity_hint: raw.toxicity,
        });
    }
    Ok(out)
}

pub fn load_prompts(path: &Path) -> Result<Vec<PromptRecord>> {
    let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prompts(&source, path)
}

pub fn write_prompts<W: Write>(mut w: W, prompts: &[PromptRecord]) -> std::io::Result<()> {
    for p in prompts {
        let mut obj = serde_json::Map::new();
        obj.insert("id".into(), p.id.clone().into());
        obj.insert("prompt".into(), p.text.clone().into());
        if let Some(t) = p.toxicity_hint {
            obj.insert("toxicity".into(), t.into());
        }
        writeln!(w, "{}", serde_json::Value::Object(obj))?;
    }
    Ok(())
}
