use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];

/// Token ↔ id map with fixed reserved ids for pad, start, end and unk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `words` in the given order.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(Into::into))
            .collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::contract(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Inverse of [`Vocabulary::tokens`]: a full id-ordered token list that
    /// starts with the reserved tokens.
    pub fn from_tokens(tokens: &[String]) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(t, r)| t != r) {
            return Err(Error::contract("token list must start with the reserved tokens"));
        }
        Self::from_words(tokens[RESERVED.len()..].iter().cloned())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or [`UNK`] when absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    /// `start, ids…, end`.
    pub fn frame<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(START);
        ids.extend(self.encode(tokens));
        ids.push(END);
        ids
    }

    /// Words of a generated sequence with pad/start/end removed.
    pub fn words(&self, ids: &[usize]) -> Vec<String> {
        let inner: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&i| i != PAD && i != START && i != END)
            .collect();
        self.decode(&inner)
    }

    /// One `token<TAB>id` line per entry, sorted by id.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let malformed = |detail: String| Error::Malformed {
            what: "vocabulary file",
            detail,
        };
        let mut words = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| malformed(format!("line {}: missing tab", line_no + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| malformed(format!("line {}: bad id {id:?}", line_no + 1)))?;
            if id != line_no {
                return Err(malformed(format!("line {}: id {id} out of order", line_no + 1)));
            }
            if id < RESERVED.len() {
                if tok != RESERVED[id] {
                    return Err(malformed(format!("reserved id {id} holds {tok:?}")));
                }
            } else {
                words.push(tok.to_string());
            }
        }
        if words.len() + RESERVED.len() != text.lines().filter(|l| !l.is_empty()).count() {
            return Err(malformed("missing reserved tokens".into()));
        }
        Self::from_words(words)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_tsv(&fs::read_to_string(path)?)
    }
}

/// Tokens with count ≥ `min_count`, ordered by count descending then
/// lexicographically. Everything else maps to unk.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in corpus {
        for tok in sentence {
            let tok = tok.as_ref();
            if RESERVED.contains(&tok) {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_words(kept.into_iter().map(|(t, _)| t.to_string()))
}

/// Lowercases, splits on whitespace and strips ASCII punctuation, keeping
/// hyphens that sit between two alphanumerics.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let chars: Vec<char> = raw.to_lowercase().chars().collect();
            let kept: String = chars
                .iter()
                .enumerate()
                .filter(|&(i, &c)| {
                    if !c.is_ascii_punctuation() {
                        return true;
                    }
                    c == '-'
                        && i > 0
                        && i + 1 < chars.len()
                        && chars[i - 1].is_alphanumeric()
                        && chars[i + 1].is_alphanumeric()
                })
                .map(|(_, &c)| c)
                .collect();
            (!kept.is_empty()).then_some(kept)
        })
        .collect()
}
