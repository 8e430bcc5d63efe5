//! Subword tokenizers: WordPiece (greedy longest-match, `##` continuation
//! pieces) and unigram language model (Viterbi over piece log-probabilities,
//! `▁` word-start marker).
//!
//! Both share the same pre-tokenization (whitespace split plus isolated
//! punctuation), the same five special tokens at ids 0..=4 and the same
//! vocabulary file layout.

mod pretokenize;
mod unigram;
mod wordpiece;

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use pretokenize::{is_punctuation, units, Unit};
pub use unigram::{train_unigram, UnigramOptions, UnigramTrace};
pub use wordpiece::train_wordpiece;

use crate::corpus::Document;
use crate::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const CONTINUATION_PREFIX: &str = "##";
pub const WORD_START: char = '▁';
/// Words longer than this (in characters) are mapped to `[UNK]` by WordPiece.
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    WordPiece,
    Unigram,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wordpiece" => Ok(Algorithm::WordPiece),
            "unigram" => Ok(Algorithm::Unigram),
            other => Err(Error::Config(format!("unknown tokenizer algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
}

impl SpecialIds {
    pub const FIXED: SpecialIds = SpecialIds {
        pad: 0,
        unk: 1,
        cls: 2,
        sep: 3,
        mask: 4,
    };

    pub fn contains(&self, id: u32) -> bool {
        id < SPECIAL_TOKENS.len() as u32
    }
}

/// Token ids plus, for each id, the index of the whitespace-delimited word it
/// came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub word_ids: Vec<usize>,
}

/// A trained vocabulary. Immutable once built; encode/decode are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    algorithm: Algorithm,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    /// Unigram only: one entry per id, 0.0 for the special tokens.
    log_probs: Vec<f64>,
    max_piece_chars: usize,
    /// Set by training when the corpus could not fill the requested size.
    pub undersized: bool,
}

impl TokenizerModel {
    /// Builds a WordPiece model from its non-special tokens.
    pub fn wordpiece<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let all: Vec<String> = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(|t| t.as_ref().to_string()))
            .collect();
        Self::build(Algorithm::WordPiece, all, Vec::new())
    }

    /// Builds a unigram model from `(piece, log probability)` pairs.
    pub fn unigram<S: AsRef<str>>(pieces: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut log_probs = vec![0.0; tokens.len()];
        for (p, lp) in pieces {
            if !lp.is_finite() {
                return Err(Error::Data(format!("piece {:?} has non-finite log-probability", p.as_ref())));
            }
            tokens.push(p.as_ref().to_string());
            log_probs.push(lp);
        }
        Self::build(Algorithm::Unigram, tokens, log_probs)
    }

    fn build(algorithm: Algorithm, tokens: Vec<String>, log_probs: Vec<f64>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(|c| c.is_whitespace()) {
                return Err(Error::Data(format!("invalid token {t:?} at id {i}")));
            }
            if i >= SPECIAL_TOKENS.len() && SPECIAL_TOKENS.contains(&t.as_str()) {
                return Err(Error::Data(format!("special token {t} repeated at id {i}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate token {t:?}")));
            }
        }
        let max_piece_chars = tokens.iter().map(|t| t.chars().count()).max().unwrap_or(1);
        Ok(TokenizerModel {
            algorithm,
            tokens,
            index,
            log_probs,
            max_piece_chars,
            undersized: false,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> SpecialIds {
        SpecialIds::FIXED
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Unigram log-probability of a piece id (`None` for WordPiece).
    pub fn log_prob(&self, id: u32) -> Option<f64> {
        self.log_probs.get(id as usize).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_with_words(text).ids
    }

    /// Encodes text, returning ids with their word indices. Never fails:
    /// unknown material maps to `[UNK]`.
    pub fn encode_with_words(&self, text: &str) -> Encoding {
        let mut enc = Encoding::default();
        for unit in units(text) {
            let before = enc.ids.len();
            match self.algorithm {
                Algorithm::WordPiece => self.wordpiece_unit(&unit, &mut enc.ids),
                Algorithm::Unigram => self.unigram_unit(&unit, &mut enc.ids),
            }
            enc.word_ids.extend(std::iter::repeat_n(unit.word, enc.ids.len() - before));
        }
        enc
    }

    fn wordpiece_unit(&self, unit: &Unit<'_>, out: &mut Vec<u32>) {
        let chars: Vec<(usize, char)> = unit.text.char_indices().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(SpecialIds::FIXED.unk);
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut buf = String::new();
        while start < chars.len() {
            let mut found = None;
            let mut end = chars.len();
            while end > start {
                let lo = chars[start].0;
                let hi = chars.get(end).map_or(unit.text.len(), |c| c.0);
                buf.clear();
                if start > 0 || unit.attached {
                    buf.push_str(CONTINUATION_PREFIX);
                }
                buf.push_str(&unit.text[lo..hi]);
                if let Some(&id) = self.index.get(buf.as_str()) {
                    if !SpecialIds::FIXED.contains(id) {
                        found = Some(id);
                        break;
                    }
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(SpecialIds::FIXED.unk);
                    return;
                }
            }
        }
        out.extend(pieces);
    }

    fn unigram_unit(&self, unit: &Unit<'_>, out: &mut Vec<u32>) {
        let mut s = String::with_capacity(unit.text.len() + 3);
        if !unit.attached {
            s.push(WORD_START);
        }
        s.push_str(unit.text);
        let chars: Vec<char> = s.chars().collect();
        let n = chars.len();
        let unk_score = self.unk_log_prob();
        // best[i]: best score of a segmentation of chars[..i]
        let mut best = vec![f64::NEG_INFINITY; n + 1];
        let mut back: Vec<(usize, u32)> = vec![(0, 0); n + 1];
        best[0] = 0.0;
        let mut piece = String::new();
        for i in 0..n {
            if best[i] == f64::NEG_INFINITY {
                continue;
            }
            piece.clear();
            let mut matched_single = false;
            for j in i..n.min(i + self.max_piece_chars) {
                piece.push(chars[j]);
                if let Some(&id) = self.index.get(piece.as_str()) {
                    if SpecialIds::FIXED.contains(id) {
                        continue;
                    }
                    if j == i {
                        matched_single = true;
                    }
                    let score = best[i] + self.log_probs[id as usize];
                    if score > best[j + 1] {
                        best[j + 1] = score;
                        back[j + 1] = (i, id);
                    }
                }
            }
            if !matched_single {
                let score = best[i] + unk_score;
                if score > best[i + 1] {
                    best[i + 1] = score;
                    back[i + 1] = (i, SpecialIds::FIXED.unk);
                }
            }
        }
        let mut ids = Vec::new();
        let mut pos = n;
        while pos > 0 {
            let (prev, id) = back[pos];
            ids.push(id);
            pos = prev;
        }
        ids.reverse();
        ids.dedup_by(|a, b| *a == SpecialIds::FIXED.unk && *b == SpecialIds::FIXED.unk);
        out.extend(ids);
    }

    fn unk_log_prob(&self) -> f64 {
        let min = self.log_probs[SPECIAL_TOKENS.len()..]
            .iter()
            .copied()
            .fold(0.0f64, f64::min);
        min - 10.0
    }

    /// Inverse of [`encode`](Self::encode) up to normalization and `[UNK]`
    /// losses. `[PAD]`, `[CLS]` and `[SEP]` are dropped.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let sp = SpecialIds::FIXED;
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::IdOutOfRange {
                id,
                vocab_size: self.len(),
            })?;
            if id == sp.pad || id == sp.cls || id == sp.sep {
                continue;
            }
            match self.algorithm {
                Algorithm::WordPiece => {
                    if !sp.contains(id) {
                        if let Some(rest) = tok.strip_prefix(CONTINUATION_PREFIX) {
                            out.push_str(rest);
                            continue;
                        }
                    }
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
                Algorithm::Unigram => {
                    for c in tok.chars() {
                        out.push(if c == WORD_START { ' ' } else { c });
                    }
                }
            }
        }
        if self.algorithm == Algorithm::Unigram {
            let trimmed = out.trim_start_matches(' ');
            if trimmed.len() != out.len() {
                out = trimmed.to_string();
            }
        }
        Ok(out)
    }

    /// Token strings for ids (for display and tests).
    pub fn pieces(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().filter_map(|&i| self.token(i)).collect()
    }

    /// Writes the vocabulary file: one token per line, line number = id;
    /// unigram lines carry a tab and the log-probability.
    pub fn write_vocab<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut buf = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            buf.push_str(t);
            if self.algorithm == Algorithm::Unigram {
                buf.push('\t');
                buf.push_str(&self.log_probs[i].to_string());
            }
            buf.push('\n');
        }
        out.write_all(buf.as_bytes())
    }

    pub fn read_vocab<R: BufRead>(input: R) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut log_probs = Vec::new();
        let mut tabbed = None;
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::format("vocabulary file", e.to_string()))?;
            let (tok, lp) = match line.split_once('\t') {
                Some((t, lp)) => {
                    let lp: f64 = lp
                        .trim()
                        .parse()
                        .map_err(|_| Error::format("vocabulary file", format!("line {}: bad log-probability", n + 1)))?;
                    (t.to_string(), Some(lp))
                }
                None => (line.clone(), None),
            };
            match tabbed {
                None => tabbed = Some(lp.is_some()),
                Some(t) if t != lp.is_some() => {
                    return Err(Error::format("vocabulary file", format!("line {}: mixed layouts", n + 1)))
                }
                _ => {}
            }
            tokens.push(tok);
            log_probs.extend(lp);
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::format(
                    "vocabulary file",
                    format!("expected special token {s} at id {i}"),
                ));
            }
        }
        let algorithm = if tabbed == Some(true) {
            Algorithm::Unigram
        } else {
            Algorithm::WordPiece
        };
        Self::build(algorithm, tokens, log_probs)
    }
}

/// Trains a tokenizer with the given algorithm and target size.
pub fn train(algorithm: Algorithm, docs: &[Document], vocab_size: usize) -> Result<TokenizerModel> {
    match algorithm {
        Algorithm::WordPiece => train_wordpiece(docs, vocab_size),
        Algorithm::Unigram => train_unigram(docs, vocab_size, &UnigramOptions::default()).map(|(m, _)| m),
    }
}
