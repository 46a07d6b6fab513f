// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-vocabulary word-level tokenizer.
//!
//! Text is split into pieces, each a single optional leading space followed by
//! either a run of word characters or one punctuation character. Bare
//! whitespace characters become their own pieces. Because the pieces tile the
//! input exactly, detokenizing is plain concatenation and round-trips are
//! exact for any string whose pieces are all in the vocabulary.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const BOS: &str = "<bos>";
pub const BOS_ID: usize = 0;

fn piece_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[ ]?[\p{L}\p{N}'’\-]+|[ ]?[^\s\p{L}\p{N}'’\-]|\s").expect("static regex")
    })
}

/// Splits text into pieces with their byte ranges. Pieces tile the input.
pub fn split_pieces(text: &str) -> Vec<(&str, Range<usize>)> {
    piece_regex()
        .find_iter(text)
        .map(|m| (m.as_str(), m.range()))
        .collect()
}

/// Token ids plus the text they spell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub text: String,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Tokenizer {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    pieces: Vec<String>,
}

impl From<VocabFile> for Tokenizer {
    fn from(v: VocabFile) -> Self {
        Tokenizer::from_pieces(v.pieces)
    }
}

impl From<Tokenizer> for VocabFile {
    fn from(t: Tokenizer) -> Self {
        VocabFile { pieces: t.pieces }
    }
}

impl Tokenizer {
    /// Builds the vocabulary from every piece occurring in `texts`.
    /// Id 0 is reserved for the beginning-of-sequence marker; the remaining
    /// pieces are sorted so the vocabulary is independent of input order.
    pub fn from_texts<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut set = BTreeSet::new();
        for text in texts {
            for (piece, _) in split_pieces(text) {
                set.insert(piece.to_string());
            }
        }
        let mut pieces = vec![BOS.to_string()];
        pieces.extend(set.into_iter().filter(|p| p != BOS));
        Self::from_pieces(pieces)
    }

    pub fn from_pieces(pieces: Vec<String>) -> Self {
        let index = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        Self { pieces, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.pieces.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSeq> {
        let ids = self.encode(text)?;
        Ok(TokenSeq {
            ids,
            text: text.to_string(),
        })
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        split_pieces(text)
            .into_iter()
            .map(|(piece, _)| {
                self.id(piece).ok_or_else(|| LabError::UnknownToken {
                    piece: piece.to_string(),
                    text: text.to_string(),
                })
            })
            .collect()
    }

    /// Encodes and also reports the byte range each token covers.
    pub fn encode_with_spans(&self, text: &str) -> Result<Vec<(usize, Range<usize>)>> {
        split_pieces(text)
            .into_iter()
            .map(|(piece, range)| {
                self.id(piece)
                    .map(|id| (id, range))
                    .ok_or_else(|| LabError::UnknownToken {
                        piece: piece.to_string(),
                        text: text.to_string(),
                    })
            })
            .collect()
    }

    pub fn can_encode(&self, text: &str) -> bool {
        split_pieces(text)
            .into_iter()
            .all(|(p, _)| self.index.contains_key(p))
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id != BOS_ID)
            .filter_map(|&id| self.piece(id))
            .collect()
    }

    pub fn detokenize(&self, seq: &TokenSeq) -> String {
        self.decode(&seq.ids)
    }

    /// Token index range (within `encode(text)`) overlapping the byte range.
    pub fn token_span(&self, text: &str, bytes: Range<usize>) -> Result<Range<usize>> {
        let spans = self.encode_with_spans(text)?;
        let hits: Vec<usize> = spans
            .iter()
            .enumerate()
            .filter(|(_, (_, r))| {
                // skip a leading space that belongs to the piece but not the range
                let start = if text[r.clone()].starts_with(' ') {
                    r.start + 1
                } else {
                    r.start
                };
                start < bytes.end && r.end > bytes.start && start < r.end
            })
            .map(|(i, _)| i)
            .collect();
        match (hits.first(), hits.last()) {
            (Some(&a), Some(&b)) => Ok(a..b + 1),
            _ => Err(LabError::Shape(format!(
                "byte range {bytes:?} covers no token in `{text}`"
            ))),
        }
    }
}
