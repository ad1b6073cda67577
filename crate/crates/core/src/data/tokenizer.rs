//! Simple tokenizers for JSONL corpora.
//!
//! `Byte` maps UTF-8 bytes to ids and round-trips exactly. `WhitespacePunct`
//! splits on whitespace and isolates punctuation characters; decoding joins
//! tokens with single spaces, so a round trip preserves the text up to
//! whitespace (all whitespace runs are normalized, and punctuation gains
//! surrounding spaces). Out-of-vocabulary words decode as `<unk>`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CONTENT_OFFSET;
use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";
const SPECIAL_NAMES: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<sep>"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    WhitespacePunct,
    Byte,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub kind: TokenizerKind,
    /// Surface strings for ids `CONTENT_OFFSET..` (word kind only).
    words: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl Tokenizer {
    pub fn byte() -> Self {
        Tokenizer {
            kind: TokenizerKind::Byte,
            words: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Word tokenizer over the `max_vocab` most frequent pieces of `texts`
    /// (ties broken lexicographically). Id `CONTENT_OFFSET` is `<unk>`.
    pub fn fit_whitespace<'a>(texts: impl IntoIterator<Item = &'a str>, max_vocab: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for piece in split_pieces(t) {
                *counts.entry(piece.to_string()).or_default() += 1;
            }
        }
        let mut by_freq: Vec<(String, usize)> = counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words = vec![UNK_TOKEN.to_string()];
        words.extend(by_freq.into_iter().take(max_vocab).map(|(w, _)| w));
        Self::from_words(words)
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i + CONTENT_OFFSET)).collect();
        Tokenizer {
            kind: TokenizerKind::WhitespacePunct,
            words,
            index,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self.kind {
            TokenizerKind::Byte => CONTENT_OFFSET + 256,
            TokenizerKind::WhitespacePunct => CONTENT_OFFSET + self.words.len(),
        }
    }

    pub fn unk_id(&self) -> Option<usize> {
        self.index.get(UNK_TOKEN).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        match self.kind {
            TokenizerKind::Byte => text.bytes().map(|b| CONTENT_OFFSET + b as usize).collect(),
            TokenizerKind::WhitespacePunct => {
                let unk = self.unk_id().unwrap_or(CONTENT_OFFSET);
                split_pieces(text)
                    .map(|p| self.index.get(p).copied().unwrap_or(unk))
                    .collect()
            }
        }
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        match self.kind {
            TokenizerKind::Byte => {
                let mut bytes = Vec::with_capacity(ids.len());
                for &id in ids {
                    if id < CONTENT_OFFSET {
                        continue;
                    }
                    let b = id - CONTENT_OFFSET;
                    if b > 255 {
                        return Err(Error::Index {
                            index: id,
                            size: self.vocab_size(),
                            context: "byte tokenizer".into(),
                        });
                    }
                    bytes.push(b as u8);
                }
                String::from_utf8(bytes).map_err(|e| Error::Data(format!("decoded bytes are not UTF-8: {e}")))
            }
            TokenizerKind::WhitespacePunct => {
                let mut out = Vec::with_capacity(ids.len());
                for &id in ids {
                    if id < CONTENT_OFFSET {
                        continue;
                    }
                    let w = self.words.get(id - CONTENT_OFFSET).ok_or(Error::Index {
                        index: id,
                        size: self.vocab_size(),
                        context: "word tokenizer".into(),
                    })?;
                    out.push(w.as_str());
                }
                Ok(out.join(" "))
            }
        }
    }

    pub fn special_name(id: usize) -> Option<&'static str> {
        SPECIAL_NAMES.get(id).copied()
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i + CONTENT_OFFSET)).collect();
    }
}

fn split_pieces(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().flat_map(|word| {
        let mut pieces = Vec::new();
        let mut start = 0;
        for (i, c) in word.char_indices() {
            if c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()) {
                if start < i {
                    pieces.push(&word[start..i]);
                }
                pieces.push(&word[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < word.len() {
            pieces.push(&word[start..]);
        }
        pieces
    })
}
