//! Examples, synthetic languages, tokenizers, JSONL ingestion and splits.

pub mod jsonl;
pub mod language;
pub mod splits;
pub mod synthetic;
pub mod tokenizer;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::transformer::TeacherForced;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
/// First id after the specials.
pub const CONTENT_OFFSET: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub lang: String,
    pub document: Vec<usize>,
    pub summary: Vec<usize>,
}

impl Example {
    /// `[BOS] document [SEP]`.
    pub fn prompt(&self) -> Vec<usize> {
        let mut p = Vec::with_capacity(self.document.len() + 2);
        p.push(BOS);
        p.extend_from_slice(&self.document);
        p.push(SEP);
        p
    }

    /// Prompt plus `summary [EOS]` as the supervised span.
    pub fn teacher_forced(&self) -> TeacherForced {
        let mut target = self.summary.clone();
        target.push(EOS);
        TeacherForced {
            id: self.id.clone(),
            prompt: self.prompt(),
            target,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn languages(&self) -> Vec<String> {
        let mut langs: Vec<String> = self.examples.iter().map(|e| e.lang.clone()).collect();
        langs.sort();
        langs.dedup();
        langs
    }
}

/// Token budgets for documents and summaries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub max_input: usize,
    pub max_output: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation {
            max_input: 256,
            max_output: 32,
        }
    }
}

impl Truncation {
    pub fn apply(&self, ex: &mut Example) {
        ex.document.truncate(self.max_input);
        ex.summary.truncate(self.max_output);
    }
}

/// First 8 bytes (LE) of SHA-256 over the length-prefixed parts.
pub fn seed_hash(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
