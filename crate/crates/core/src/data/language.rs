//! Synthetic languages: a shared content vocabulary seen through a
//! per-language bijection, plus a few reserved function tokens per language.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{seed_hash, CONTENT_OFFSET};
use crate::error::{Error, Result};

pub const BASE_LANGUAGE: &str = "base";

/// Roles of the reserved function tokens, by slot.
pub const MARKER_SLOT: usize = 0;
pub const DELIMITER_SLOT: usize = 1;
pub const FIRST_FILLER_SLOT: usize = 2;

/// Token-id layout shared by every language of one experiment. Ids are
/// `[specials | content | function tokens of languages[0] | languages[1] | ...]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub n_content: usize,
    pub n_function: usize,
    pub languages: Vec<String>,
}

impl VocabLayout {
    pub fn new(n_content: usize, n_function: usize, languages: &[&str]) -> Result<Self> {
        let layout = VocabLayout {
            n_content,
            n_function,
            languages: languages.iter().map(|s| s.to_string()).collect(),
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_content < 2 {
            return Err(Error::Config("n_content must be >= 2".into()));
        }
        if self.n_function < FIRST_FILLER_SLOT {
            return Err(Error::Config(format!(
                "n_function must be >= {FIRST_FILLER_SLOT} (marker and delimiter)"
            )));
        }
        if self.languages.is_empty() {
            return Err(Error::Config("layout needs at least one language".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.languages {
            if l.is_empty() {
                return Err(Error::Config("empty language id".into()));
            }
            if !seen.insert(l) {
                return Err(Error::Config(format!("duplicate language id {l}")));
            }
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        CONTENT_OFFSET + self.n_content + self.n_function * self.languages.len()
    }

    pub fn slot(&self, lang_id: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == lang_id)
            .ok_or_else(|| Error::Config(format!("language {lang_id} is not in the vocabulary layout")))
    }

    fn function_offset(&self, slot: usize) -> usize {
        CONTENT_OFFSET + self.n_content + slot * self.n_function
    }
}

/// Language-neutral view of a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sym {
    Special(usize),
    /// Index into the base (unpermuted) content vocabulary.
    Content(usize),
    Marker,
    Delimiter,
    Filler(usize),
    /// A token that belongs to no role of this language.
    Foreign(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub lang_id: String,
    pub seed: u64,
    /// `permutation[c]` is the surface content index of base content index `c`.
    pub permutation: Vec<usize>,
    inverse: Vec<usize>,
    /// Absolute token ids; slot roles as in [`MARKER_SLOT`] and friends.
    pub function_tokens: Vec<usize>,
}

/// Deterministic per-language spec. `"base"` keeps the identity permutation.
pub fn gen_language_spec(layout: &VocabLayout, global_seed: u64, lang_id: &str) -> Result<LanguageSpec> {
    if lang_id.is_empty() {
        return Err(Error::Config("language id must be nonempty".into()));
    }
    let slot = layout.slot(lang_id)?;
    let mut permutation: Vec<usize> = (0..layout.n_content).collect();
    if lang_id != BASE_LANGUAGE {
        let seed = seed_hash(&[b"language", &global_seed.to_le_bytes(), lang_id.as_bytes()]);
        permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut inverse = vec![0; permutation.len()];
    for (c, &p) in permutation.iter().enumerate() {
        inverse[p] = c;
    }
    let off = layout.function_offset(slot);
    Ok(LanguageSpec {
        lang_id: lang_id.to_string(),
        seed: global_seed,
        permutation,
        inverse,
        function_tokens: (off..off + layout.n_function).collect(),
    })
}

impl LanguageSpec {
    pub fn n_content(&self) -> usize {
        self.permutation.len()
    }

    pub fn marker(&self) -> usize {
        self.function_tokens[MARKER_SLOT]
    }

    pub fn delimiter(&self) -> usize {
        self.function_tokens[DELIMITER_SLOT]
    }

    pub fn n_fillers(&self) -> usize {
        self.function_tokens.len() - FIRST_FILLER_SLOT
    }

    /// Maps an absolute content token id from base to surface form. Other ids pass through.
    pub fn permute_token(&self, id: usize) -> usize {
        match id.checked_sub(CONTENT_OFFSET) {
            Some(c) if c < self.n_content() => CONTENT_OFFSET + self.permutation[c],
            _ => id,
        }
    }

    pub fn unpermute_token(&self, id: usize) -> usize {
        match id.checked_sub(CONTENT_OFFSET) {
            Some(c) if c < self.n_content() => CONTENT_OFFSET + self.inverse[c],
            _ => id,
        }
    }

    pub fn render(&self, sym: Sym) -> usize {
        match sym {
            Sym::Special(id) | Sym::Foreign(id) => id,
            Sym::Content(c) => CONTENT_OFFSET + self.permutation[c],
            Sym::Marker => self.marker(),
            Sym::Delimiter => self.delimiter(),
            Sym::Filler(j) => self.function_tokens[FIRST_FILLER_SLOT + j],
        }
    }

    pub fn classify(&self, id: usize) -> Sym {
        if id < CONTENT_OFFSET {
            return Sym::Special(id);
        }
        let c = id - CONTENT_OFFSET;
        if c < self.n_content() {
            return Sym::Content(self.inverse[c]);
        }
        match self.function_tokens.iter().position(|&t| t == id) {
            Some(MARKER_SLOT) => Sym::Marker,
            Some(DELIMITER_SLOT) => Sym::Delimiter,
            Some(s) => Sym::Filler(s - FIRST_FILLER_SLOT),
            None => Sym::Foreign(id),
        }
    }

    pub fn render_all(&self, syms: &[Sym]) -> Vec<usize> {
        syms.iter().map(|&s| self.render(s)).collect()
    }

    pub fn classify_all(&self, ids: &[usize]) -> Vec<Sym> {
        ids.iter().map(|&t| self.classify(t)).collect()
    }
}
