//! Train/validation/test splits per regime.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::language::{gen_language_spec, LanguageSpec, VocabLayout};
use super::synthetic::{gen_example, GenShape};
use super::{seed_hash, Dataset, Example};
use crate::error::{Error, Result};

pub const LOW_DATA_KS: [usize; 5] = [16, 64, 256, 1024, 4096];
pub const FEW_SHOT_KS: [usize; 2] = [16, 64];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// `k` train and `k` validation examples.
pub fn low_data_counts(k: usize, test: usize) -> Result<SplitCounts> {
    if !LOW_DATA_KS.contains(&k) {
        return Err(Error::Config(format!("low-data k must be one of {LOW_DATA_KS:?}, got {k}")));
    }
    Ok(SplitCounts { train: k, val: k, test })
}

/// 16 shots split 14/2, 64 shots split 60/4.
pub fn few_shot_counts(k: usize, test: usize) -> Result<SplitCounts> {
    let (train, val) = match k {
        16 => (14, 2),
        64 => (60, 4),
        _ => return Err(Error::Config(format!("few-shot k must be one of {FEW_SHOT_KS:?}, got {k}"))),
    };
    Ok(SplitCounts { train, val, test })
}

/// What to draw, per language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRequest {
    pub regime: String,
    pub counts: BTreeMap<String, SplitCounts>,
}

impl SplitRequest {
    pub fn uniform(regime: impl Into<String>, langs: &[&str], counts: SplitCounts) -> Self {
        SplitRequest {
            regime: regime.into(),
            counts: langs.iter().map(|l| (l.to_string(), counts)).collect(),
        }
    }

    /// Training languages are every language except `held_out`, which only
    /// gets a test split.
    pub fn leave_one_out(langs: &[&str], held_out: &str, counts: SplitCounts) -> Result<Self> {
        if !langs.contains(&held_out) {
            return Err(Error::Config(format!("held-out language {held_out} is not in {langs:?}")));
        }
        let counts = langs
            .iter()
            .map(|&l| {
                let c = if l == held_out {
                    SplitCounts {
                        train: 0,
                        val: 0,
                        test: counts.test,
                    }
                } else {
                    counts
                };
                (l.to_string(), c)
            })
            .collect();
        Ok(SplitRequest {
            regime: format!("leave_one_out:{held_out}"),
            counts,
        })
    }

    pub fn train_languages(&self) -> Vec<&str> {
        self.counts
            .iter()
            .filter(|(_, c)| c.train > 0)
            .map(|(l, _)| l.as_str())
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LangSplit {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    pub regime: String,
    pub seed: u64,
    pub languages: BTreeMap<String, LangSplit>,
}

impl SplitPlan {
    pub fn train(&self, langs: &[&str]) -> Vec<Example> {
        self.collect(langs, |s| &s.train)
    }

    pub fn val(&self, langs: &[&str]) -> Vec<Example> {
        self.collect(langs, |s| &s.val)
    }

    pub fn test(&self, lang: &str) -> &[Example] {
        self.languages.get(lang).map_or(&[], |s| &s.test)
    }

    fn collect(&self, langs: &[&str], f: impl Fn(&LangSplit) -> &Vec<Example>) -> Vec<Example> {
        langs
            .iter()
            .filter_map(|l| self.languages.get(*l))
            .flat_map(|s| f(s).iter().cloned())
            .collect()
    }

    /// `{regime, seed, languages: {lang: {train, val, test}}}` of example ids.
    pub fn manifest(&self) -> Value {
        let langs: serde_json::Map<String, Value> = self
            .languages
            .iter()
            .map(|(l, s)| {
                let ids = |v: &[Example]| v.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
                (
                    l.clone(),
                    json!({"train": ids(&s.train), "val": ids(&s.val), "test": ids(&s.test)}),
                )
            })
            .collect();
        json!({"regime": self.regime, "seed": self.seed, "languages": langs})
    }

    fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in self.languages.values() {
            for ex in s.train.iter().chain(&s.val).chain(&s.test) {
                if !seen.insert(ex.id.as_str()) {
                    return Err(Error::Data(format!("example id {} appears in more than one split", ex.id)));
                }
            }
        }
        Ok(())
    }
}

/// A provider of examples per language.
pub trait ExampleSource {
    fn draw(&self, lang: &str, counts: SplitCounts, seed: u64) -> Result<LangSplit>;
}

/// Deterministic per `(seed, lang)`; fails if any split is short.
pub fn make_splits(source: &dyn ExampleSource, request: &SplitRequest, seed: u64) -> Result<SplitPlan> {
    let mut languages = BTreeMap::new();
    for (lang, &counts) in &request.counts {
        languages.insert(lang.clone(), source.draw(lang, counts, seed)?);
    }
    let plan = SplitPlan {
        regime: request.regime.clone(),
        seed,
        languages,
    };
    plan.check_disjoint()?;
    Ok(plan)
}

impl ExampleSource for Dataset {
    fn draw(&self, lang: &str, counts: SplitCounts, seed: u64) -> Result<LangSplit> {
        let mut pool: Vec<&Example> = self.examples.iter().filter(|e| e.lang == lang).collect();
        let need = counts.train + counts.val + counts.test;
        if pool.len() < need {
            return Err(Error::Data(format!(
                "language {lang} needs {need} examples but has {} (short by {})",
                pool.len(),
                need - pool.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed_hash(&[b"split", &seed.to_le_bytes(), lang.as_bytes()]));
        pool.shuffle(&mut rng);
        let mut it = pool.into_iter().cloned();
        let mut take = |n| it.by_ref().take(n).collect::<Vec<_>>();
        Ok(LangSplit {
            train: take(counts.train),
            val: take(counts.val),
            test: take(counts.test),
        })
    }
}

/// Unbounded generator over synthetic languages. Test sets depend only on the
/// generator's `global_seed`, so every run seed scores the same test set.
#[derive(Clone, Debug)]
pub struct SyntheticSource {
    pub layout: VocabLayout,
    pub global_seed: u64,
    pub shape: GenShape,
    specs: BTreeMap<String, LanguageSpec>,
}

impl SyntheticSource {
    pub fn new(layout: VocabLayout, global_seed: u64, shape: GenShape) -> Result<Self> {
        layout.validate()?;
        shape.validate()?;
        let specs = layout
            .languages
            .iter()
            .map(|l| Ok((l.clone(), gen_language_spec(&layout, global_seed, l)?)))
            .collect::<Result<_>>()?;
        Ok(SyntheticSource {
            layout,
            global_seed,
            shape,
            specs,
        })
    }

    pub fn spec(&self, lang: &str) -> Result<&LanguageSpec> {
        self.specs
            .get(lang)
            .ok_or_else(|| Error::Config(format!("unknown language {lang}")))
    }

    pub fn specs(&self) -> impl Iterator<Item = &LanguageSpec> {
        self.specs.values()
    }

    fn stream(&self, lang: &str, tag: &[u8], seed: u64, n: usize, taken: &mut BTreeSet<u64>) -> Result<Vec<Example>> {
        let spec = self.spec(lang)?;
        let mut out = Vec::with_capacity(n);
        let mut i = 0u64;
        while out.len() < n {
            let s = seed_hash(&[
                b"example",
                &self.global_seed.to_le_bytes(),
                &seed.to_le_bytes(),
                lang.as_bytes(),
                tag,
                &i.to_le_bytes(),
            ]);
            i += 1;
            if taken.insert(s) {
                out.push(gen_example(spec, s, &self.shape)?);
            }
        }
        Ok(out)
    }
}

impl ExampleSource for SyntheticSource {
    fn draw(&self, lang: &str, counts: SplitCounts, seed: u64) -> Result<LangSplit> {
        let mut taken = BTreeSet::new();
        let test = self.stream(lang, b"test", 0, counts.test, &mut taken)?;
        let train = self.stream(lang, b"train", seed, counts.train, &mut taken)?;
        let val = self.stream(lang, b"val", seed, counts.val, &mut taken)?;
        Ok(LangSplit { train, val, test })
    }
}
