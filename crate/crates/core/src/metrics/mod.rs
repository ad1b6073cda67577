//! ROUGE, paired bootstrap, a metric registry and test-set evaluation.

pub mod bootstrap;
pub mod rouge;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use bootstrap::{paired_bootstrap, SignificanceResult, Winner};
pub use rouge::{lcs_len, rouge_l, rouge_n, RougeScore};

use crate::data::{Example, EOS};
use crate::error::{Error, Result};
use crate::transformer::{generate_greedy, LanguageModel};

pub const ROUGE1: &str = "rouge1";
pub const ROUGE2: &str = "rouge2";
pub const ROUGEL: &str = "rougeL";
pub const BUILTIN_METRICS: [&str; 3] = [ROUGE1, ROUGE2, ROUGEL];
/// Reserved ids for user-supplied faithfulness and conciseness scorers.
pub const NLI_SLOT: &str = "nli";
pub const SEAHORSE_SLOT: &str = "seahorse";

/// `(hypothesis, reference, source) -> score`.
pub type ScoreFn = Arc<dyn Fn(&[usize], &[usize], &[usize]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct MetricRegistry {
    metrics: BTreeMap<String, ScoreFn>,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        let mut metrics: BTreeMap<String, ScoreFn> = BTreeMap::new();
        metrics.insert(ROUGE1.into(), Arc::new(|h, r, _| rouge_n(h, r, 1).f1));
        metrics.insert(ROUGE2.into(), Arc::new(|h, r, _| rouge_n(h, r, 2).f1));
        metrics.insert(ROUGEL.into(), Arc::new(|h, r, _| rouge_l(h, r).f1));
        MetricRegistry { metrics }
    }
}

impl std::fmt::Debug for MetricRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.metrics.keys()).finish()
    }
}

impl MetricRegistry {
    /// Adds or replaces a scorer. The ROUGE ids cannot be replaced.
    pub fn register(&mut self, id: &str, f: ScoreFn) -> Result<()> {
        if BUILTIN_METRICS.contains(&id) {
            return Err(Error::Config(format!("metric {id} is built in and cannot be replaced")));
        }
        self.metrics.insert(id.to_string(), f);
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.metrics.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.metrics.keys().map(String::as_str)
    }

    pub fn validate(&self, ids: &[String]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Config("no metrics requested".into()));
        }
        for id in ids {
            if !self.contains(id) {
                return Err(Error::Config(format!(
                    "unknown metric {id}; registered: {:?}",
                    self.metrics.keys().collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }

    pub fn score(&self, id: &str, hyp: &[usize], reference: &[usize], source: &[usize]) -> Result<f64> {
        let f = self
            .metrics
            .get(id)
            .ok_or_else(|| Error::Config(format!("unknown metric {id}")))?;
        Ok(f(hyp, reference, source))
    }
}

/// Produces a summary for one example.
pub trait Summarizer {
    fn summarize(&self, ex: &Example) -> Result<Vec<usize>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Summary tokens to generate at most, excluding the stop token.
    pub max_output: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { max_output: 32 }
    }
}

/// Greedy decoding of `[BOS] doc [SEP]` until `EOS`.
pub struct GreedySummarizer<'m, M: ?Sized> {
    pub model: &'m M,
    pub decode: DecodeConfig,
}

impl<'m, M: LanguageModel<f32> + ?Sized> GreedySummarizer<'m, M> {
    pub fn new(model: &'m M, decode: DecodeConfig) -> Self {
        GreedySummarizer { model, decode }
    }
}

impl<M: LanguageModel<f32> + ?Sized> Summarizer for GreedySummarizer<'_, M> {
    fn summarize(&self, ex: &Example) -> Result<Vec<usize>> {
        let mut out = generate_greedy(self.model, &ex.prompt(), self.decode.max_output + 1, Some(EOS))?;
        if out.last() == Some(&EOS) {
            out.pop();
        }
        out.truncate(self.decode.max_output);
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub lang: String,
    pub hypothesis: Vec<usize>,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Vec<String>,
    pub rows: Vec<EvalRow>,
    pub per_language: BTreeMap<String, BTreeMap<String, f64>>,
    pub language_counts: BTreeMap<String, usize>,
    pub overall: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn mean(&self, metric: &str) -> f64 {
        self.overall.get(metric).copied().unwrap_or(f64::NAN)
    }

    pub fn per_example(&self, metric: &str) -> Vec<f64> {
        self.rows.iter().map(|r| r.scores.get(metric).copied().unwrap_or(f64::NAN)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,lang");
        for m in &self.metrics {
            s.push(',');
            s.push_str(m);
        }
        s.push('\n');
        for r in &self.rows {
            write!(s, "{},{}", r.id, r.lang).expect("write to String");
            for m in &self.metrics {
                write!(s, ",{}", r.scores[m]).expect("write to String");
            }
            s.push('\n');
        }
        s
    }

    pub fn aggregates_json(&self) -> Value {
        json!({
            "metrics": self.metrics,
            "overall": self.overall,
            "per_language": self.per_language,
            "language_counts": self.language_counts,
        })
    }
}

/// Scores `summarizer` on every example of `testset`, in order.
pub fn evaluate(
    summarizer: &dyn Summarizer,
    testset: &[Example],
    metric_ids: &[String],
    registry: &MetricRegistry,
) -> Result<EvalReport> {
    registry.validate(metric_ids)?;
    if testset.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let mut rows = Vec::with_capacity(testset.len());
    for ex in testset {
        let hyp = summarizer.summarize(ex)?;
        let mut scores = BTreeMap::new();
        for m in metric_ids {
            scores.insert(m.clone(), registry.score(m, &hyp, &ex.summary, &ex.document)?);
        }
        rows.push(EvalRow {
            id: ex.id.clone(),
            lang: ex.lang.clone(),
            hypothesis: hyp,
            scores,
        });
    }
    let mut sums: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut language_counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in &rows {
        *language_counts.entry(r.lang.clone()).or_default() += 1;
        let e = sums.entry(r.lang.clone()).or_default();
        for (m, v) in &r.scores {
            *e.entry(m.clone()).or_default() += v;
        }
    }
    let per_language = sums
        .into_iter()
        .map(|(l, ms)| {
            let n = language_counts[&l] as f64;
            (l, ms.into_iter().map(|(m, v)| (m, v / n)).collect())
        })
        .collect();
    let n = rows.len() as f64;
    let overall = metric_ids
        .iter()
        .map(|m| (m.clone(), rows.iter().map(|r| r.scores[m]).sum::<f64>() / n))
        .collect();
    Ok(EvalReport {
        metrics: metric_ids.to_vec(),
        rows,
        per_language,
        language_counts,
        overall,
    })
}

/// Reference ceiling for synthetic data: extracts marked segments directly.
pub struct ExtractionOracle<'a> {
    pub specs: Vec<&'a crate::data::language::LanguageSpec>,
}

impl Summarizer for ExtractionOracle<'_> {
    fn summarize(&self, ex: &Example) -> Result<Vec<usize>> {
        let spec = self
            .specs
            .iter()
            .find(|s| s.lang_id == ex.lang)
            .ok_or_else(|| Error::Config(format!("no language spec for {}", ex.lang)))?;
        Ok(crate::data::synthetic::extract_summary(spec, &ex.document))
    }
}

pub fn default_metric_ids() -> Vec<String> {
    BUILTIN_METRICS.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::language::{gen_language_spec, VocabLayout};
    use crate::data::synthetic::{gen_example, GenShape};

    #[test]
    fn oracle_scores_one() {
        let layout = VocabLayout::new(40, 6, &["L0", "L1"]).unwrap();
        let specs: Vec<_> = ["L0", "L1"].iter().map(|l| gen_language_spec(&layout, 1, l).unwrap()).collect();
        let test: Vec<Example> = (0..10)
            .flat_map(|i| specs.iter().map(move |s| gen_example(s, i, &GenShape::default()).unwrap()))
            .collect();
        let oracle = ExtractionOracle {
            specs: specs.iter().collect(),
        };
        let rep = evaluate(&oracle, &test, &default_metric_ids(), &MetricRegistry::default()).unwrap();
        assert_eq!(rep.mean(ROUGEL), 1.0);
        assert_eq!(rep.language_counts["L1"], 10);
    }

    #[test]
    fn unknown_metric_and_empty_set() {
        struct Echo;
        impl Summarizer for Echo {
            fn summarize(&self, ex: &Example) -> Result<Vec<usize>> {
                Ok(ex.document.clone())
            }
        }
        let reg = MetricRegistry::default();
        assert!(matches!(evaluate(&Echo, &[], &default_metric_ids(), &reg), Err(Error::Data(_))));
        assert!(matches!(evaluate(&Echo, &[], &["bleu".to_string()], &reg), Err(Error::Config(_))));
    }

    #[test]
    fn builtins_protected_slots_open() {
        let mut reg = MetricRegistry::default();
        assert!(reg.register(ROUGEL, Arc::new(|_, _, _| 0.0)).is_err());
        reg.register(NLI_SLOT, Arc::new(|h, _, s| (h.len() <= s.len()) as u8 as f64)).unwrap();
        assert!(reg.contains(NLI_SLOT));
    }
}
