//! Document/summary pairs built by salience extraction.
//!
//! A base document is `doc_len` segments, each `segment_len` Zipf-distributed
//! content symbols closed by a delimiter, with optional filler symbols between
//! segments. `n_salient` segments are prefixed by a marker. The summary is the
//! salient segments in order, marker stripped. Both sides are then rendered
//! through the language's token map.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::language::{LanguageSpec, Sym};
use super::Example;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenShape {
    pub doc_len: usize,
    pub n_salient: usize,
    #[serde(default = "default_segment_len")]
    pub segment_len: usize,
    /// Probability of a filler symbol after each segment.
    #[serde(default = "default_filler_rate")]
    pub filler_rate: f64,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
}

fn default_segment_len() -> usize {
    2
}
fn default_filler_rate() -> f64 {
    0.25
}
fn default_zipf() -> f64 {
    1.0
}

impl Default for GenShape {
    fn default() -> Self {
        GenShape {
            doc_len: 24,
            n_salient: 4,
            segment_len: default_segment_len(),
            filler_rate: default_filler_rate(),
            zipf_exponent: default_zipf(),
        }
    }
}

impl GenShape {
    pub fn validate(&self) -> Result<()> {
        if self.n_salient < 1 || self.n_salient >= self.doc_len {
            return Err(Error::Data(format!(
                "need 1 <= n_salient < doc_len, got n_salient={} doc_len={}",
                self.n_salient, self.doc_len
            )));
        }
        if self.segment_len == 0 {
            return Err(Error::Data("segment_len must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.filler_rate) || !self.zipf_exponent.is_finite() {
            return Err(Error::Data("filler_rate must lie in [0,1] and zipf_exponent be finite".into()));
        }
        Ok(())
    }

    /// Upper bound on document tokens.
    pub fn max_doc_tokens(&self) -> usize {
        self.doc_len * (self.segment_len + 2) + self.n_salient
    }

    pub fn summary_tokens(&self) -> usize {
        self.n_salient * (self.segment_len + 1)
    }
}

fn zipf_cdf(n: usize, s: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = (0..n)
        .map(|i| {
            acc += 1.0 / ((i + 1) as f64).powf(s);
            acc
        })
        .collect();
    for x in &mut cdf {
        *x /= acc;
    }
    cdf
}

/// Base-language symbols of one document and its summary.
pub fn gen_symbols(n_content: usize, n_fillers: usize, example_seed: u64, shape: &GenShape) -> Result<(Vec<Sym>, Vec<Sym>)> {
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(example_seed);
    let cdf = zipf_cdf(n_content, shape.zipf_exponent);
    let mut salient = vec![false; shape.doc_len];
    for i in sample(&mut rng, shape.doc_len, shape.n_salient) {
        salient[i] = true;
    }
    let mut doc = Vec::with_capacity(shape.max_doc_tokens());
    let mut summary = Vec::with_capacity(shape.summary_tokens());
    for &is_salient in &salient {
        if is_salient {
            doc.push(Sym::Marker);
        }
        let start = doc.len();
        for _ in 0..shape.segment_len {
            let u: f64 = rng.random();
            let c = cdf.partition_point(|&p| p < u).min(n_content - 1);
            doc.push(Sym::Content(c));
        }
        doc.push(Sym::Delimiter);
        if is_salient {
            summary.extend_from_slice(&doc[start..]);
        }
        if n_fillers > 0 && rng.random_bool(shape.filler_rate) {
            doc.push(Sym::Filler(rng.random_range(0..n_fillers)));
        }
    }
    Ok((doc, summary))
}

pub fn example_id(lang: &str, example_seed: u64) -> String {
    format!("{lang}-{example_seed:016x}")
}

pub fn gen_example(spec: &LanguageSpec, example_seed: u64, shape: &GenShape) -> Result<Example> {
    let (doc, summary) = gen_symbols(spec.n_content(), spec.n_fillers(), example_seed, shape)?;
    Ok(Example {
        id: example_id(&spec.lang_id, example_seed),
        lang: spec.lang_id.clone(),
        document: spec.render_all(&doc),
        summary: spec.render_all(&summary),
    })
}

/// The generative rule run backwards: every marked segment through its
/// closing delimiter, marker dropped.
pub fn extract_salient(doc: &[Sym]) -> Vec<Sym> {
    let mut out = Vec::new();
    let mut copying = false;
    for &s in doc {
        match s {
            Sym::Marker => copying = true,
            Sym::Delimiter if copying => {
                out.push(s);
                copying = false;
            }
            _ if copying => out.push(s),
            _ => {}
        }
    }
    out
}

/// Extraction on surface tokens of `spec`'s language.
pub fn extract_summary(spec: &LanguageSpec, document: &[usize]) -> Vec<usize> {
    spec.render_all(&extract_salient(&spec.classify_all(document)))
}
