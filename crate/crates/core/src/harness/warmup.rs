//! Multilingual language-model pretraining of the base model.
//!
//! Fine-tuning experiments start from a model that has already seen every
//! language, the small-scale counterpart of a pretrained multilingual LM. The
//! objective is next-token prediction of `document [EOS]` after the prompt of
//! an empty document, `[BOS] [SEP]`, so pretraining and fine-tuning share the
//! prompt format.

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::splits::{make_splits, SplitCounts, SplitRequest, SyntheticSource};
use crate::data::{Example, BOS, EOS, SEP};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::transformer::{lm_loss_graph, LanguageModel, Model, TeacherForced};

use super::train::{clip_grad_norm, epoch_batches};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupConfig {
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_per_language")]
    pub examples_per_language: usize,
    /// Defaults to every language of the plan.
    #[serde(default)]
    pub languages: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

fn default_clip() -> f64 {
    1.0
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    8
}
fn default_per_language() -> usize {
    256
}

impl WarmupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.examples_per_language == 0 {
            return Err(Error::Config("warmup needs batch_size and examples_per_language >= 1".into()));
        }
        OptimizerConfig::adam(self.learning_rate).validate()
    }
}

/// `[BOS] [SEP]` prompt with the document as the predicted continuation.
pub fn lm_example(ex: &Example, max_tokens: usize) -> TeacherForced {
    let prompt = vec![BOS, SEP];
    let mut target: Vec<usize> = ex.document.iter().copied().take(max_tokens.saturating_sub(prompt.len() + 1)).collect();
    target.push(EOS);
    TeacherForced {
        id: ex.id.clone(),
        prompt,
        target,
    }
}

/// Pretrains a copy of `model` on documents drawn from `source`. Warmup
/// examples come from a dedicated seed stream, disjoint from experiment
/// splits.
pub fn warmup_base(model: &Model<f32>, source: &SyntheticSource, languages: &[String], config: &WarmupConfig) -> Result<Model<f32>> {
    config.validate()?;
    let mut model = model.clone();
    if config.steps == 0 {
        return Ok(model);
    }
    let langs: Vec<&str> = match &config.languages {
        Some(l) => l.iter().map(String::as_str).collect(),
        None => languages.iter().map(String::as_str).collect(),
    };
    let counts = SplitCounts {
        train: config.examples_per_language,
        val: 0,
        test: 0,
    };
    // A fixed offset keeps this stream away from run seeds.
    let splits = make_splits(source, &SplitRequest::uniform("warmup", &langs, counts), config.seed ^ WARMUP_STREAM)?;
    let max_tokens = model.config().max_seq_len;
    let data: Vec<TeacherForced> = splits.train(&langs).iter().map(|e| lm_example(e, max_tokens)).collect();
    model.params_mut().set_requires_grad(|_| true);
    let mut opt = Optimizer::<f32>::new(OptimizerConfig::adam(config.learning_rate))?;
    let mut step = 0;
    let mut epoch = 0;
    while step < config.steps {
        for idx in epoch_batches(data.len(), config.batch_size, config.seed, epoch) {
            if step >= config.steps {
                break;
            }
            step += 1;
            let batch: Vec<TeacherForced> = idx.iter().map(|&i| data[i].clone()).collect();
            let mut grads = {
                let mut g = Graph::new();
                let loss = lm_loss_graph(&model, &mut g, &batch)?;
                let v = g.value(loss).item();
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("non-finite warmup loss {v} at step {step}")));
                }
                g.backward(loss)?
            };
            clip_grad_norm(&mut grads, config.grad_clip);
            opt.step(model.params_mut(), &grads)?;
        }
        epoch += 1;
    }
    model.freeze();
    Ok(model)
}

const WARMUP_STREAM: u64 = 0x5741_524d_5550;
