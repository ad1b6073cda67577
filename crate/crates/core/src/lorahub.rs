//! Few-shot weight search over a fixed set of adapter modules.
//!
//! The objective for weights `w` is the few-shot score of the base model with
//! `compose(modules, w)` applied, plus `l1_penalty·Σ|wᵢ|`. With the ROUGE-L
//! objective the score is `−mean ROUGE-L` of greedy generations; with the loss
//! objective it is the mean teacher-forced loss.

use crate::composition::{compose_modules, CompositionSpec};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::lora::{apply_module, CompositionMode, LoraModule};
use crate::metrics::{evaluate, DecodeConfig, GreedySummarizer, MetricRegistry, ROUGEL};
use crate::search::{gradient_free_minimize, Evaluation, ObjectiveMetric, SearchConfig};
use crate::transformer::{lm_loss, Model, TeacherForced};

#[derive(Clone, Debug)]
pub struct LoraHubOutcome {
    pub weights: Vec<f64>,
    pub module: LoraModule,
    pub start_value: f64,
    pub best_value: f64,
    pub trace: Vec<Evaluation>,
}

/// Objective value of one weight vector; exposed for inspection and tests.
pub fn lorahub_objective(
    base: &Model<f32>,
    modules: &[LoraModule],
    fewshot: &[Example],
    weights: &[f64],
    search: &SearchConfig,
    mode: CompositionMode,
    decode: DecodeConfig,
) -> Result<f64> {
    let composed = compose_modules(&CompositionSpec::new(modules, weights.to_vec(), mode))?;
    let adapted = apply_module(base, &composed)?;
    let score = match search.objective {
        ObjectiveMetric::RougeL => {
            let summarizer = GreedySummarizer::new(&adapted, decode);
            let report = evaluate(&summarizer, fewshot, &[ROUGEL.to_string()], &MetricRegistry::default())?;
            -report.mean(ROUGEL)
        }
        ObjectiveMetric::Loss => {
            let batch: Vec<TeacherForced> = fewshot.iter().map(Example::teacher_forced).collect();
            lm_loss(&adapted, &batch)? as f64
        }
    };
    Ok(score + search.l1_penalty * weights.iter().map(|w| w.abs()).sum::<f64>())
}

/// Searches composition weights from the uniform `1/N` start. The result is
/// never worse on the objective than that start.
pub fn lorahub_optimize(
    base: &Model<f32>,
    modules: &[LoraModule],
    fewshot: &[Example],
    search: &SearchConfig,
    mode: CompositionMode,
    decode: DecodeConfig,
) -> Result<LoraHubOutcome> {
    if fewshot.is_empty() {
        return Err(Error::Data("LoraHub needs at least one few-shot example".into()));
    }
    if modules.is_empty() {
        return Err(Error::Config("LoraHub needs at least one module".into()));
    }
    search.validate()?;
    for m in modules {
        apply_module(base, m)?;
    }
    let outcome = gradient_free_minimize(
        |w| lorahub_objective(base, modules, fewshot, w, search, mode, decode),
        modules.len(),
        search,
    )?;
    let module = compose_modules(&CompositionSpec::new(modules, outcome.best_weights.clone(), mode))?;
    Ok(LoraHubOutcome {
        weights: outcome.best_weights.clone(),
        module,
        start_value: outcome.start_value(),
        best_value: outcome.best_value,
        trace: outcome.trace,
    })
}
