//! Experiment plans: which regime, languages, seeds, data and runs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::language::VocabLayout;
use crate::data::splits::{few_shot_counts, low_data_counts, SplitCounts, SyntheticSource};
use crate::data::synthetic::GenShape;
use crate::data::Truncation;
use crate::error::{Error, Result};
use crate::metrics::{MetricRegistry, ROUGEL};
use crate::search::SearchConfig;
use crate::transformer::ModelConfig;

use super::train::{TrainConfig, TrainMode, DEFAULT_EVAL_EVERY, LOW_DATA_EVAL_EVERY};
use super::warmup::WarmupConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// Per-language training on the full training split.
    High,
    /// Per-language training on `k` train and `k` validation examples.
    Low { k: usize },
    /// Train on `source`, test on `targets`.
    Zeroshot { source: Vec<String>, targets: Vec<String> },
    /// For every language, train on all the others and test on it.
    LeaveOneOut,
    /// Zero-shot models from `source`, then `k` target examples each.
    Fewshot {
        k: usize,
        source: Vec<String>,
        targets: Vec<String>,
    },
}

impl Regime {
    /// Label used in report rows.
    pub fn label(&self) -> String {
        match self {
            Regime::High => "high".into(),
            Regime::Low { k } => format!("low{k}"),
            Regime::Zeroshot { .. } => super::regime::ZEROSHOT.into(),
            Regime::LeaveOneOut => "leave_one_out".into(),
            Regime::Fewshot { k, .. } => format!("fewshot{k}"),
        }
    }

    pub fn default_seeds(&self) -> Vec<u64> {
        match self {
            Regime::Low { .. } | Regime::Fewshot { .. } => vec![0, 1, 2],
            _ => vec![0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    #[serde(default)]
    pub global_seed: u64,
    pub n_content: usize,
    pub n_function: usize,
    #[serde(default)]
    pub shape: GenShape,
    /// Examples per language for regimes that use the full data.
    pub train_per_language: usize,
    pub val_per_language: usize,
    pub test_per_language: usize,
    #[serde(default)]
    pub truncation: Truncation,
}

/// Model dimensions; the vocabulary size follows from the data layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ffn: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tied_head: bool,
}

impl ModelSpec {
    pub fn config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ffn: self.d_ffn,
            max_seq_len: self.max_seq_len,
            seed: self.seed,
            tied_head: self.tied_head,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseSpec {
    /// Freshly initialized from the model seed.
    Random,
    /// Random init followed by multilingual LM pretraining.
    Warmup(WarmupConfig),
    /// A saved model file, relative to the working directory.
    Checkpoint { path: PathBuf },
}

/// One training mode swept over a list of learning rates; the run with the
/// best validation score is kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub mode: TrainMode,
    pub learning_rates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub max_steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Defaults to 10 for low-data regimes and 50 otherwise.
    #[serde(default)]
    pub eval_every: Option<usize>,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub allow_off_grid_lr: bool,
}

fn default_batch() -> usize {
    8
}
fn default_clip() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FewShotMethod {
    ClFullFt,
    ClLora,
    Lorahub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotSettings {
    pub steps: usize,
    #[serde(default = "default_fewshot_eval")]
    pub eval_every: usize,
    pub learning_rate: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<FewShotMethod>,
    #[serde(default)]
    pub lorahub: SearchConfig,
}

fn default_fewshot_eval() -> usize {
    LOW_DATA_EVAL_EVERY
}
fn default_methods() -> Vec<FewShotMethod> {
    vec![FewShotMethod::ClFullFt, FewShotMethod::ClLora, FewShotMethod::Lorahub]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_resamples() -> usize {
    crate::metrics::bootstrap::DEFAULT_RESAMPLES
}
fn default_threshold() -> f64 {
    crate::metrics::bootstrap::DEFAULT_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub name: String,
    pub regime: Regime,
    pub languages: Vec<String>,
    /// Defaults to three seeds for low-data and few-shot regimes, one otherwise.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_selection")]
    pub selection_metric: String,
    pub data: DataSpec,
    pub model: ModelSpec,
    #[serde(default = "default_base")]
    pub base: BaseSpec,
    pub runs: Vec<RunSpec>,
    pub train: TrainSettings,
    #[serde(default)]
    pub fewshot: Option<FewShotSettings>,
    #[serde(default)]
    pub bootstrap: Option<BootstrapSettings>,
}

fn default_selection() -> String {
    ROUGEL.to_string()
}
fn default_base() -> BaseSpec {
    BaseSpec::Random
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| self.regime.default_seeds())
    }

    pub fn layout(&self) -> Result<VocabLayout> {
        let langs: Vec<&str> = self.languages.iter().map(String::as_str).collect();
        VocabLayout::new(self.data.n_content, self.data.n_function, &langs)
    }

    pub fn source(&self) -> Result<SyntheticSource> {
        SyntheticSource::new(self.layout()?, self.data.global_seed, self.data.shape.clone())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let c = self.model.config(self.layout()?.vocab_size());
        c.validate()?;
        Ok(c)
    }

    /// Per-language counts for the training languages of this regime.
    pub fn counts(&self) -> Result<SplitCounts> {
        let test = self.data.test_per_language;
        match &self.regime {
            Regime::Low { k } => low_data_counts(*k, test),
            _ => Ok(SplitCounts {
                train: self.data.train_per_language,
                val: self.data.val_per_language,
                test,
            }),
        }
    }

    pub fn eval_every(&self) -> usize {
        self.train.eval_every.unwrap_or(match self.regime {
            Regime::Low { .. } => LOW_DATA_EVAL_EVERY,
            _ => DEFAULT_EVAL_EVERY,
        })
    }

    /// Training config for one run at one learning rate and seed.
    pub fn train_config(&self, mode: &TrainMode, learning_rate: f64, seed: u64) -> TrainConfig {
        let mode = match mode {
            TrainMode::Lora(c) => TrainMode::Lora(crate::lora::LoraConfig { seed, ..c.clone() }),
            m => m.clone(),
        };
        TrainConfig {
            batch_size: self.train.batch_size,
            eval_every: self.eval_every(),
            truncation: self.data.truncation,
            seed,
            grad_clip: self.train.grad_clip,
            allow_off_grid_lr: self.train.allow_off_grid_lr,
            selection_metric: self.selection_metric.clone(),
            ..TrainConfig::new(mode, learning_rate, self.train.max_steps)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("plan name {:?} must be a non-empty file-name component", self.name)));
        }
        let source = self.source()?;
        let known = |langs: &[String]| -> Result<()> {
            if langs.is_empty() {
                return Err(Error::Config("language list is empty".into()));
            }
            for l in langs {
                source.spec(l)?;
            }
            Ok(())
        };
        known(&self.languages)?;
        let seeds = self.seeds();
        if seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::Config(format!("duplicate seeds in {seeds:?}")));
        }
        MetricRegistry::default().validate(std::slice::from_ref(&self.selection_metric))?;
        let model = self.model_config()?;
        let t = self.data.truncation;
        if t.max_input + t.max_output + 3 > model.max_seq_len {
            return Err(Error::Config(format!(
                "max_input {} + max_output {} plus BOS, SEP and EOS exceed max_seq_len {}",
                t.max_input, t.max_output, model.max_seq_len
            )));
        }
        if self.runs.is_empty() {
            return Err(Error::Config("plan has no runs".into()));
        }
        let counts = self.counts()?;
        if counts.test == 0 {
            return Err(Error::Config("test_per_language must be >= 1".into()));
        }
        match &self.regime {
            Regime::Zeroshot { source: s, targets } | Regime::Fewshot { source: s, targets, .. } => {
                known(s)?;
                known(targets)?;
                if let Some(t) = targets.iter().find(|t| s.contains(t)) {
                    return Err(Error::Config(format!("target language {t} is also a source language")));
                }
            }
            Regime::LeaveOneOut if self.languages.len() < 2 => {
                return Err(Error::Config("leave-one-out needs at least two languages".into()));
            }
            _ => {}
        }
        if counts.train == 0 || counts.val == 0 {
            return Err(Error::Config("train and validation counts must be >= 1".into()));
        }
        for run in &self.runs {
            if run.learning_rates.is_empty() {
                return Err(Error::Config(format!("run {} has no learning rates", run.mode.label())));
            }
            if let TrainMode::Lora(c) = &run.mode {
                c.validate(&model)?;
            }
            for &lr in &run.learning_rates {
                self.train_config(&run.mode, lr, 0).validate()?;
            }
        }
        let mut labels: Vec<String> = self.runs.iter().map(|r| r.mode.label()).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.runs.len() {
            return Err(Error::Config("two runs share a mode label".into()));
        }
        match (&self.regime, &self.fewshot) {
            (Regime::Fewshot { k, .. }, Some(f)) => {
                few_shot_counts(*k, 0)?;
                if f.eval_every == 0 {
                    return Err(Error::Config("fewshot eval_every must be >= 1".into()));
                }
                if f.methods.is_empty() {
                    return Err(Error::Config("fewshot needs at least one method".into()));
                }
                f.lorahub.validate()?;
                for run in &self.runs {
                    let mut c = self.train_config(&run.mode, f.learning_rate, 0);
                    c.eval_every = f.eval_every;
                    c.validate()?;
                }
            }
            (Regime::Fewshot { .. }, None) => {
                return Err(Error::Config("fewshot regime needs a fewshot section".into()));
            }
            (_, Some(_)) => {
                return Err(Error::Config("fewshot section given for a non-fewshot regime".into()));
            }
            _ => {}
        }
        if let BaseSpec::Warmup(w) = &self.base {
            w.validate()?;
            if let Some(l) = &w.languages {
                known(l)?;
            }
        }
        if let Some(b) = &self.bootstrap {
            if b.resamples == 0 || !(b.threshold > 0.0 && b.threshold < 1.0) {
                return Err(Error::Config("bootstrap needs resamples >= 1 and 0 < threshold < 1".into()));
            }
        }
        Ok(())
    }
}
