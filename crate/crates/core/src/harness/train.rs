//! Training loops with validation-based checkpoint selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{Example, Truncation};
use crate::error::{Error, Result};
use crate::lora::{apply_module, attach_adapters, extract_module, AdaptedModel, LoraConfig, LoraModule, Provenance};
use crate::metrics::{evaluate, DecodeConfig, GreedySummarizer, MetricRegistry, ROUGEL};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::params::{GradMap, ParamStore};
use crate::transformer::{is_attention_path, lm_loss_graph, LanguageModel, Model, TeacherForced};

pub const LR_GRID: [f64; 3] = [1e-3, 2e-4, 2e-5];
pub const DEFAULT_EVAL_EVERY: usize = 50;
pub const LOW_DATA_EVAL_EVERY: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainMode {
    FullFt,
    FtAtt,
    Lora(LoraConfig),
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::FullFt => "full_ft",
            TrainMode::FtAtt => "ft_att",
            TrainMode::Lora(_) => "lora",
        }
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            TrainMode::Lora(c) => Some(c.rank),
            _ => None,
        }
    }

    /// Report label, e.g. `full_ft` or `lora-4`.
    pub fn label(&self) -> String {
        match self {
            TrainMode::Lora(c) => format!("lora-{}", c.rank),
            m => m.name().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub max_steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub truncation: Truncation,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; 0 disables.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    /// Permits learning rates outside [`LR_GRID`].
    #[serde(default)]
    pub allow_off_grid_lr: bool,
    /// Validation metric that picks the retained checkpoint.
    #[serde(default = "default_selection")]
    pub selection_metric: String,
}

fn default_batch() -> usize {
    8
}
fn default_eval_every() -> usize {
    DEFAULT_EVAL_EVERY
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_clip() -> f64 {
    1.0
}
fn default_selection() -> String {
    ROUGEL.to_string()
}

impl TrainConfig {
    pub fn new(mode: TrainMode, learning_rate: f64, max_steps: usize) -> Self {
        TrainConfig {
            mode,
            learning_rate,
            max_steps,
            batch_size: default_batch(),
            eval_every: default_eval_every(),
            truncation: Truncation::default(),
            seed: 0,
            optimizer: default_optimizer(),
            grad_clip: default_clip(),
            allow_off_grid_lr: false,
            selection_metric: default_selection(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.allow_off_grid_lr && !LR_GRID.contains(&self.learning_rate) {
            return Err(Error::Config(format!(
                "learning rate {} is not in the grid {LR_GRID:?} (set allow_off_grid_lr to override)",
                self.learning_rate
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be >= 0".into()));
        }
        MetricRegistry::default().validate(std::slice::from_ref(&self.selection_metric))?;
        self.optimizer_config().validate()
    }

    fn optimizer_config(&self) -> OptimizerConfig {
        match self.optimizer {
            OptimizerKind::Sgd => OptimizerConfig::sgd(self.learning_rate),
            OptimizerKind::Adam => OptimizerConfig::adam(self.learning_rate),
        }
    }

    fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            max_output: self.truncation.max_output,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Snapshot {
    Full(Model<f32>),
    /// Adapter factors only; the base model is held by the caller.
    Adapters(LoraModule),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub snapshot: Snapshot,
    pub val_score: f64,
    pub metric: String,
}

impl Checkpoint {
    pub fn mode_name(&self) -> &'static str {
        match self.snapshot {
            Snapshot::Full(_) => "full",
            Snapshot::Adapters(_) => "lora",
        }
    }

    /// The runnable model: the full snapshot, or `base` with adapters applied.
    pub fn materialize(&self, base: &Model<f32>) -> Result<Trainee> {
        Ok(match &self.snapshot {
            Snapshot::Full(m) => Trainee::Full(m.clone()),
            Snapshot::Adapters(module) => Trainee::Adapted(apply_module(base, module)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub epoch: usize,
    pub examples: usize,
    pub loss: f64,
    pub val_score: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub trace: Vec<TraceEntry>,
}

impl TrainOutcome {
    pub fn evaluated(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.trace.iter().filter_map(|t| t.val_score.map(|v| (t.step, v)))
    }
}

/// A model being trained.
#[derive(Clone, Debug)]
pub enum Trainee {
    Full(Model<f32>),
    Adapted(AdaptedModel<f32>),
}

impl Trainee {
    pub fn as_lm(&self) -> &dyn LanguageModel<f32> {
        match self {
            Trainee::Full(m) => m,
            Trainee::Adapted(a) => a,
        }
    }

    fn trainable_mut(&mut self) -> &mut ParamStore<f32> {
        match self {
            Trainee::Full(m) => m.params_mut(),
            Trainee::Adapted(a) => a.adapter_params_mut(),
        }
    }

    fn snapshot(&self, step: usize, language: &str) -> Snapshot {
        match self {
            Trainee::Full(m) => Snapshot::Full(m.clone()),
            Trainee::Adapted(a) => Snapshot::Adapters(extract_module(
                a,
                Provenance {
                    language: Some(language.to_string()),
                    seed: Some(a.lora_config().seed),
                    step: Some(step as u64),
                    composition: None,
                },
            )),
        }
    }
}

/// Validation score of `model` under `metric` with greedy decoding.
pub fn validation_score(model: &dyn LanguageModel<f32>, val: &[Example], decode: DecodeConfig, metric: &str) -> Result<f64> {
    let registry = MetricRegistry::default();
    let summarizer = GreedySummarizer::new(model, decode);
    Ok(evaluate(&summarizer, val, &[metric.to_string()], &registry)?.mean(metric))
}

fn prepare(examples: &[Example], truncation: Truncation) -> Vec<TeacherForced> {
    examples
        .iter()
        .map(|e| {
            let mut e = e.clone();
            truncation.apply(&mut e);
            e.teacher_forced()
        })
        .collect()
}

/// Indices of the batches of one epoch: a seeded shuffle cut into
/// `batch_size` chunks (the last may be shorter).
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Rescales `grads` so their global norm is at most `max_norm`; 0 disables.
pub fn clip_grad_norm(grads: &mut GradMap<f32>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let sq: f64 = grads
        .iter()
        .flat_map(|(_, g)| g.data().iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        let paths: Vec<String> = grads.iter().map(|(p, _)| p.to_string()).collect();
        for p in paths {
            let g = grads.get(&p).expect("path from iteration").map(|x| x * s);
            grads.insert(p, g);
        }
    }
}

fn check_splits(train: &[Example], val: &[Example]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("empty validation split".into()));
    }
    Ok(())
}

/// Trains from `base` in the configured mode. Full modes train a copy of the
/// base; LoRA attaches fresh adapters and freezes the base.
pub fn train(base: &Model<f32>, train: &[Example], val: &[Example], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    check_splits(train, val)?;
    let trainee = match &config.mode {
        TrainMode::Lora(lora) => Trainee::Adapted(attach_adapters(base, lora)?),
        TrainMode::FullFt | TrainMode::FtAtt => Trainee::Full(base.clone()),
    };
    run(trainee, train, val, config)
}

/// Resumes from `checkpoint` with a fresh optimizer. Full checkpoints
/// continue in `full_ft` or `ft_att`; adapter checkpoints continue as LoRA.
pub fn continue_training(
    base: &Model<f32>,
    checkpoint: &Checkpoint,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let compatible = matches!(
        (&checkpoint.snapshot, &config.mode),
        (Snapshot::Full(_), TrainMode::FullFt | TrainMode::FtAtt) | (Snapshot::Adapters(_), TrainMode::Lora(_))
    );
    if !compatible {
        return Err(Error::Config(format!(
            "cannot continue a {} checkpoint in mode {}",
            checkpoint.mode_name(),
            config.mode.name()
        )));
    }
    if config.max_steps == 0 {
        return Ok(TrainOutcome {
            best: checkpoint.clone(),
            trace: Vec::new(),
        });
    }
    check_splits(train, val)?;
    run(checkpoint.materialize(base)?, train, val, config)
}

fn run(mut trainee: Trainee, train: &[Example], val: &[Example], config: &TrainConfig) -> Result<TrainOutcome> {
    match (&mut trainee, &config.mode) {
        (Trainee::Full(m), TrainMode::FullFt) => m.params_mut().set_requires_grad(|_| true),
        (Trainee::Full(m), TrainMode::FtAtt) => m.params_mut().set_requires_grad(is_attention_path),
        (Trainee::Adapted(a), TrainMode::Lora(_)) => a.adapter_params_mut().set_requires_grad(|_| true),
        (_, mode) => return Err(Error::Config(format!("trainee does not match mode {}", mode.name()))),
    }
    let mut langs: Vec<&str> = train.iter().map(|e| e.lang.as_str()).collect();
    langs.sort_unstable();
    langs.dedup();
    let language = langs.join("+");
    let metric = config.selection_metric.as_str();
    let data = prepare(train, config.truncation);
    let mut val = val.to_vec();
    for e in &mut val {
        config.truncation.apply(e);
    }
    let mut opt = Optimizer::<f32>::new(config.optimizer_config())?;
    let mut trace = Vec::with_capacity(config.max_steps);
    let mut best: Option<Checkpoint> = None;
    let mut step = 0;
    let mut epoch = 0;
    'outer: loop {
        for idx in epoch_batches(data.len(), config.batch_size, config.seed, epoch) {
            if step >= config.max_steps {
                break 'outer;
            }
            step += 1;
            let batch: Vec<TeacherForced> = idx.iter().map(|&i| data[i].clone()).collect();
            let (loss, mut grads) = {
                let mut g = Graph::new();
                let loss = lm_loss_graph(trainee.as_lm(), &mut g, &batch)?;
                let v = g.value(loss).item() as f64;
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss {v} at step {step}")));
                }
                (v, g.backward(loss)?)
            };
            clip_grad_norm(&mut grads, config.grad_clip);
            opt.step(trainee.trainable_mut(), &grads)?;
            let val_score = if step % config.eval_every == 0 || step == config.max_steps {
                let s = validation_score(trainee.as_lm(), &val, config.decode(), metric)?;
                if best.as_ref().is_none_or(|b| s > b.val_score) {
                    best = Some(Checkpoint {
                        step,
                        snapshot: trainee.snapshot(step, &language),
                        val_score: s,
                        metric: metric.to_string(),
                    });
                }
                Some(s)
            } else {
                None
            };
            trace.push(TraceEntry {
                step,
                epoch,
                examples: batch.len(),
                loss,
                val_score,
            });
        }
        epoch += 1;
    }
    let best = match best {
        Some(b) => b,
        None => {
            let s = validation_score(trainee.as_lm(), &val, config.decode(), metric)?;
            Checkpoint {
                step,
                snapshot: trainee.snapshot(step, &language),
                val_score: s,
                metric: metric.to_string(),
            }
        }
    };
    Ok(TrainOutcome { best, trace })
}
