//! Executes an [`ExperimentPlan`]: the matrix of seeds × languages for one
//! regime, evaluated on every target test set.
//!
//! Cells are independent and may run on separate threads (`LORA_FORGE_THREADS`
//! caps the count). Each cell owns its models; results are merged in cell
//! order, so the report does not depend on completion order.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::composition::uniform_average;
use crate::data::splits::{few_shot_counts, make_splits, SplitCounts, SplitPlan, SplitRequest, SyntheticSource};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::lora::{save_module, CompositionMode, LoraModule};
use crate::lorahub::lorahub_optimize;
use crate::metrics::{evaluate, paired_bootstrap, DecodeConfig, GreedySummarizer, MetricRegistry, ROUGE1, ROUGE2, ROUGEL};
use crate::search::SearchConfig;
use crate::transformer::{build_model, load_model, save_model, LanguageModel, Model};

use super::plan::{BaseSpec, ExperimentPlan, FewShotMethod, Regime, RunSpec};
use super::report::{Comparison, ExperimentReport, ReportRow};
use super::train::{continue_training, train, TrainMode, TrainOutcome};
use super::warmup::warmup_base;

pub const THREADS_ENV: &str = "LORA_FORGE_THREADS";
/// Regime label of zero-shot rows, also used inside few-shot plans.
pub const ZEROSHOT: &str = "zeroshot";

/// Report plus the adapter modules produced, keyed by file name.
#[derive(Clone, Debug)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub modules: BTreeMap<String, LoraModule>,
}

impl ExperimentRun {
    /// Writes `modules/*.lora`, `report.csv` and `report.md` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mdir = dir.join("modules");
        std::fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
        let mut written = Vec::new();
        for (name, m) in &self.modules {
            let p = mdir.join(name);
            save_module(m, &p)?;
            written.push(p);
        }
        for (file, text) in [
            ("report.csv", self.report.to_csv()?),
            ("report.md", super::report::render_report(&self.report, super::report::ReportFormat::Md)?),
        ] {
            let p = dir.join(file);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            written.push(p);
        }
        Ok(written)
    }
}

/// The model every run of the plan starts from.
pub fn prepare_base(plan: &ExperimentPlan, workdir: &Path) -> Result<Model<f32>> {
    let config = plan.model_config()?;
    let mut model = match &plan.base {
        BaseSpec::Random => build_model(&config)?,
        BaseSpec::Warmup(w) => warmup_base(&build_model(&config)?, &plan.source()?, &plan.languages, w)?,
        BaseSpec::Checkpoint { path } => {
            let m = load_model(&workdir.join(path))?;
            if m.config().vocab_size != config.vocab_size || m.config().d_model != config.d_model {
                return Err(Error::Config(format!(
                    "base checkpoint {} does not match the plan's model dimensions",
                    path.display()
                )));
            }
            m
        }
    };
    model.freeze();
    Ok(model)
}

/// Saves the base model so later commands can reuse it.
pub fn save_base(model: &Model<f32>, path: &Path) -> Result<()> {
    save_model(model, path)
}

/// Worker threads: the env override, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Clone, Debug)]
enum CellKind {
    /// Train and test in one language (high and low data).
    InLanguage(String),
    /// Train on sources, test on targets.
    Transfer,
    /// Train on everything but this language, test on it.
    HeldOut(String),
}

#[derive(Clone, Debug)]
struct Cell {
    seed: u64,
    kind: CellKind,
}

impl Cell {
    fn id(&self, regime: &str) -> String {
        match &self.kind {
            CellKind::InLanguage(l) | CellKind::HeldOut(l) => format!("{regime}/seed={}/lang={l}", self.seed),
            CellKind::Transfer => format!("{regime}/seed={}", self.seed),
        }
    }
}

#[derive(Default)]
struct CellOutput {
    rows: Vec<(ReportRow, Vec<f64>)>,
    modules: Vec<(String, LoraModule)>,
}

/// Runs every cell of `plan` from `base`.
pub fn run_regime(plan: &ExperimentPlan, base: &Model<f32>) -> Result<ExperimentRun> {
    plan.validate()?;
    let source = plan.source()?;
    let regime = plan.regime.label();
    let cells: Vec<Cell> = plan
        .seeds()
        .into_iter()
        .flat_map(|seed| {
            let kinds: Vec<CellKind> = match &plan.regime {
                Regime::High | Regime::Low { .. } => plan.languages.iter().cloned().map(CellKind::InLanguage).collect(),
                Regime::LeaveOneOut => plan.languages.iter().cloned().map(CellKind::HeldOut).collect(),
                Regime::Zeroshot { .. } | Regime::Fewshot { .. } => vec![CellKind::Transfer],
            };
            kinds.into_iter().map(move |kind| Cell { seed, kind })
        })
        .collect();

    let outputs = run_parallel(cells.len(), thread_count(), |i| {
        let cell = &cells[i];
        CellRunner::new(plan, &source, base, cell.seed)
            .run(&cell.kind)
            .map_err(|e| e.in_cell(cell.id(&regime)))
    })?;

    let mut rows = Vec::new();
    let mut modules = BTreeMap::new();
    for out in outputs {
        rows.extend(out.rows);
        for (name, m) in out.modules {
            modules.insert(format!("{}-{name}.lora", plan.name), m);
        }
    }
    let comparisons = match &plan.bootstrap {
        Some(b) => compare_best(&rows, b.resamples, b.threshold, b.seed)?,
        None => Vec::new(),
    };
    let rows = rows.into_iter().map(|(r, _)| r).collect();
    Ok(ExperimentRun {
        report: ExperimentReport::new(rows, comparisons),
        modules,
    })
}

/// Runs `n` jobs on up to `threads` workers and returns results in job order.
/// On failure the error of the lowest-numbered failing job is returned.
fn run_parallel<T: Send>(n: usize, threads: usize, job: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, n.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = job(i);
                slots.lock().expect("no worker panicked holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn compare_best(rows: &[(ReportRow, Vec<f64>)], resamples: usize, threshold: f64, seed: u64) -> Result<Vec<Comparison>> {
    let mut groups: BTreeMap<(String, String, u64), Vec<&(ReportRow, Vec<f64>)>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.0.regime.clone(), r.0.test_lang.clone(), r.0.seed))
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for ((regime, test_lang, s), mut g) in groups {
        if g.len() < 2 {
            continue;
        }
        g.sort_by(|a, b| b.0.rouge_l.total_cmp(&a.0.rouge_l).then_with(|| a.0.mode.cmp(&b.0.mode)));
        let (a, b) = (g[0], g[1]);
        if a.1.len() < 2 {
            continue;
        }
        let result = paired_bootstrap(&a.1, &b.1, resamples, threshold, seed ^ s)?;
        out.push(Comparison {
            regime,
            test_lang,
            seed: s,
            a: a.0.mode.clone(),
            b: b.0.mode.clone(),
            result,
        });
    }
    Ok(out)
}

struct CellRunner<'a> {
    plan: &'a ExperimentPlan,
    source: &'a SyntheticSource,
    base: &'a Model<f32>,
    seed: u64,
    regime: String,
    cache: HashMap<String, TrainOutcome>,
    out: CellOutput,
}

fn join(langs: &[&str]) -> String {
    langs.join("+")
}

impl<'a> CellRunner<'a> {
    fn new(plan: &'a ExperimentPlan, source: &'a SyntheticSource, base: &'a Model<f32>, seed: u64) -> Self {
        CellRunner {
            plan,
            source,
            base,
            seed,
            regime: plan.regime.label(),
            cache: HashMap::new(),
            out: CellOutput::default(),
        }
    }

    fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            max_output: self.plan.data.truncation.max_output,
        }
    }

    fn run(mut self, kind: &CellKind) -> Result<CellOutput> {
        let counts = self.plan.counts()?;
        match (kind, &self.plan.regime) {
            (CellKind::InLanguage(lang), _) => {
                let splits = self.splits(&[(lang.as_str(), counts)])?;
                let regime = self.regime.clone();
                for run in &self.plan.runs {
                    let outcome = self.best_run(run, &splits, &[lang])?;
                    self.record_trained(&regime, run, &outcome, &splits, &[lang], &[lang])?;
                }
            }
            (CellKind::HeldOut(held), _) => {
                let langs: Vec<&str> = self.plan.languages.iter().map(String::as_str).collect();
                let req = SplitRequest::leave_one_out(&langs, held, counts)?;
                let splits = make_splits(self.source, &req, self.seed)?;
                let train_langs: Vec<&str> = langs.iter().copied().filter(|l| l != held).collect();
                let regime = self.regime.clone();
                for run in &self.plan.runs {
                    let outcome = self.best_run(run, &splits, &train_langs)?;
                    self.record_trained(&regime, run, &outcome, &splits, &train_langs, &[held])?;
                }
            }
            (CellKind::Transfer, Regime::Zeroshot { source, targets }) => {
                let src: Vec<&str> = source.iter().map(String::as_str).collect();
                let tgt: Vec<&str> = targets.iter().map(String::as_str).collect();
                let test_only = SplitCounts {
                    train: 0,
                    val: 0,
                    test: counts.test,
                };
                let mut req: Vec<(&str, SplitCounts)> = src.iter().map(|&l| (l, counts)).collect();
                req.extend(tgt.iter().map(|&l| (l, test_only)));
                let splits = self.splits(&req)?;
                self.zero_shot(&splits, &src, &tgt)?;
            }
            (CellKind::Transfer, Regime::Fewshot { k, source, targets }) => {
                let src: Vec<&str> = source.iter().map(String::as_str).collect();
                let tgt: Vec<&str> = targets.iter().map(String::as_str).collect();
                let shots = few_shot_counts(*k, counts.test)?;
                let mut req: Vec<(&str, SplitCounts)> = src.iter().map(|&l| (l, counts)).collect();
                req.extend(tgt.iter().map(|&l| (l, shots)));
                let splits = self.splits(&req)?;
                let zero = self.zero_shot(&splits, &src, &tgt)?;
                self.few_shot(&splits, &src, &tgt, zero)?;
            }
            (CellKind::Transfer, r) => return Err(Error::State(format!("transfer cell in regime {}", r.label()))),
        }
        Ok(self.out)
    }

    fn splits(&self, counts: &[(&str, SplitCounts)]) -> Result<SplitPlan> {
        let req = SplitRequest {
            regime: self.regime.clone(),
            counts: counts.iter().map(|(l, c)| (l.to_string(), *c)).collect(),
        };
        make_splits(self.source, &req, self.seed)
    }

    /// Trains `run` at every learning rate and keeps the best by validation
    /// score (the first rate wins ties). Identical configurations are trained
    /// once per cell.
    fn best_run(&mut self, run: &RunSpec, splits: &SplitPlan, langs: &[&str]) -> Result<TrainOutcome> {
        let train_set = splits.train(langs);
        let val_set = splits.val(langs);
        let mut best: Option<TrainOutcome> = None;
        for &lr in &run.learning_rates {
            let config = self.plan.train_config(&run.mode, lr, self.seed);
            let key = format!("{}|{}", join(langs), serde_json::to_string(&config)?);
            let outcome = match self.cache.get(&key) {
                Some(o) => o.clone(),
                None => {
                    let o = train(self.base, &train_set, &val_set, &config)?;
                    self.cache.insert(key, o.clone());
                    o
                }
            };
            if best.as_ref().is_none_or(|b| outcome.best.val_score > b.best.val_score) {
                best = Some(outcome);
            }
        }
        best.ok_or_else(|| Error::Config(format!("run {} has no learning rates", run.mode.label())))
    }

    fn evaluate(&self, model: &dyn LanguageModel<f32>, test: &[Example]) -> Result<([f64; 3], Vec<f64>)> {
        let mut test = test.to_vec();
        for e in &mut test {
            e.document.truncate(self.plan.data.truncation.max_input);
        }
        let metrics: Vec<String> = [ROUGE1, ROUGE2, ROUGEL].iter().map(|s| s.to_string()).collect();
        let summarizer = GreedySummarizer::new(model, self.decode());
        let rep = evaluate(&summarizer, &test, &metrics, &MetricRegistry::default())?;
        Ok(([rep.mean(ROUGE1), rep.mean(ROUGE2), rep.mean(ROUGEL)], rep.per_example(ROUGEL)))
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        regime: &str,
        model: &dyn LanguageModel<f32>,
        splits: &SplitPlan,
        train_langs: &[&str],
        test_langs: &[&str],
        mode: &str,
        rank: Option<usize>,
        steps: Option<usize>,
        selected_step: Option<usize>,
    ) -> Result<()> {
        for &t in test_langs {
            let (m, per_example) = self.evaluate(model, splits.test(t))?;
            self.out.rows.push((
                ReportRow {
                    regime: regime.to_string(),
                    seed: self.seed,
                    train_langs: join(train_langs),
                    test_lang: t.to_string(),
                    mode: mode.to_string(),
                    rank,
                    steps,
                    rouge1: m[0],
                    rouge2: m[1],
                    rouge_l: m[2],
                    selected_step,
                },
                per_example,
            ));
        }
        Ok(())
    }

    fn module_name(&self, regime: &str, train_langs: &[&str], mode: &str) -> String {
        format!("{regime}-s{}-{}-{}", self.seed, join(train_langs), mode.replace('@', "-"))
    }

    fn keep_module(&mut self, regime: &str, train_langs: &[&str], mode: &str, module: LoraModule) {
        let name = self.module_name(regime, train_langs, mode);
        self.out.modules.push((name, module));
    }

    #[allow(clippy::too_many_arguments)]
    fn record_trained_as(
        &mut self,
        regime: &str,
        label: &str,
        mode: &TrainMode,
        outcome: &TrainOutcome,
        splits: &SplitPlan,
        train_langs: &[&str],
        test_langs: &[&str],
    ) -> Result<()> {
        let trainee = outcome.best.materialize(self.base)?;
        self.record(
            regime,
            trainee.as_lm(),
            splits,
            train_langs,
            test_langs,
            label,
            mode.rank(),
            Some(outcome.trace.len()),
            Some(outcome.best.step),
        )?;
        if let super::train::Snapshot::Adapters(m) = &outcome.best.snapshot {
            self.keep_module(regime, train_langs, label, m.clone());
        }
        Ok(())
    }

    fn record_trained(
        &mut self,
        regime: &str,
        run: &RunSpec,
        outcome: &TrainOutcome,
        splits: &SplitPlan,
        train_langs: &[&str],
        test_langs: &[&str],
    ) -> Result<()> {
        self.record_trained_as(regime, &run.mode.label(), &run.mode, outcome, splits, train_langs, test_langs)
    }

    /// Joint models on the sources plus, for LoRA runs, per-language modules
    /// and their uniform average. Returns the joint outcome for each run and
    /// the per-language modules for each LoRA run.
    fn zero_shot(&mut self, splits: &SplitPlan, src: &[&str], tgt: &[&str]) -> Result<Vec<(RunSpec, TrainOutcome, Vec<LoraModule>)>> {
        let regime = ZEROSHOT.to_string();
        let mut out = Vec::new();
        for run in &self.plan.runs {
            let joint = self.best_run(run, splits, src)?;
            self.record_trained(&regime, run, &joint, splits, src, tgt)?;
            let mut per_language = Vec::new();
            if matches!(run.mode, TrainMode::Lora(_)) {
                for &l in src {
                    let o = self.best_run(run, splits, &[l])?;
                    let label = format!("{}@{l}", run.mode.label());
                    self.record_trained_as(&regime, &label, &run.mode, &o, splits, &[l], tgt)?;
                    if let super::train::Snapshot::Adapters(m) = &o.best.snapshot {
                        per_language.push(m.clone());
                    }
                }
                let avg = uniform_average(&per_language)?;
                let adapted = crate::lora::apply_module(self.base, &avg)?;
                let label = format!("avg_{}", run.mode.label());
                self.record(&regime, &adapted, splits, src, tgt, &label, run.mode.rank(), None, None)?;
                self.keep_module(&regime, src, &label, avg);
            }
            out.push((run.clone(), joint, per_language));
        }
        Ok(out)
    }

    fn few_shot(
        &mut self,
        splits: &SplitPlan,
        src: &[&str],
        tgt: &[&str],
        zero: Vec<(RunSpec, TrainOutcome, Vec<LoraModule>)>,
    ) -> Result<()> {
        let fs = self.plan.fewshot.clone().expect("validated fewshot plan has settings");
        let regime = self.regime.clone();
        for &t in tgt {
            let mut seen: Vec<&str> = src.to_vec();
            seen.push(t);
            let shots_train = splits.train(&[t]);
            let shots_val = splits.val(&[t]);
            for (run, joint, modules) in &zero {
                let is_lora = matches!(run.mode, TrainMode::Lora(_));
                let continued = if is_lora {
                    fs.methods.contains(&FewShotMethod::ClLora)
                } else {
                    fs.methods.contains(&FewShotMethod::ClFullFt)
                };
                if continued {
                    let mut config = self.plan.train_config(&run.mode, fs.learning_rate, self.seed);
                    config.max_steps = fs.steps;
                    config.eval_every = fs.eval_every;
                    let o = continue_training(self.base, &joint.best, &shots_train, &shots_val, &config)?;
                    let label = format!("cl_{}", run.mode.label());
                    self.record_trained_as(&regime, &label, &run.mode, &o, splits, &seen, &[t])?;
                }
                if is_lora && fs.methods.contains(&FewShotMethod::Lorahub) {
                    let mut shots = shots_train.clone();
                    shots.extend(shots_val.iter().cloned());
                    let search = SearchConfig {
                        seed: fs.lorahub.seed ^ self.seed,
                        ..fs.lorahub.clone()
                    };
                    let hub = lorahub_optimize(self.base, modules, &shots, &search, CompositionMode::AbSpace, self.decode())?;
                    let adapted = crate::lora::apply_module(self.base, &hub.module)?;
                    let label = format!("lorahub-{}", run.mode.rank().unwrap_or(0));
                    self.record(&regime, &adapted, splits, &seen, &[t], &label, run.mode.rank(), None, None)?;
                    self.keep_module(&regime, &seen, &label, hub.module);
                }
            }
        }
        Ok(())
    }
}

/// Validates the plan, prepares the base and runs it.
pub fn run_plan(plan: &ExperimentPlan, workdir: &Path) -> Result<ExperimentRun> {
    plan.validate()?;
    let base = prepare_base(plan, workdir)?;
    run_regime(plan, &base)
}
