//! Command-line front end.
//!
//! [`parse_and_validate`] turns argv into a fully checked [`CliInvocation`]
//! without touching the file system beyond reading inputs; [`execute`] then
//! performs the work. Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::composition::{compose_modules, CompositionSpec};
use crate::data::splits::{few_shot_counts, make_splits, SplitCounts, SplitPlan, SplitRequest};
use crate::error::{Error, Result};
use crate::harness::regime::prepare_base;
use crate::harness::{
    continue_training, render_report, run_regime, train, Checkpoint, ExperimentPlan, ExperimentReport, ReportFormat,
    Snapshot, TrainConfig, TrainMode,
};
use crate::lora::{apply_module, load_module, save_module, CompositionMode, LoraConfig, LoraModule};
use crate::lorahub::lorahub_optimize;
use crate::metrics::{evaluate, DecodeConfig, GreedySummarizer, MetricRegistry};
use crate::search::{ObjectiveMetric, SearchConfig};
use crate::transformer::{load_model, save_model, LanguageModel, Model};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "lora-forge", version, about = "LoRA training, composition and cross-lingual experiments")]
#[command(args_override_self = true)]
struct Cli {
    /// Root for every relative path.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// JSON object of flag values; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write the synthetic splits of a plan as JSONL.
    GenData(GenDataArgs),
    /// Train one model or adapter module.
    Train(TrainArgs),
    /// Continue a checkpoint on few-shot target examples.
    Continue(ContinueArgs),
    /// Weighted composition of adapter modules.
    Compose(ComposeArgs),
    /// Few-shot weight search over adapter modules.
    Lorahub(LorahubArgs),
    /// Score a model or module on test sets.
    Eval(EvalArgs),
    /// Run a whole experiment plan.
    Experiment(ExperimentArgs),
    /// Render a report CSV.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Experiment plan (JSON) describing data and model.
    #[arg(long)]
    plan: PathBuf,
    /// Saved base model; defaults to building the plan's base.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ModeArgs {
    /// full_ft, ft_att or lora.
    #[arg(long, default_value = "lora")]
    mode: String,
    #[arg(long, default_value_t = 4)]
    rank: usize,
    #[arg(long)]
    alpha: Option<f64>,
    /// Adapter targets, e.g. q,k,v,o.
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<String>>,
    #[arg(long = "lr", default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    mode: ModeArgs,
    /// Training languages.
    #[arg(long, value_delimiter = ',', required = true)]
    lang: Vec<String>,
    /// Output file: a module for lora, a model otherwise.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ContinueArgs {
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    mode: ModeArgs,
    /// Module (`.lora`) or model file to continue from.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    lang: String,
    /// 16 or 64 examples, split 14/2 or 60/4.
    #[arg(long, default_value_t = 16)]
    shots: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ComposeArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    modules: Vec<PathBuf>,
    /// One weight per module; defaults to uniform.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    weights: Option<Vec<f64>>,
    /// ab or delta.
    #[arg(long, default_value = "ab")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LorahubArgs {
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    modules: Vec<PathBuf>,
    #[arg(long)]
    lang: String,
    #[arg(long, default_value_t = 16)]
    shots: usize,
    #[arg(long)]
    budget: Option<usize>,
    /// rougeL or loss.
    #[arg(long, default_value = "rougeL")]
    objective: String,
    #[arg(long)]
    l1: Option<f64>,
    #[arg(long, default_value = "ab")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Adapter module applied to the base.
    #[arg(long, conflicts_with = "model")]
    module: Option<PathBuf>,
    /// Full model evaluated instead of the base.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    lang: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = crate::metrics::default_metric_ids())]
    metrics: Vec<String>,
    /// Per-example CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Runs a single seed instead of the plan's seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the plan name.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "md")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Where a full-model or adapter checkpoint comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum CheckpointSource {
    Module(PathBuf),
    Model(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataContext {
    pub plan: ExperimentPlan,
    pub base: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    GenData {
        plan: ExperimentPlan,
        seed: u64,
        out: PathBuf,
    },
    Train {
        ctx: DataContext,
        config: TrainConfig,
        langs: Vec<String>,
        out: PathBuf,
    },
    Continue {
        ctx: DataContext,
        config: TrainConfig,
        checkpoint: CheckpointSource,
        lang: String,
        shots: usize,
        out: PathBuf,
    },
    Compose {
        modules: Vec<PathBuf>,
        weights: Option<Vec<f64>>,
        mode: CompositionMode,
        out: PathBuf,
    },
    Lorahub {
        ctx: DataContext,
        modules: Vec<PathBuf>,
        lang: String,
        shots: usize,
        search: SearchConfig,
        mode: CompositionMode,
        out: PathBuf,
    },
    Eval {
        ctx: DataContext,
        module: Option<PathBuf>,
        model: Option<PathBuf>,
        langs: Vec<String>,
        metrics: Vec<String>,
        out: Option<PathBuf>,
    },
    Experiment {
        plan: ExperimentPlan,
        out: PathBuf,
    },
    Report {
        input: PathBuf,
        format: ReportFormat,
        out: Option<PathBuf>,
    },
}

/// A validated command with every path resolved against the working directory.
#[derive(Clone, Debug, PartialEq)]
pub struct CliInvocation {
    pub workdir: PathBuf,
    pub command: Command,
}

/// A request to stop before running: help, version or a usage error.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exit {
    pub code: i32,
    pub message: String,
}

impl Exit {
    fn usage(message: impl Into<String>) -> Self {
        Exit {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

fn clap_exit(e: clap::Error) -> Exit {
    let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
    let mut message = e.render().to_string();
    if e.kind() == clap::error::ErrorKind::InvalidSubcommand {
        message.push_str(&format!("\ncommands: {}\n", SUBCOMMANDS.join(", ")));
    }
    Exit { code, message }
}

const SUBCOMMANDS: [&str; 8] = ["gen-data", "train", "continue", "compose", "lorahub", "eval", "experiment", "report"];

/// Config-file values as flags: `{"lr": 0.001, "lang": ["L0", "L1"]}` becomes
/// `--lr 0.001 --lang L0,L1`. `true` is a bare flag; `false` and null are
/// dropped.
fn config_flags(v: &Value) -> std::result::Result<Vec<String>, Exit> {
    let obj = v
        .as_object()
        .ok_or_else(|| Exit::usage("config file must hold a JSON object"))?;
    let mut out = Vec::new();
    for (k, v) in obj {
        let flag = format!("--{}", k.replace('_', "-"));
        let scalar = |v: &Value| -> std::result::Result<String, Exit> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                Value::Bool(b) => Ok(b.to_string()),
                _ => Err(Exit::usage(format!("config value for {k} must be a scalar or a list of scalars"))),
            }
        };
        match v {
            Value::Bool(true) => out.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<std::result::Result<Vec<_>, _>>()?;
                out.push(flag);
                out.push(parts.join(","));
            }
            other => {
                out.push(flag);
                out.push(scalar(other)?);
            }
        }
    }
    Ok(out)
}

/// Last value of `flag` given as `flag value` or `flag=value`.
fn flag_value(argv: &[String], flag: &str) -> Option<String> {
    let mut found = None;
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == flag {
            found = it.next().cloned();
        } else if let Some(v) = a.strip_prefix(flag).and_then(|r| r.strip_prefix('=')) {
            found = Some(v.to_string());
        }
    }
    found
}

fn resolve(workdir: &Path, p: &Path) -> PathBuf {
    workdir.join(p)
}

fn usage_err(e: Error) -> Exit {
    Exit::usage(format!("error: {e}"))
}

fn read_plan(workdir: &Path, p: &Path) -> std::result::Result<ExperimentPlan, Exit> {
    let path = resolve(workdir, p);
    let text = std::fs::read_to_string(&path).map_err(|e| Exit::usage(format!("error: cannot read plan {}: {e}", path.display())))?;
    ExperimentPlan::from_json(&text).map_err(|e| Exit::usage(format!("error: plan {}: {e}", path.display())))
}

fn existing(workdir: &Path, p: &Path, what: &str) -> std::result::Result<PathBuf, Exit> {
    let path = resolve(workdir, p);
    if !path.is_file() {
        return Err(Exit::usage(format!("error: {what} {} does not exist", path.display())));
    }
    Ok(path)
}

fn check_langs(plan: &ExperimentPlan, langs: &[String]) -> std::result::Result<(), Exit> {
    for l in langs {
        if !plan.languages.contains(l) {
            return Err(Exit::usage(format!("error: language {l} is not in the plan's languages {:?}", plan.languages)));
        }
    }
    Ok(())
}

fn context(workdir: &Path, a: &PlanArgs) -> std::result::Result<DataContext, Exit> {
    Ok(DataContext {
        plan: read_plan(workdir, &a.plan)?,
        base: a.base.as_ref().map(|b| existing(workdir, b, "base model")).transpose()?,
        seed: a.seed,
    })
}

fn train_config(ctx: &DataContext, m: &ModeArgs) -> std::result::Result<TrainConfig, Exit> {
    let mode = match m.mode.as_str() {
        "full_ft" | "full" => TrainMode::FullFt,
        "ft_att" => TrainMode::FtAtt,
        "lora" => {
            let mut c = LoraConfig::attention(m.rank, ctx.seed);
            c.alpha = m.alpha;
            if let Some(t) = &m.targets {
                let names: Vec<&str> = t.iter().map(String::as_str).collect();
                c = c.with_targets(&names).map_err(usage_err)?;
            }
            c.validate(&ctx.plan.model_config().map_err(usage_err)?).map_err(usage_err)?;
            TrainMode::Lora(c)
        }
        other => return Err(Exit::usage(format!("error: unknown mode {other:?}; expected full_ft, ft_att or lora"))),
    };
    let mut c = ctx.plan.train_config(&mode, m.learning_rate, ctx.seed);
    if let Some(s) = m.steps {
        c.max_steps = s;
    }
    if let Some(e) = m.eval_every {
        c.eval_every = e;
    }
    c.validate().map_err(usage_err)?;
    Ok(c)
}

/// Parses argv (including the program name) and validates everything that can
/// be checked without side effects.
pub fn parse_and_validate<I, S>(argv: I) -> std::result::Result<CliInvocation, Exit>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    // Required flags may come from the config file, so it is located before
    // clap sees the arguments.
    let cli = match flag_value(&argv, "--config") {
        None => Cli::try_parse_from(&argv).map_err(clap_exit)?,
        Some(cfg) => {
            let workdir = PathBuf::from(flag_value(&argv, "--workdir").unwrap_or_else(|| ".".into()));
            let path = resolve(&workdir, Path::new(&cfg));
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Exit::usage(format!("error: cannot read config {}: {e}", path.display())))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| Exit::usage(format!("error: config {} is not JSON: {e}", path.display())))?;
            let flags = config_flags(&v)?;
            let at = argv
                .iter()
                .position(|a| SUBCOMMANDS.contains(&a.as_str()))
                .ok_or_else(|| Exit::usage("error: no subcommand given"))?;
            let mut merged: Vec<String> = argv[..=at].to_vec();
            merged.extend(flags);
            merged.extend_from_slice(&argv[at + 1..]);
            Cli::try_parse_from(&merged).map_err(clap_exit)?
        }
    };
    let wd = cli.workdir.clone();
    let command = match cli.command {
        Cmd::GenData(a) => Command::GenData {
            plan: read_plan(&wd, &a.plan)?,
            seed: a.seed,
            out: resolve(&wd, &a.out),
        },
        Cmd::Train(a) => {
            let ctx = context(&wd, &a.plan)?;
            check_langs(&ctx.plan, &a.lang)?;
            let config = train_config(&ctx, &a.mode)?;
            Command::Train {
                config,
                langs: a.lang,
                out: resolve(&wd, &a.out),
                ctx,
            }
        }
        Cmd::Continue(a) => {
            let ctx = context(&wd, &a.plan)?;
            check_langs(&ctx.plan, std::slice::from_ref(&a.lang))?;
            few_shot_counts(a.shots, 0).map_err(usage_err)?;
            let config = train_config(&ctx, &a.mode)?;
            let path = existing(&wd, &a.checkpoint, "checkpoint")?;
            let checkpoint = if matches!(config.mode, TrainMode::Lora(_)) {
                CheckpointSource::Module(path)
            } else {
                CheckpointSource::Model(path)
            };
            Command::Continue {
                config,
                checkpoint,
                lang: a.lang,
                shots: a.shots,
                out: resolve(&wd, &a.out),
                ctx,
            }
        }
        Cmd::Compose(a) => {
            let modules = a
                .modules
                .iter()
                .map(|m| existing(&wd, m, "module"))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if let Some(w) = &a.weights {
                if w.len() != modules.len() {
                    return Err(Exit::usage(format!(
                        "error: {} weights given for {} modules",
                        w.len(),
                        modules.len()
                    )));
                }
            }
            Command::Compose {
                modules,
                weights: a.weights,
                mode: CompositionMode::parse(&a.mode).map_err(usage_err)?,
                out: resolve(&wd, &a.out),
            }
        }
        Cmd::Lorahub(a) => {
            let ctx = context(&wd, &a.plan)?;
            check_langs(&ctx.plan, std::slice::from_ref(&a.lang))?;
            few_shot_counts(a.shots, 0).map_err(usage_err)?;
            let objective = match a.objective.as_str() {
                "rougeL" => ObjectiveMetric::RougeL,
                "loss" => ObjectiveMetric::Loss,
                other => return Err(Exit::usage(format!("error: unknown objective {other:?}; expected rougeL or loss"))),
            };
            let mut search = SearchConfig {
                objective,
                seed: ctx.seed,
                ..SearchConfig::default()
            };
            if let Some(b) = a.budget {
                search.budget = b;
            }
            if let Some(l) = a.l1 {
                search.l1_penalty = l;
            }
            search.validate().map_err(usage_err)?;
            let modules = a
                .modules
                .iter()
                .map(|m| existing(&wd, m, "module"))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Command::Lorahub {
                modules,
                lang: a.lang,
                shots: a.shots,
                search,
                mode: CompositionMode::parse(&a.mode).map_err(usage_err)?,
                out: resolve(&wd, &a.out),
                ctx,
            }
        }
        Cmd::Eval(a) => {
            let ctx = context(&wd, &a.plan)?;
            check_langs(&ctx.plan, &a.lang)?;
            MetricRegistry::default().validate(&a.metrics).map_err(usage_err)?;
            Command::Eval {
                module: a.module.as_ref().map(|m| existing(&wd, m, "module")).transpose()?,
                model: a.model.as_ref().map(|m| existing(&wd, m, "model")).transpose()?,
                langs: a.lang,
                metrics: a.metrics,
                out: a.out.map(|o| resolve(&wd, &o)),
                ctx,
            }
        }
        Cmd::Experiment(a) => {
            let mut plan = read_plan(&wd, &a.plan)?;
            if let Some(s) = a.seed {
                plan.seeds = Some(vec![s]);
            }
            let out = resolve(&wd, a.out.as_deref().unwrap_or(Path::new(&plan.name)));
            Command::Experiment { plan, out }
        }
        Cmd::Report(a) => Command::Report {
            input: existing(&wd, &a.input, "report")?,
            format: a.format.parse().map_err(usage_err)?,
            out: a.out.map(|o| resolve(&wd, &o)),
        },
    };
    Ok(CliInvocation { workdir: wd, command })
}

fn base_model(ctx: &DataContext, workdir: &Path) -> Result<Model<f32>> {
    match &ctx.base {
        Some(p) => {
            let mut m = load_model(p)?;
            m.freeze();
            Ok(m)
        }
        None => prepare_base(&ctx.plan, workdir),
    }
}

fn splits_for(ctx: &DataContext, counts: &[(&str, SplitCounts)]) -> Result<SplitPlan> {
    let req = SplitRequest {
        regime: "cli".into(),
        counts: counts.iter().map(|(l, c)| (l.to_string(), *c)).collect(),
    };
    make_splits(&ctx.plan.source()?, &req, ctx.seed)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn save_snapshot(snapshot: &Snapshot, out: &Path) -> Result<()> {
    ensure_parent(out)?;
    match snapshot {
        Snapshot::Full(m) => save_model(m, out),
        Snapshot::Adapters(m) => save_module(m, out),
    }
}

fn tokens_text(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

/// Runs a validated invocation and returns what should go to stdout.
pub fn execute(inv: &CliInvocation) -> Result<String> {
    let wd = &inv.workdir;
    match &inv.command {
        Command::GenData { plan, seed, out } => {
            let ctx = DataContext {
                plan: plan.clone(),
                base: None,
                seed: *seed,
            };
            let counts = plan.counts()?;
            let langs: Vec<(&str, SplitCounts)> = plan.languages.iter().map(|l| (l.as_str(), counts)).collect();
            let splits = splits_for(&ctx, &langs)?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            for (lang, s) in &splits.languages {
                for (name, exs) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
                    let mut text = String::new();
                    for e in exs {
                        let line = json!({"id": e.id, "lang": e.lang,
                                          "document": tokens_text(&e.document), "summary": tokens_text(&e.summary)});
                        text.push_str(&line.to_string());
                        text.push('\n');
                    }
                    write_text(&out.join(format!("{lang}.{name}.jsonl")), &text)?;
                }
            }
            write_text(&out.join("manifest.json"), &serde_json::to_string_pretty(&splits.manifest())?)?;
            Ok(format!("wrote {} languages to {}\n", splits.languages.len(), out.display()))
        }
        Command::Train { ctx, config, langs, out } => {
            let base = base_model(ctx, wd)?;
            let counts = ctx.plan.counts()?;
            let ls: Vec<&str> = langs.iter().map(String::as_str).collect();
            let splits = splits_for(ctx, &ls.iter().map(|&l| (l, counts)).collect::<Vec<_>>())?;
            let o = train(&base, &splits.train(&ls), &splits.val(&ls), config)?;
            save_snapshot(&o.best.snapshot, out)?;
            Ok(format!(
                "{} step {} validation {} {:.4}; saved {}\n",
                config.mode.label(),
                o.best.step,
                o.best.metric,
                o.best.val_score,
                out.display()
            ))
        }
        Command::Continue {
            ctx,
            config,
            checkpoint,
            lang,
            shots,
            out,
        } => {
            let base = base_model(ctx, wd)?;
            let snapshot = match checkpoint {
                CheckpointSource::Module(p) => Snapshot::Adapters(load_module(p)?),
                CheckpointSource::Model(p) => Snapshot::Full(load_model(p)?),
            };
            let start = Checkpoint {
                step: 0,
                snapshot,
                val_score: f64::NEG_INFINITY,
                metric: config.selection_metric.clone(),
            };
            let splits = splits_for(ctx, &[(lang.as_str(), few_shot_counts(*shots, 0)?)])?;
            let o = continue_training(&base, &start, &splits.train(&[lang]), &splits.val(&[lang]), config)?;
            save_snapshot(&o.best.snapshot, out)?;
            Ok(format!("continued on {lang} ({shots} shots): step {} validation {:.4}\n", o.best.step, o.best.val_score))
        }
        Command::Compose {
            modules,
            weights,
            mode,
            out,
        } => {
            let mods = modules.iter().map(|p| load_module(p)).collect::<Result<Vec<LoraModule>>>()?;
            let w = weights.clone().unwrap_or_else(|| vec![1.0 / mods.len() as f64; mods.len()]);
            let composed = compose_modules(&CompositionSpec::new(&mods, w, *mode))?;
            ensure_parent(out)?;
            save_module(&composed, out)?;
            Ok(format!("composed {} modules into {}\n", mods.len(), out.display()))
        }
        Command::Lorahub {
            ctx,
            modules,
            lang,
            shots,
            search,
            mode,
            out,
        } => {
            let base = base_model(ctx, wd)?;
            let mods = modules.iter().map(|p| load_module(p)).collect::<Result<Vec<LoraModule>>>()?;
            let splits = splits_for(ctx, &[(lang.as_str(), few_shot_counts(*shots, 0)?)])?;
            let mut fs = splits.train(&[lang]);
            fs.extend(splits.val(&[lang]));
            let decode = DecodeConfig {
                max_output: ctx.plan.data.truncation.max_output,
            };
            let o = lorahub_optimize(&base, &mods, &fs, search, *mode, decode)?;
            ensure_parent(out)?;
            save_module(&o.module, out)?;
            Ok(format!(
                "weights {:?}; objective {:.4} -> {:.4}; saved {}\n",
                o.weights,
                o.start_value,
                o.best_value,
                out.display()
            ))
        }
        Command::Eval {
            ctx,
            module,
            model,
            langs,
            metrics,
            out,
        } => {
            let base = match model {
                Some(p) => load_model(p)?,
                None => base_model(ctx, wd)?,
            };
            let adapted = module.as_ref().map(|p| apply_module(&base, &load_module(p)?)).transpose()?;
            let lm: &dyn LanguageModel<f32> = match &adapted {
                Some(a) => a,
                None => &base,
            };
            let test_only = SplitCounts {
                train: 0,
                val: 0,
                test: ctx.plan.data.test_per_language,
            };
            let splits = splits_for(ctx, &langs.iter().map(|l| (l.as_str(), test_only)).collect::<Vec<_>>())?;
            let mut test = Vec::new();
            for l in langs {
                test.extend(splits.test(l).iter().cloned().map(|mut e| {
                    e.document.truncate(ctx.plan.data.truncation.max_input);
                    e
                }));
            }
            let decode = DecodeConfig {
                max_output: ctx.plan.data.truncation.max_output,
            };
            let rep = evaluate(&GreedySummarizer::new(lm, decode), &test, metrics, &MetricRegistry::default())?;
            if let Some(o) = out {
                write_text(o, &rep.to_csv())?;
            }
            Ok(format!("{}\n", serde_json::to_string_pretty(&rep.aggregates_json())?))
        }
        Command::Experiment { plan, out } => {
            let base = prepare_base(plan, wd)?;
            let run = run_regime(plan, &base)?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            save_model(&base, &out.join("base.bin"))?;
            write_text(&out.join("plan.json"), &plan.to_json())?;
            let written = run.write(out)?;
            Ok(format!(
                "{}\nwrote {} files to {}\n",
                render_report(&run.report, ReportFormat::Md)?,
                written.len() + 2,
                out.display()
            ))
        }
        Command::Report { input, format, out } => {
            let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
            let rep = ExperimentReport::from_csv(&text)?;
            let doc = render_report(&ExperimentReport::new(rep.rows, vec![]), *format)?;
            match out {
                Some(o) => {
                    write_text(o, &doc)?;
                    Ok(String::new())
                }
                None => Ok(doc),
            }
        }
    }
}

/// Entry point for the binary: returns the process exit code.
pub fn main_with_args<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let inv = match parse_and_validate(argv) {
        Ok(inv) => inv,
        Err(exit) => {
            if exit.code == EXIT_OK {
                print!("{}", exit.message);
            } else {
                eprintln!("{}", exit.message.trim_end());
            }
            return exit.code;
        }
    };
    match execute(&inv) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let e = parse_and_validate(args("lora-forge report --input r.csv --speed 3")).unwrap_err();
        assert_eq!(e.code, EXIT_USAGE);
        assert!(e.message.contains("--speed"), "{}", e.message);
        let e = parse_and_validate(args("lora-forge fly")).unwrap_err();
        assert_eq!(e.code, EXIT_USAGE);
        assert!(e.message.contains("experiment"), "{}", e.message);
    }

    #[test]
    fn help_exits_zero() {
        let e = parse_and_validate(args("lora-forge compose --help")).unwrap_err();
        assert_eq!(e.code, EXIT_OK);
        assert!(e.message.contains("--weights"));
    }

    #[test]
    fn config_values_become_flags() {
        let v = json!({"lr": 0.001, "lang": ["L0", "L1"], "allow_x": true, "skip": false});
        assert_eq!(config_flags(&v).unwrap(), args("--allow-x --lang L0,L1 --lr 0.001"));
        assert!(config_flags(&json!([1])).is_err());
    }
}
