//! End-to-end acceptance checks. Runs without the libtest harness so that each
//! check prints exactly one `PASS`/`FAIL` line; the process fails if any does.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use lora_forge::autodiff::{Graph, Reduction, Var};
use lora_forge::composition::{compose_modules, uniform_average, CompositionSpec};
use lora_forge::data::language::VocabLayout;
use lora_forge::data::splits::{
    few_shot_counts, low_data_counts, make_splits, SplitCounts, SplitRequest, SyntheticSource,
};
use lora_forge::data::synthetic::GenShape;
use lora_forge::data::Example;
use lora_forge::gradcheck::finite_difference_check;
use lora_forge::harness::{prepare_base, run_regime, ExperimentPlan};
use lora_forge::lora::{
    adapter_param_count, apply_module, attach_adapters, extract_module, merge, param_fraction,
    AdaptedModel, CompositionMode, LoraConfig, LoraModule, Provenance,
};
use lora_forge::lorahub::lorahub_optimize;
use lora_forge::metrics::bootstrap::paired_bootstrap;
use lora_forge::metrics::rouge::{rouge_l, rouge_n};
use lora_forge::metrics::{DecodeConfig, GreedySummarizer, Summarizer};
use lora_forge::params::ParamStore;
use lora_forge::search::SearchConfig;
use lora_forge::tensor::{Real, Tensor};
use lora_forge::transformer::{
    build_model, forward_logits, forward_store, Model, ModelConfig, TeacherForced,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn check<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn config(vocab: usize, d: usize, heads: usize, layers: usize, ffn: usize, seq: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        d_model: d,
        n_heads: heads,
        n_layers: layers,
        d_ffn: ffn,
        max_seq_len: seq,
        seed,
        tied_head: false,
    }
}

/// Replaces every adapter factor with `N(0, std²)` draws so that `B ≠ 0`.
fn randomize<T: Real>(adapted: &mut AdaptedModel<T>, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, std).unwrap();
    for (_, t) in adapted.adapter_params_mut().iter_mut() {
        for x in t.data_mut() {
            *x = T::lit(rand_distr::Distribution::sample(&normal, &mut rng));
        }
    }
}

fn random_module(base: &Model<f32>, lora: &LoraConfig, std: f64, seed: u64) -> Result<LoraModule, String> {
    let mut adapted = check(attach_adapters(base, lora))?;
    randomize(&mut adapted, std, seed);
    Ok(extract_module(&adapted, Provenance::default()))
}

fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

fn merge_equivalence() -> Outcome {
    let cfg = config(48, 64, 4, 2, 128, 32, 11);
    let base = check(build_model(&cfg))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs: Vec<Vec<usize>> = (0..100)
        .map(|_| {
            let len = rng.random_range(1..=cfg.max_seq_len);
            random_tokens(&mut rng, cfg.vocab_size, len)
        })
        .collect();
    let mut worst = 0.0f32;
    for rank in [1, 4, 16] {
        let mut adapted = check(attach_adapters(&base, &LoraConfig::attention_ffn(rank, rank as u64)))?;
        randomize(&mut adapted, 0.05, 100 + rank as u64);
        let merged = merge(&adapted);
        for x in &inputs {
            let a = check(forward_logits(&adapted, x))?;
            let m = check(forward_logits(&merged, x))?;
            worst = worst.max(check(a.max_abs_diff(&m))?);
        }
    }
    ensure(worst <= 1e-5, || format!("max |Δlogit| {worst:e} > 1e-5"))?;
    Ok(format!("max |Δlogit| {worst:.2e} over ranks 1/4/16 x 100 inputs"))
}

fn lm_batch(vocab: usize, seed: u64) -> Vec<TeacherForced> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2)
        .map(|i| TeacherForced {
            id: format!("g{i}"),
            prompt: random_tokens(&mut rng, vocab, 3),
            target: random_tokens(&mut rng, vocab, 3),
        })
        .collect()
}

/// Mean token cross-entropy, built from an arbitrary logits function.
fn batch_loss<'a>(
    g: &mut Graph<'a, f64>,
    batch: &[TeacherForced],
    mut logits: impl FnMut(&mut Graph<'a, f64>, &[usize]) -> lora_forge::Result<Var>,
) -> lora_forge::Result<Var> {
    let mut acc: Option<Var> = None;
    let mut total = 0;
    for ex in batch {
        let (input, labels) = ex.aligned()?;
        total += ex.target.len();
        let l = logits(g, &input)?;
        let ce = g.cross_entropy_masked(l, &labels, Reduction::Sum)?;
        acc = Some(match acc {
            Some(a) => g.add(a, ce)?,
            None => ce,
        });
    }
    Ok(g.scale(acc.expect("nonempty batch"), 1.0 / total as f64))
}

fn gradient_correctness() -> Outcome {
    let cfg = config(10, 16, 2, 2, 32, 8, 5);
    let batch = lm_batch(cfg.vocab_size, 9);
    let model = check(Model::<f64>::new(&cfg))?;
    let full = check(finite_difference_check(
        |p: &ParamStore<f64>, g: &mut Graph<'_, f64>| batch_loss(g, &batch, |g, x| forward_store(&cfg, p, g, x, false)),
        model.params(),
        1e-5,
    ))?;
    ensure(full.max_rel_error <= 1e-3, || format!("full LM rel error {:e} at {:?}", full.max_rel_error, full.worst))?;

    let mut adapted = check(attach_adapters(&model, &LoraConfig::attention_ffn(2, 3)))?;
    randomize(&mut adapted, 0.1, 4);
    let combined = adapted.combined_params();
    let lora = check(finite_difference_check(
        |p: &ParamStore<f64>, g: &mut Graph<'_, f64>| batch_loss(g, &batch, |g, x| adapted.forward_combined(p, g, x, false)),
        &combined,
        1e-5,
    ))?;
    ensure(lora.max_rel_error <= 1e-3, || format!("adapter rel error {:e} at {:?}", lora.max_rel_error, lora.worst))?;
    ensure(lora.checked == adapted.trainable_count(), || {
        format!("checked {} coordinates, expected {}", lora.checked, adapted.trainable_count())
    })?;

    let mut g = Graph::new();
    let loss = check(batch_loss(&mut g, &batch, |g, x| adapted.forward_combined(&combined, g, x, false)))?;
    let grads = check(g.backward(loss))?;
    let mut nonzero = BTreeSet::new();
    for (path, t) in grads.iter() {
        if t.data().iter().any(|&v| v != 0.0) {
            nonzero.insert(path.to_string());
        }
    }
    let stray: Vec<&String> = nonzero.iter().filter(|p| !p.starts_with("lora.")).collect();
    ensure(stray.is_empty(), || format!("frozen parameters received gradients: {stray:?}"))?;
    let expected: BTreeSet<String> = adapted.adapter_params().paths().map(str::to_string).collect();
    ensure(nonzero == expected, || "some adapter factor received no gradient".into())?;
    Ok(format!(
        "full LM {:.1e} ({} coords), adapters {:.1e} ({} coords, only A/B nonzero)",
        full.max_rel_error, full.checked, lora.max_rel_error, lora.checked
    ))
}

fn parameter_accounting() -> Outcome {
    let square = config(32, 64, 4, 2, 256, 16, 0);
    let frac = check(param_fraction(&square, &LoraConfig::attention(4, 0)))?;
    ensure(frac == 0.125, || format!("param_fraction {frac} != 0.125"))?;

    let mut checked = Vec::new();
    for (d, ffn, layers, r) in [(64, 256, 2, 4), (32, 128, 3, 1), (48, 80, 1, 16)] {
        let cfg = config(20, d, 4, layers, ffn, 8, 0);
        let lora = LoraConfig::attention_ffn(r, 0);
        let per_layer = 4 * r * (d + d) + r * (d + ffn) + r * (ffn + d);
        let expected = per_layer * layers;
        let counted = adapter_param_count(&cfg, &lora);
        let adapted = check(attach_adapters(&check(build_model(&cfg))?, &lora))?;
        ensure(counted == expected && adapted.trainable_count() == expected, || {
            format!("d={d} ffn={ffn} r={r}: counted {counted}, attached {}, expected {expected}", adapted.trainable_count())
        })?;
        checked.push(expected.to_string());
    }
    Ok(format!("fraction 0.125; mixed-target counts {}", checked.join("/")))
}

/// Reduced fraction `num/den` as the nearest f64.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        return 0.0;
    }
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let g = gcd(num, den).max(1);
    (num / g) as f64 / (den / g) as f64
}

/// F1 of `m` matches against `h` hypothesis and `r` reference units:
/// `2·(m/h)(m/r) / (m/h + m/r) = 2m / (h + r)`.
fn oracle_f1(m: u64, h: u64, r: u64) -> f64 {
    if h == 0 || r == 0 || m == 0 {
        0.0
    } else {
        ratio(2 * m, h + r)
    }
}

fn brute_ngram(hyp: &[usize], reference: &[usize], n: usize) -> (u64, u64, u64) {
    let grams = |s: &[usize]| -> Vec<Vec<usize>> {
        if s.len() < n {
            vec![]
        } else {
            (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
        }
    };
    let (h, r) = (grams(hyp), grams(reference));
    let mut distinct: Vec<&Vec<usize>> = h.iter().chain(&r).collect();
    distinct.sort();
    distinct.dedup();
    let m: usize = distinct
        .iter()
        .map(|g| h.iter().filter(|x| x == g).count().min(r.iter().filter(|x| x == g).count()))
        .sum();
    (m as u64, h.len() as u64, r.len() as u64)
}

fn is_subsequence(needle: &[usize], hay: &[usize]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == x))
}

fn brute_lcs(a: &[usize], b: &[usize]) -> usize {
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<usize> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            is_subsequence(&sub, b).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn rouge_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..1000 {
        let vocab = rng.random_range(1..=6);
        let hl = rng.random_range(0..=12);
        let rl = rng.random_range(0..=12);
        let hyp = random_tokens(&mut rng, vocab, hl);
        let reference = random_tokens(&mut rng, vocab, rl);
        for n in [1, 2] {
            let (m, h, r) = brute_ngram(&hyp, &reference, n);
            let got = rouge_n(&hyp, &reference, n);
            let want = (ratio(m, h), ratio(m, r), oracle_f1(m, h, r));
            ensure((got.precision, got.recall, got.f1) == want, || {
                format!("case {case} rouge{n} {hyp:?} vs {reference:?}: {got:?} != {want:?}")
            })?;
        }
        let l = brute_lcs(&hyp, &reference) as u64;
        let (h, r) = (hyp.len() as u64, reference.len() as u64);
        let got = rouge_l(&hyp, &reference);
        let want = (ratio(l, h), ratio(l, r), oracle_f1(l, h, r));
        ensure((got.precision, got.recall, got.f1) == want, || {
            format!("case {case} rougeL {hyp:?} vs {reference:?}: {got:?} != {want:?}")
        })?;
    }
    Ok("1000 pairs, rouge1/2/L exact".into())
}

fn dense_f64(t: &Tensor<f32>) -> Tensor<f64> {
    t.cast()
}

fn composition_algebra() -> Outcome {
    let base = check(build_model(&config(24, 32, 4, 2, 32, 8, 3)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for trial in 0..5 {
        let modules: Vec<LoraModule> = [2usize, 4, 3]
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let mut lora = LoraConfig::attention_ffn(r, trial * 10 + i as u64);
                lora.alpha = Some(r as f64 * 0.5);
                random_module(&base, &lora, 0.3, trial * 10 + i as u64)
            })
            .collect::<Result<_, _>>()?;
        let weights: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let composed = check(compose_modules(&CompositionSpec::new(&modules, weights.clone(), CompositionMode::DeltaSpace)))?;
        for (t, ad) in composed.adapters.iter().enumerate() {
            let got = dense_f64(&ad.b).matmul(&dense_f64(&ad.a)).unwrap().map(|x| x * ad.scale);
            let mut want = Tensor::<f64>::zeros(got.shape());
            for (m, w) in modules.iter().zip(&weights) {
                let src = &m.adapters[t];
                let delta = dense_f64(&src.b).matmul(&dense_f64(&src.a)).unwrap();
                for (acc, d) in want.data_mut().iter_mut().zip(delta.data()) {
                    *acc += w * src.scale * d;
                }
            }
            worst = worst.max(got.max_abs_diff(&want).unwrap());
        }
    }
    ensure(worst <= 1e-6, || format!("delta-space linearity error {worst:e}"))?;

    let one = random_module(&base, &LoraConfig::attention_ffn(4, 1), 0.3, 1)?;
    let probe: Vec<usize> = (0..8).map(|i| (i * 5) % 24).collect();
    let direct = check(forward_logits(&check(apply_module(&base, &one))?, &probe))?;
    for mode in [CompositionMode::AbSpace, CompositionMode::DeltaSpace] {
        let single = check(compose_modules(&CompositionSpec::new(std::slice::from_ref(&one), vec![1.0], mode)))?;
        for (a, b) in single.adapters.iter().zip(&one.adapters) {
            ensure(a.delta_weight() == b.delta_weight(), || format!("{mode:?}: single-module ΔW changed"))?;
        }
        let logits = check(forward_logits(&check(apply_module(&base, &single))?, &probe))?;
        ensure(logits == direct, || format!("{mode:?}: single-module logits changed"))?;
    }

    let copies = vec![one.clone(), one.clone(), one.clone()];
    let avg = check(uniform_average(&copies))?;
    let mut avg_err = 0.0f32;
    for (a, b) in avg.adapters.iter().zip(&one.adapters) {
        avg_err = avg_err.max(a.a.max_abs_diff(&b.a).unwrap()).max(a.b.max_abs_diff(&b.b).unwrap());
    }
    ensure(avg_err <= 1e-6, || format!("average of copies differs by {avg_err:e}"))?;
    Ok(format!("linearity {worst:.1e}; identity exact in both modes; copy average {avg_err:.1e}"))
}

fn lorahub_monotonicity() -> Outcome {
    let vocab = 20;
    let cfg = config(vocab, 32, 4, 1, 64, 24, 21);
    let base = check(build_model(&cfg))?;
    let decode = DecodeConfig { max_output: 6 };
    let lora = LoraConfig::attention_ffn(4, 0);
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let relevant = random_module(&base, &lora, 0.6, 1000 + seed)?;
        let noise = random_module(&base, &lora, 0.6, 2000 + seed)?;
        let teacher = check(apply_module(&base, &relevant))?;
        let summarizer = GreedySummarizer::new(&teacher, decode);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shots = Vec::new();
        for i in 0..12 {
            let mut ex = Example {
                id: format!("s{seed}-{i}"),
                lang: "L".into(),
                document: random_tokens(&mut rng, vocab - 4, 8).into_iter().map(|t| t + 4).collect(),
                summary: vec![],
            };
            ex.summary = check(summarizer.summarize(&ex))?;
            shots.push(ex);
        }
        let search = SearchConfig {
            budget: 300,
            seed,
            ..SearchConfig::default()
        };
        let out = check(lorahub_optimize(&base, &[relevant, noise], &shots, &search, CompositionMode::AbSpace, decode))?;
        ensure(out.best_value <= out.start_value, || {
            format!("seed {seed}: best {} worse than start {}", out.best_value, out.start_value)
        })?;
        if out.weights[0].abs() > out.weights[1].abs() {
            wins += 1;
        }
        lines.push(format!("[{:.2},{:.2}]", out.weights[0], out.weights[1]));
    }
    ensure(wins >= 4, || format!("relevant module dominated in {wins}/5 seeds: {}", lines.join(" ")))?;
    Ok(format!("never worse than start; relevant wins {wins}/5, weights {}", lines.join(" ")))
}

fn disjoint(plan: &lora_forge::data::splits::SplitPlan) -> bool {
    let mut seen = BTreeSet::new();
    plan.languages
        .values()
        .flat_map(|s| s.train.iter().chain(&s.val).chain(&s.test))
        .all(|e| seen.insert(e.id.clone()))
}

fn regime_plumbing() -> Outcome {
    let langs = ["L0", "L1", "L2", "L3"];
    let layout = check(VocabLayout::new(32, 6, &langs))?;
    let src = check(SyntheticSource::new(layout, 3, GenShape::default()))?;
    for (k, train, val) in [(16, 14, 2), (64, 60, 4)] {
        let c = check(few_shot_counts(k, 5))?;
        ensure(c.train == train && c.val == val, || format!("{k}-shot split {}/{}", c.train, c.val))?;
        for seed in 0..5 {
            let p = check(make_splits(&src, &SplitRequest::uniform("fs", &langs, c), seed))?;
            for s in p.languages.values() {
                ensure(s.train.len() == train && s.val.len() == val, || format!("{k}-shot draw {}/{}", s.train.len(), s.val.len()))?;
            }
            ensure(disjoint(&p), || format!("{k}-shot seed {seed} overlaps"))?;
        }
    }
    for k in [16, 64, 256] {
        let c = check(low_data_counts(k, 5))?;
        ensure(c.train == k && c.val == k, || format!("low-data k={k}: {}/{}", c.train, c.val))?;
        for seed in 0..3 {
            let p = check(make_splits(&src, &SplitRequest::uniform("low", &langs, c), seed))?;
            ensure(p.languages.values().all(|s| s.train.len() == k && s.val.len() == k), || format!("low-data k={k} draw"))?;
            ensure(disjoint(&p), || format!("low-data k={k} seed {seed} overlaps"))?;
        }
    }
    let counts = SplitCounts { train: 10, val: 3, test: 4 };
    for held in langs {
        let req = check(SplitRequest::leave_one_out(&langs, held, counts))?;
        let train: BTreeSet<&str> = req.train_languages().into_iter().collect();
        let want: BTreeSet<&str> = langs.iter().copied().filter(|l| *l != held).collect();
        ensure(train == want, || format!("leave-one-out {held}: trains on {train:?}"))?;
        for seed in 0..3 {
            let p = check(make_splits(&src, &req, seed))?;
            let h = &p.languages[held];
            ensure(h.train.is_empty() && h.val.is_empty() && h.test.len() == 4, || format!("held-out {held} has training data"))?;
            ensure(disjoint(&p), || format!("leave-one-out {held} seed {seed} overlaps"))?;
        }
    }
    Ok("14/2, 60/4, k/k, leave-one-out and disjointness hold".into())
}

fn direction_plan() -> ExperimentPlan {
    let v = json!({
        "name": "direction",
        "regime": {"kind": "fewshot", "k": 16, "source": ["L0"], "targets": ["L1", "L2", "L3"]},
        "languages": ["L0", "L1", "L2", "L3"],
        "seeds": [0, 1, 2],
        "data": {"global_seed": 7, "n_content": 128, "n_function": 8,
                 "shape": {"doc_len": 12, "n_salient": 3},
                 "train_per_language": 512, "val_per_language": 8, "test_per_language": 24,
                 "truncation": {"max_input": 64, "max_output": 12}},
        "model": {"d_model": 64, "n_heads": 4, "n_layers": 2, "d_ffn": 128, "max_seq_len": 80, "seed": 1},
        "base": {"kind": "warmup", "steps": 300, "learning_rate": 0.001, "examples_per_language": 256},
        "runs": [{"mode": {"kind": "full_ft"}, "learning_rates": [0.001]},
                 {"mode": {"kind": "lora", "rank": 4}, "learning_rates": [0.001]}],
        "train": {"max_steps": 500, "eval_every": 50},
        "fewshot": {"steps": 40, "eval_every": 10, "learning_rate": 0.001, "methods": ["cl_lora"]}
    });
    check(ExperimentPlan::from_json(&v.to_string())).expect("direction plan is valid")
}

fn direction_of_effect() -> Outcome {
    let plan = direction_plan();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = check(prepare_base(&plan, dir.path()))?;
    let run = check(run_regime(&plan, &base))?;
    let zs = run.report.seed_means("zeroshot", "rougeL");
    let cl = run.report.seed_means("fewshot16", "rougeL");
    let get = |m: &BTreeMap<String, BTreeMap<u64, f64>>, mode: &str| -> Result<BTreeMap<u64, f64>, String> {
        m.get(mode).cloned().ok_or_else(|| format!("no {mode} rows"))
    };
    let (ft, lora, cont) = (get(&zs, "full_ft")?, get(&zs, "lora-4")?, get(&cl, "cl_lora-4")?);
    let mut lora_wins = 0;
    let mut gains = Vec::new();
    let mut detail = Vec::new();
    for seed in plan.seeds() {
        let (f, l, c) = (ft[&seed], lora[&seed], cont[&seed]);
        if l >= f {
            lora_wins += 1;
        }
        gains.push(c - l);
        detail.push(format!("s{seed} ft {f:.3} lora {l:.3} cl {c:.3}"));
    }
    let gain = gains.iter().sum::<f64>() / gains.len() as f64;
    let detail = detail.join("; ");
    ensure(lora_wins >= 2, || format!("LoRA-4 >= full FT in {lora_wins}/3 seeds ({detail})"))?;
    ensure(gain >= 0.02, || format!("16-shot gain {gain:.4} < 0.02 ({detail})"))?;
    Ok(format!("LoRA-4 >= FT in {lora_wins}/3, 16-shot gain {gain:.3} ({detail})"))
}

fn determinism() -> Outcome {
    let v = json!({
        "name": "det",
        "regime": {"kind": "fewshot", "k": 16, "source": ["L0", "L1"], "targets": ["L2"]},
        "languages": ["L0", "L1", "L2"],
        "seeds": [0, 1],
        "data": {"global_seed": 2, "n_content": 16, "n_function": 4,
                 "shape": {"doc_len": 8, "n_salient": 2},
                 "train_per_language": 12, "val_per_language": 2, "test_per_language": 4,
                 "truncation": {"max_input": 24, "max_output": 6}},
        "model": {"d_model": 16, "n_heads": 2, "n_layers": 1, "d_ffn": 32, "max_seq_len": 40, "seed": 4},
        "base": {"kind": "warmup", "steps": 5, "examples_per_language": 8},
        "runs": [{"mode": {"kind": "full_ft"}, "learning_rates": [0.001]},
                 {"mode": {"kind": "ft_att"}, "learning_rates": [0.001]},
                 {"mode": {"kind": "lora", "rank": 2}, "learning_rates": [0.001, 0.0002]}],
        "train": {"max_steps": 6, "eval_every": 3},
        "fewshot": {"steps": 3, "eval_every": 1, "learning_rate": 0.001,
                    "lorahub": {"budget": 8}},
        "bootstrap": {"resamples": 50, "threshold": 0.01, "seed": 3}
    });
    let plan = check(ExperimentPlan::from_json(&v.to_string()))?;
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let run = check(lora_forge::harness::run_plan(&plan, dir.path()))?;
        check(run.write(dir.path()))?;
        let mut files = BTreeMap::new();
        for entry in std::fs::read_dir(dir.path().join("modules")).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), crc32fast::hash(&bytes));
        }
        let csv = std::fs::read(dir.path().join("report.csv")).map_err(|e| e.to_string())?;
        runs.push((files, csv));
    }
    ensure(!runs[0].0.is_empty(), || "no module files written".into())?;
    ensure(runs[0].0 == runs[1].0, || "module checksums differ between runs".into())?;
    ensure(runs[0].1 == runs[1].1, || "report CSVs differ between runs".into())?;
    Ok(format!("{} module files and report CSV identical across runs", runs[0].0.len()))
}

fn bootstrap_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for rep in 0..100u64 {
        let n = rng.random_range(5..60);
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let same = check(paired_bootstrap(&a, &a, 1000, 0.01, rep))?;
        ensure(!same.significant(), || format!("rep {rep}: self-comparison p={}", same.p_value))?;
        let b: Vec<f64> = a.iter().map(|x| x + rng.random_range(1e-3..0.1)).collect();
        let dom = check(paired_bootstrap(&b, &a, 1000, 0.01, rep))?;
        ensure(dom.significant(), || format!("rep {rep}: domination p={}", dom.p_value))?;
    }
    Ok("100 repetitions: self never significant, domination always significant".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("merge equivalence", merge_equivalence),
        ("gradient correctness", gradient_correctness),
        ("parameter accounting", parameter_accounting),
        ("rouge oracles", rouge_oracles),
        ("composition algebra", composition_algebra),
        ("lorahub monotonicity", lorahub_monotonicity),
        ("regime plumbing", regime_plumbing),
        ("direction of effect", direction_of_effect),
        ("determinism", determinism),
        ("bootstrap sanity", bootstrap_sanity),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS {n:>2} {name} [{secs:.1}s]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {n:>2} {name} [{secs:.1}s]: {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
