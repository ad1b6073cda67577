#![allow(dead_code)]

use lora_forge::data::language::VocabLayout;
use lora_forge::data::splits::{make_splits, SplitCounts, SplitPlan, SplitRequest, SyntheticSource};
use lora_forge::data::synthetic::GenShape;
use lora_forge::harness::ExperimentPlan;
use lora_forge::transformer::{build_model, Model, ModelConfig};
use serde_json::{json, Value};

pub const LANGS: [&str; 3] = ["L0", "L1", "L2"];

pub fn source() -> SyntheticSource {
    let layout = VocabLayout::new(16, 4, &LANGS).unwrap();
    SyntheticSource::new(
        layout,
        1,
        GenShape {
            doc_len: 8,
            n_salient: 2,
            ..GenShape::default()
        },
    )
    .unwrap()
}

pub fn model(src: &SyntheticSource) -> Model<f32> {
    build_model(&ModelConfig {
        vocab_size: src.layout.vocab_size(),
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ffn: 16,
        max_seq_len: 32,
        seed: 2,
        tied_head: false,
    })
    .unwrap()
}

pub fn splits(src: &SyntheticSource, counts: SplitCounts, seed: u64) -> SplitPlan {
    make_splits(src, &SplitRequest::uniform("t", &LANGS, counts), seed).unwrap()
}

pub fn plan_json(regime: Value) -> Value {
    json!({
        "name": "tiny",
        "regime": regime,
        "languages": LANGS,
        "data": {"global_seed": 1, "n_content": 16, "n_function": 4,
                 "shape": {"doc_len": 8, "n_salient": 2},
                 "train_per_language": 8, "val_per_language": 2, "test_per_language": 3,
                 "truncation": {"max_input": 24, "max_output": 6}},
        "model": {"d_model": 8, "n_heads": 2, "n_layers": 1, "d_ffn": 16, "max_seq_len": 40, "seed": 2},
        "runs": [{"mode": {"kind": "full_ft"}, "learning_rates": [0.001]},
                 {"mode": {"kind": "lora", "rank": 2}, "learning_rates": [0.001, 0.0002]}],
        "train": {"max_steps": 3, "eval_every": 2}
    })
}

pub fn plan(regime: Value) -> ExperimentPlan {
    let p: ExperimentPlan = serde_json::from_value(plan_json(regime)).unwrap();
    p.validate().unwrap();
    p
}
