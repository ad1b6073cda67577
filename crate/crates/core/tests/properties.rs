use std::collections::BTreeSet;

use lora_forge::composition::{compose_modules, CompositionSpec};
use lora_forge::data::language::VocabLayout;
use lora_forge::data::splits::{make_splits, SplitCounts, SplitRequest, SyntheticSource};
use lora_forge::data::synthetic::GenShape;
use lora_forge::lora::{attach_adapters, extract_module, CompositionMode, LoraConfig, LoraModule, Provenance};
use lora_forge::metrics::bootstrap::paired_bootstrap;
use lora_forge::metrics::rouge::{lcs_len, rouge_l, rouge_n};
use lora_forge::tensor::Tensor;
use lora_forge::transformer::{build_model, ModelConfig};
use proptest::prelude::*;

fn seq(max_tok: usize, max_len: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..max_tok, 0..=max_len)
}

fn brute_lcs(a: &[usize], b: &[usize]) -> usize {
    (0u32..1 << a.len())
        .filter(|mask| {
            let mut it = b.iter();
            (0..a.len()).filter(|i| mask >> i & 1 == 1).all(|i| it.any(|&y| y == a[i]))
        })
        .map(|mask| mask.count_ones() as usize)
        .max()
        .unwrap_or(0)
}

fn module(seed: u64, values: &[f32]) -> LoraModule {
    let base = build_model(&ModelConfig {
        vocab_size: 12,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ffn: 12,
        max_seq_len: 8,
        seed: 0,
        tied_head: false,
    })
    .unwrap();
    let mut adapted = attach_adapters(&base, &LoraConfig::attention_ffn(2, seed)).unwrap();
    let mut i = 0;
    for (_, t) in adapted.adapter_params_mut().iter_mut() {
        for x in t.data_mut() {
            *x = values[i % values.len()] * (1.0 + (i % 7) as f32 * 0.1);
            i += 1;
        }
    }
    extract_module(&adapted, Provenance::default())
}

fn deltas(m: &LoraModule) -> Vec<Tensor<f64>> {
    m.adapters
        .iter()
        .map(|a| a.b.cast::<f64>().matmul(&a.a.cast()).unwrap().map(|x| x * a.scale))
        .collect()
}

proptest! {
    #[test]
    fn rouge_f1_is_symmetric(a in seq(6, 12), b in seq(6, 12)) {
        for n in [1, 2] {
            prop_assert_eq!(rouge_n(&a, &b, n).f1, rouge_n(&b, &a, n).f1);
        }
        let (ab, ba) = (rouge_l(&a, &b), rouge_l(&b, &a));
        prop_assert_eq!(ab.f1, ba.f1);
        prop_assert_eq!(ab.precision, ba.recall);
    }

    #[test]
    fn lcs_matches_subset_enumeration(a in seq(4, 10), b in seq(4, 10)) {
        prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
    }

    #[test]
    fn rouge_scores_lie_in_unit_interval(a in seq(8, 16), b in seq(8, 16)) {
        for s in [rouge_n(&a, &b, 1), rouge_n(&a, &b, 2), rouge_l(&a, &b)] {
            prop_assert!((0.0..=1.0).contains(&s.f1));
        }
    }

    #[test]
    fn splits_are_disjoint(seed in any::<u64>(), train in 0usize..20, val in 0usize..6, test in 0usize..6) {
        let langs = ["L0", "L1", "L2"];
        let src = SyntheticSource::new(VocabLayout::new(16, 4, &langs).unwrap(), 5, GenShape { doc_len: 8, n_salient: 2, ..GenShape::default() }).unwrap();
        let plan = make_splits(&src, &SplitRequest::uniform("p", &langs, SplitCounts { train, val, test }), seed).unwrap();
        let mut seen = BTreeSet::new();
        for s in plan.languages.values() {
            prop_assert_eq!((s.train.len(), s.val.len(), s.test.len()), (train, val, test));
            for e in s.train.iter().chain(&s.val).chain(&s.test) {
                prop_assert!(seen.insert(e.id.clone()), "duplicate {}", e.id);
            }
        }
    }

    #[test]
    fn bootstrap_p_shrinks_as_the_gap_widens(
        base in prop::collection::vec(0.0f64..1.0, 8..40),
        noise in prop::collection::vec(-0.05f64..0.05, 40),
        seed in any::<u64>(),
    ) {
        let b: Vec<f64> = base.iter().zip(&noise).map(|(x, n)| x + n).collect();
        let mut last = f64::INFINITY;
        for shift in [0.0, 0.02, 0.05, 0.2] {
            let a: Vec<f64> = base.iter().map(|x| x + shift).collect();
            let r = paired_bootstrap(&a, &b, 400, 0.01, seed).unwrap();
            if r.observed_diff >= 0.0 {
                prop_assert!(r.p_value <= last + 1e-12, "p {} after {}", r.p_value, last);
                last = r.p_value;
            }
        }
    }

    #[test]
    fn matmul_matches_triple_loop(n in 1usize..6, d in 1usize..6, k in 1usize..6, vals in prop::collection::vec(-2.0f64..2.0, 72)) {
        let a = Tensor::new(&[n, d], vals[..n * d].to_vec()).unwrap();
        let b = Tensor::new(&[d, k], vals[36..36 + d * k].to_vec()).unwrap();
        let c = a.matmul(&b).unwrap();
        for i in 0..n {
            for j in 0..k {
                let want: f64 = (0..d).map(|t| a.get2(i, t) * b.get2(t, j)).sum();
                prop_assert!((c.get2(i, j) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn delta_space_composition_is_linear(
        w in prop::collection::vec(-1.5f64..1.5, 2),
        v1 in prop::collection::vec(-0.5f32..0.5, 5),
        v2 in prop::collection::vec(-0.5f32..0.5, 5),
    ) {
        let mods = [module(1, &v1), module(2, &v2)];
        let composed = compose_modules(&CompositionSpec::new(&mods, w.clone(), CompositionMode::DeltaSpace)).unwrap();
        let (d1, d2, got) = (deltas(&mods[0]), deltas(&mods[1]), deltas(&composed));
        for t in 0..got.len() {
            for i in 0..got[t].len() {
                let want = w[0] * d1[t].data()[i] + w[1] * d2[t].data()[i];
                prop_assert!((got[t].data()[i] - want).abs() <= 1e-6);
            }
        }
    }
}
