//! Small decoder-only transformer with causal attention.
//!
//! Blocks are pre-normalized (RMS norm) residual units: attention then a GELU
//! feed-forward layer. Positions use a learned absolute embedding.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Reduction, Var};
use crate::container;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ffn: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    #[serde(default)]
    pub tied_head: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ffn", self.d_ffn),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be >= 2".into()));
        }
        Ok(())
    }
}

/// Weight matrices a low-rank adapter can target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Query,
    Key,
    Value,
    Out,
    FfnIn,
    FfnOut,
}

impl MatrixKind {
    pub const ATTENTION: [MatrixKind; 4] = [
        MatrixKind::Query,
        MatrixKind::Key,
        MatrixKind::Value,
        MatrixKind::Out,
    ];
    pub const ALL: [MatrixKind; 6] = [
        MatrixKind::Query,
        MatrixKind::Key,
        MatrixKind::Value,
        MatrixKind::Out,
        MatrixKind::FfnIn,
        MatrixKind::FfnOut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MatrixKind::Query => "query",
            MatrixKind::Key => "key",
            MatrixKind::Value => "value",
            MatrixKind::Out => "out",
            MatrixKind::FfnIn => "ffn_in",
            MatrixKind::FfnOut => "ffn_out",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        MatrixKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown target matrix {s:?}; expected one of query, key, value, out, ffn_in, ffn_out"
                ))
            })
    }

    pub fn is_attention(self) -> bool {
        !matches!(self, MatrixKind::FfnIn | MatrixKind::FfnOut)
    }

    /// `(d, k)`: input and output dimension of the matrix.
    pub fn dims(self, config: &ModelConfig) -> (usize, usize) {
        match self {
            MatrixKind::FfnIn => (config.d_model, config.d_ffn),
            MatrixKind::FfnOut => (config.d_ffn, config.d_model),
            _ => (config.d_model, config.d_model),
        }
    }

    /// Registry path of this matrix in layer `layer`.
    pub fn path(self, layer: usize) -> String {
        let block = if self.is_attention() { "attn" } else { "ffn" };
        format!("layers.{layer}.{block}.{}", self.name())
    }
}

/// Parameter paths that belong to attention projections.
pub fn is_attention_path(path: &str) -> bool {
    path.contains(".attn.")
}

/// A forward pass over a token sequence, shared by base and adapted models.
pub trait LanguageModel<T: Real = f32> {
    fn config(&self) -> &ModelConfig;

    /// Records the forward pass into `g` and returns logits of shape
    /// `len×vocab`, or `1×vocab` for the final position when `last_only`.
    fn forward_graph<'a>(
        &'a self,
        g: &mut Graph<'a, T>,
        tokens: &[usize],
        last_only: bool,
    ) -> Result<Var>;
}

/// Extra contribution added to a projection `x·W`; used by adapters.
pub trait ProjectionDelta<T: Real> {
    fn delta<'a>(&'a self, g: &mut Graph<'a, T>, x: Var, path: &str) -> Result<Option<Var>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
}

pub fn build_model(config: &ModelConfig) -> Result<Model<f32>> {
    Model::new(config)
}

impl<T: Real> Model<T> {
    /// Deterministic initialization from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
        let out_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        let out_normal = Normal::new(0.0f64, out_std).expect("valid std");
        let mut randn = |shape: &[usize], dist: &Normal<f64>| -> Tensor<T> {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| T::lit(dist.sample(&mut rng))).collect();
            Tensor::new(shape, data).expect("shape matches").with_grad(true)
        };
        let (v, d, f) = (config.vocab_size, config.d_model, config.d_ffn);
        let ones = |n: usize| Tensor::full(&[n], T::one()).with_grad(true);
        let mut params = ParamStore::new();
        params.insert("embed.token", randn(&[v, d], &normal))?;
        params.insert("embed.position", randn(&[config.max_seq_len, d], &normal))?;
        for l in 0..config.n_layers {
            params.insert(format!("layers.{l}.attn_norm.gain"), ones(d))?;
            for m in MatrixKind::ATTENTION {
                let dist = if m == MatrixKind::Out { &out_normal } else { &normal };
                params.insert(m.path(l), randn(&[d, d], dist))?;
            }
            params.insert(format!("layers.{l}.ffn_norm.gain"), ones(d))?;
            params.insert(MatrixKind::FfnIn.path(l), randn(&[d, f], &normal))?;
            params.insert(MatrixKind::FfnOut.path(l), randn(&[f, d], &out_normal))?;
        }
        params.insert("final_norm.gain", ones(d))?;
        if !config.tied_head {
            params.insert("head.weight", randn(&[d, v], &normal))?;
        }
        params.insert("head.bias", Tensor::zeros(&[v]).with_grad(true))?;
        Ok(Model {
            config: config.clone(),
            params,
        })
    }

    /// Reassembles a model from a parameter registry, checking every shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let reference = Model::<T>::new(&ModelConfig {
            seed: 0,
            ..config.clone()
        })?;
        if reference.params.len() != params.len() {
            return Err(Error::Data(format!(
                "expected {} parameters, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (path, t) in reference.params.iter() {
            let got = params
                .get(path)
                .ok_or_else(|| Error::Data(format!("missing parameter {path}")))?;
            if got.shape() != t.shape() {
                return Err(Error::dim("from_params", t.shape(), got.shape()));
            }
        }
        Ok(Model { config, params })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn param_hash(&self) -> String {
        self.params.hash()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Marks every parameter frozen.
    pub fn freeze(&mut self) {
        self.params.set_requires_grad(|_| false);
    }

    pub fn forward_with<'a>(
        &'a self,
        g: &mut Graph<'a, T>,
        tokens: &[usize],
        last_only: bool,
        delta: Option<&'a dyn ProjectionDelta<T>>,
    ) -> Result<Var> {
        let mut hook = |g: &mut Graph<'a, T>, x: Var, path: &str| match delta {
            Some(d) => d.delta(g, x, path),
            None => Ok(None),
        };
        forward_impl(&self.config, &self.params, g, tokens, last_only, &mut hook)
    }
}

/// Forward pass reading every parameter from `params` instead of a model,
/// so a gradient check can perturb the store it is handed.
pub fn forward_store<'a, T: Real>(
    config: &ModelConfig,
    params: &'a ParamStore<T>,
    g: &mut Graph<'a, T>,
    tokens: &[usize],
    last_only: bool,
) -> Result<Var> {
    forward_impl(config, params, g, tokens, last_only, &mut |_: &mut Graph<'a, T>, _: Var, _: &str| Ok(None))
}

pub(crate) type DeltaHook<'h, 'a, T> = dyn FnMut(&mut Graph<'a, T>, Var, &str) -> Result<Option<Var>> + 'h;

pub(crate) fn forward_impl<'a, T: Real>(
    c: &ModelConfig,
    p: &'a ParamStore<T>,
    g: &mut Graph<'a, T>,
    tokens: &[usize],
    last_only: bool,
    delta: &mut DeltaHook<'_, 'a, T>,
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Length("empty token sequence".into()));
    }
    if tokens.len() > c.max_seq_len {
        return Err(Error::Length(format!(
            "sequence of {} tokens exceeds max_seq_len {}",
            tokens.len(),
            c.max_seq_len
        )));
    }
    let mut proj = |g: &mut Graph<'a, T>, x: Var, path: &str| -> Result<Var> {
        let w = g.store_param(p, path)?;
        let y = g.matmul(x, w)?;
        match delta(g, x, path)? {
            Some(extra) => g.add(y, extra),
            None => Ok(y),
        }
    };

    let table = g.store_param(p, "embed.token")?;
    let tok = g.embedding(table, tokens)?;
    let pos_table = g.store_param(p, "embed.position")?;
    let pos = g.rows(pos_table, 0, tokens.len())?;
    let mut x = g.add(tok, pos)?;
    for l in 0..c.n_layers {
        let gain = g.store_param(p, &format!("layers.{l}.attn_norm.gain"))?;
        let h = g.rms_norm(x, gain)?;
        let q = proj(g, h, &MatrixKind::Query.path(l))?;
        let k = proj(g, h, &MatrixKind::Key.path(l))?;
        let v = proj(g, h, &MatrixKind::Value.path(l))?;
        let att = g.causal_attention(q, k, v, c.n_heads)?;
        let o = proj(g, att, &MatrixKind::Out.path(l))?;
        x = g.add(x, o)?;

        let gain = g.store_param(p, &format!("layers.{l}.ffn_norm.gain"))?;
        let h = g.rms_norm(x, gain)?;
        let up = proj(g, h, &MatrixKind::FfnIn.path(l))?;
        let act = g.gelu(up);
        let down = proj(g, act, &MatrixKind::FfnOut.path(l))?;
        x = g.add(x, down)?;
    }
    if last_only {
        x = g.rows(x, tokens.len() - 1, 1)?;
    }
    let gain = g.store_param(p, "final_norm.gain")?;
    let h = g.rms_norm(x, gain)?;
    let logits = if c.tied_head {
        g.matmul_bt(h, table)?
    } else {
        let w = g.store_param(p, "head.weight")?;
        g.matmul(h, w)?
    };
    let bias = g.store_param(p, "head.bias")?;
    g.add_row(logits, bias)
}

impl<T: Real> LanguageModel<T> for Model<T> {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn forward_graph<'a>(
        &'a self,
        g: &mut Graph<'a, T>,
        tokens: &[usize],
        last_only: bool,
    ) -> Result<Var> {
        self.forward_with(g, tokens, last_only, None)
    }
}

fn check_ids(config: &ModelConfig, tokens: &[usize]) -> Result<()> {
    if let Some((pos, &id)) = tokens
        .iter()
        .enumerate()
        .find(|(_, &t)| t >= config.vocab_size)
    {
        return Err(Error::Index {
            index: id,
            size: config.vocab_size,
            context: format!("token at position {pos}"),
        });
    }
    Ok(())
}

/// Logits for every position, `len×vocab`.
pub fn forward_logits<T: Real, M: LanguageModel<T> + ?Sized>(
    model: &M,
    tokens: &[usize],
) -> Result<Tensor<T>> {
    check_ids(model.config(), tokens)?;
    let mut g = Graph::new();
    let out = model.forward_graph(&mut g, tokens, false)?;
    Ok(g.value(out).clone())
}

/// A teacher-forced training pair: the prompt (document side) and the target
/// continuation (summary side, usually ending with a stop token).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TeacherForced {
    pub id: String,
    pub prompt: Vec<usize>,
    pub target: Vec<usize>,
}

impl TeacherForced {
    /// Input sequence and per-position targets. Only positions that predict a
    /// target token carry a label.
    pub fn aligned(&self) -> Result<(Vec<usize>, Vec<Option<usize>>)> {
        if self.target.is_empty() {
            return Err(Error::Data(format!("example {} has an empty target span", self.id)));
        }
        if self.prompt.is_empty() {
            return Err(Error::Data(format!("example {} has an empty prompt", self.id)));
        }
        let mut input = self.prompt.clone();
        input.extend_from_slice(&self.target[..self.target.len() - 1]);
        let mut labels = vec![None; self.prompt.len() - 1];
        labels.extend(self.target.iter().copied().map(Some));
        Ok((input, labels))
    }
}

/// Builds the batch loss into `g`: total target-position cross entropy divided
/// by the number of target positions in the batch.
pub fn lm_loss_graph<'a, T: Real, M: LanguageModel<T> + ?Sized>(
    model: &'a M,
    g: &mut Graph<'a, T>,
    batch: &[TeacherForced],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut aligned = Vec::with_capacity(batch.len());
    for ex in batch {
        let (input, labels) = ex.aligned()?;
        check_ids(model.config(), &input)?;
        aligned.push((input, labels));
    }
    let total: usize = batch.iter().map(|e| e.target.len()).sum();
    let mut acc: Option<Var> = None;
    for (input, labels) in &aligned {
        let logits = model.forward_graph(g, input, false)?;
        let ce = g.cross_entropy_masked(logits, labels, Reduction::Sum)?;
        acc = Some(match acc {
            Some(a) => g.add(a, ce)?,
            None => ce,
        });
    }
    Ok(g.scale(acc.expect("nonempty batch"), T::one() / T::lit(total as f64)))
}

pub fn lm_loss<T: Real, M: LanguageModel<T> + ?Sized>(
    model: &M,
    batch: &[TeacherForced],
) -> Result<T> {
    let mut g = Graph::new();
    let loss = lm_loss_graph(model, &mut g, batch)?;
    Ok(g.value(loss).item())
}

/// Argmax decoding. Stops after emitting `stop_token` or `max_out` tokens, or
/// when the context window is full. Ties go to the lowest token id.
pub fn generate_greedy<T: Real, M: LanguageModel<T> + ?Sized>(
    model: &M,
    prompt: &[usize],
    max_out: usize,
    stop_token: Option<usize>,
) -> Result<Vec<usize>> {
    let c = model.config();
    if max_out == 0 {
        return Err(Error::Config("max_out must be >= 1".into()));
    }
    if prompt.is_empty() {
        return Err(Error::Length("empty prompt".into()));
    }
    if prompt.len() > c.max_seq_len - 1 {
        return Err(Error::Length(format!(
            "prompt of {} tokens exceeds max_seq_len - 1 = {}",
            prompt.len(),
            c.max_seq_len - 1
        )));
    }
    check_ids(c, prompt)?;
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_out && seq.len() < c.max_seq_len + 1 {
        let mut g = Graph::new();
        let logits = model.forward_graph(&mut g, &seq, true)?;
        let next = argmax(g.value(logits).data());
        out.push(next);
        if Some(next) == stop_token || seq.len() == c.max_seq_len {
            break;
        }
        seq.push(next);
    }
    Ok(out)
}

/// Index of the maximum; first index on ties.
pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Encodes a model as a `full-model` container.
pub fn model_to_bytes(model: &Model<f32>) -> Vec<u8> {
    let tensors: Vec<serde_json::Value> = model
        .params()
        .iter()
        .map(|(p, t)| serde_json::json!({"path": p, "shape": t.shape()}))
        .collect();
    let header = serde_json::json!({
        "kind": container::KIND_FULL_MODEL,
        "format_version": container::FORMAT_VERSION,
        "model_config": model.config(),
        "tensors": tensors,
    });
    let payload: Vec<f32> = model
        .params()
        .iter()
        .flat_map(|(_, t)| t.data().iter().copied())
        .collect();
    container::encode(&header, &payload)
}

pub fn model_from_bytes(bytes: &[u8], origin: &Path) -> Result<Model<f32>> {
    #[derive(Deserialize)]
    struct Entry {
        path: String,
        shape: Vec<usize>,
    }
    let corrupt = |m: String| Error::Corruption {
        path: origin.to_path_buf(),
        message: m,
    };
    let parse_entries = |h: &serde_json::Value| -> Result<Vec<Entry>> {
        serde_json::from_value(h["tensors"].clone()).map_err(|e| corrupt(format!("tensors: {e}")))
    };
    let (header, payload) = container::decode(bytes, origin, |h| {
        Ok(parse_entries(h)?
            .iter()
            .map(|e| e.shape.iter().product::<usize>())
            .sum())
    })?;
    if header["kind"] != container::KIND_FULL_MODEL {
        return Err(corrupt(format!("expected kind full-model, found {}", header["kind"])));
    }
    let config: ModelConfig = serde_json::from_value(header["model_config"].clone())
        .map_err(|e| corrupt(format!("model_config: {e}")))?;
    let mut params = ParamStore::new();
    let mut offset = 0;
    for e in parse_entries(&header)? {
        let n: usize = e.shape.iter().product();
        let t = Tensor::new(&e.shape, payload[offset..offset + n].to_vec())?.with_grad(true);
        offset += n;
        params.insert(e.path, t)?;
    }
    Model::from_params(config, params)
}

pub fn save_model(model: &Model<f32>, path: &Path) -> Result<()> {
    container::write_file(path, &model_to_bytes(model))
}

/// Loads a checkpoint; every parameter comes back trainable.
pub fn load_model(path: &Path) -> Result<Model<f32>> {
    model_from_bytes(&container::read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ffn: 16,
            max_seq_len: 10,
            seed,
            tied_head: false,
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_model(&tiny(1)).unwrap();
        let b = build_model(&tiny(1)).unwrap();
        assert_eq!(a.param_hash(), b.param_hash());
        assert_ne!(a.param_hash(), build_model(&tiny(2)).unwrap().param_hash());
    }

    #[test]
    fn attention_matrix_count() {
        let cfg = ModelConfig {
            d_model: 32,
            n_heads: 4,
            ..tiny(0)
        };
        let m = build_model(&cfg).unwrap();
        let n = m.params().paths().filter(|p| is_attention_path(p)).count();
        assert_eq!(n, 2 * 4);
    }

    #[test]
    fn heads_must_divide() {
        let cfg = ModelConfig {
            d_model: 32,
            n_heads: 3,
            ..tiny(0)
        };
        assert!(matches!(build_model(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn causal_prefix_invariance() {
        let m = build_model(&tiny(3)).unwrap();
        let a = forward_logits(&m, &[1, 2, 3, 4, 5]).unwrap();
        let b = forward_logits(&m, &[1, 2, 3, 9, 0]).unwrap();
        let v = m.config().vocab_size;
        assert_eq!(&a.data()[..3 * v], &b.data()[..3 * v]);
        assert_ne!(&a.data()[3 * v..], &b.data()[3 * v..]);
    }

    #[test]
    fn empty_and_long_inputs_rejected() {
        let m = build_model(&tiny(3)).unwrap();
        assert!(matches!(forward_logits(&m, &[]), Err(Error::Length(_))));
        assert!(matches!(forward_logits(&m, &[1; 11]), Err(Error::Length(_))));
        assert!(matches!(forward_logits(&m, &[12]), Err(Error::Index { .. })));
    }

    #[test]
    fn last_only_matches_full() {
        let m = build_model(&tiny(4)).unwrap();
        let full = forward_logits(&m, &[3, 1, 4, 1]).unwrap();
        let mut g = Graph::new();
        let last = m.forward_graph(&mut g, &[3, 1, 4, 1], true).unwrap();
        assert_eq!(g.value(last).data(), full.row(3));
    }

    fn biased(token: usize) -> Model<f32> {
        let mut m = build_model(&tiny(5)).unwrap();
        m.params_mut().get_mut("head.bias").unwrap().data_mut()[token] = 100.0;
        m
    }

    #[test]
    fn greedy_follows_bias() {
        let m = biased(5);
        assert_eq!(generate_greedy(&m, &[1, 2], 4, None).unwrap(), vec![5; 4]);
        assert_eq!(generate_greedy(&m, &[1, 2], 4, Some(5)).unwrap(), vec![5]);
    }

    #[test]
    fn greedy_tie_breaks_low() {
        let mut m = build_model(&tiny(5)).unwrap();
        // Zero head weights make all logits equal to the bias.
        for x in m.params_mut().get_mut("head.weight").unwrap().data_mut() {
            *x = 0.0;
        }
        let b = m.params_mut().get_mut("head.bias").unwrap().data_mut();
        b[3] = 1.0;
        b[7] = 1.0;
        assert_eq!(generate_greedy(&m, &[1], 1, None).unwrap(), vec![3]);
    }

    #[test]
    fn greedy_prompt_limit() {
        let m = build_model(&tiny(5)).unwrap();
        assert!(matches!(
            generate_greedy(&m, &[1; 10], 1, None),
            Err(Error::Length(_))
        ));
        assert!(generate_greedy(&m, &[1; 9], 3, None).unwrap().len() <= 3);
    }

    #[test]
    fn uniform_logits_give_log_vocab_loss() {
        let mut m = build_model(&ModelConfig {
            vocab_size: 8,
            ..tiny(6)
        })
        .unwrap();
        for x in m.params_mut().get_mut("head.weight").unwrap().data_mut() {
            *x = 0.0;
        }
        let ex = TeacherForced {
            id: "e".into(),
            prompt: vec![1, 2, 3],
            target: vec![4, 5],
        };
        let loss = lm_loss(&m, &[ex]).unwrap();
        assert!((loss - 8f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn batch_loss_is_token_weighted_mean() {
        let m = build_model(&tiny(7)).unwrap().cast::<f64>();
        let a = TeacherForced {
            id: "a".into(),
            prompt: vec![1, 2, 3],
            target: vec![4, 5, 6],
        };
        let b = TeacherForced {
            id: "b".into(),
            prompt: vec![7, 8],
            target: vec![9],
        };
        let la = lm_loss(&m, std::slice::from_ref(&a)).unwrap();
        let lb = lm_loss(&m, std::slice::from_ref(&b)).unwrap();
        let lab = lm_loss(&m, &[a, b]).unwrap();
        assert!((lab - (3.0 * la + lb) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_model(&ModelConfig {
            tied_head: true,
            ..tiny(8)
        })
        .unwrap();
        let path = dir.path().join("base.ckpt");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn empty_summary_names_example() {
        let m = build_model(&tiny(7)).unwrap();
        let ok = TeacherForced {
            id: "ok".into(),
            prompt: vec![1],
            target: vec![2],
        };
        let bad = TeacherForced {
            id: "ex-17".into(),
            prompt: vec![1],
            target: vec![],
        };
        let err = lm_loss(&m, &[ok, bad]).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("ex-17")));
    }
}
