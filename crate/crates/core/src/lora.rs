//! Low-rank adapters: `W = W₀ + scale·B·A` with `B ∈ R^{d×r}`, `A ∈ R^{r×k}`.
//!
//! An [`AdaptedModel`] keeps the base frozen and the factors separate, so the
//! base hash can be checked after training. [`merge`] folds the factors into
//! a plain [`Model`]; [`extract_module`] and [`apply_module`] move adapters
//! in and out of the serializable [`LoraModule`].

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::{Graph, Var};
use crate::container::{self, FORMAT_VERSION, KIND_LORA};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};
use crate::transformer::{forward_impl, LanguageModel, MatrixKind, Model, ModelConfig, ProjectionDelta};

pub const DEFAULT_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    /// Scale numerator; the effective scale is `alpha / rank`. Defaults to `rank`.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_targets")]
    pub targets: BTreeSet<MatrixKind>,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_targets() -> BTreeSet<MatrixKind> {
    MatrixKind::ATTENTION.into_iter().collect()
}

fn default_init_std() -> f64 {
    DEFAULT_INIT_STD
}

impl LoraConfig {
    /// Rank-`rank` adapters on query, key, value and out.
    pub fn attention(rank: usize, seed: u64) -> Self {
        LoraConfig {
            rank,
            alpha: None,
            targets: default_targets(),
            init_std: DEFAULT_INIT_STD,
            seed,
        }
    }

    /// Attention plus both feed-forward matrices.
    pub fn attention_ffn(rank: usize, seed: u64) -> Self {
        LoraConfig {
            targets: MatrixKind::ALL.into_iter().collect(),
            ..Self::attention(rank, seed)
        }
    }

    pub fn with_targets(mut self, names: &[&str]) -> Result<Self> {
        self.targets = names
            .iter()
            .map(|n| MatrixKind::parse(n))
            .collect::<Result<_>>()?;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(self.rank as f64)
    }

    pub fn scale(&self) -> f64 {
        self.alpha() / self.rank as f64
    }

    /// Checks the config against model dimensions. Returns warnings for
    /// ranks above half the smaller matrix dimension.
    pub fn validate(&self, model: &ModelConfig) -> Result<Vec<String>> {
        if self.rank == 0 {
            return Err(Error::Config("rank must be >= 1".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("at least one target matrix is required".into()));
        }
        if !(self.init_std >= 0.0) || !self.alpha().is_finite() {
            return Err(Error::Config("init_std and alpha must be finite".into()));
        }
        let mut warnings = Vec::new();
        for &m in &self.targets {
            let (d, k) = m.dims(model);
            let lim = d.min(k);
            if self.rank > lim {
                return Err(Error::Config(format!(
                    "rank {} exceeds min(d, k) = {lim} for {} ({d}x{k})",
                    self.rank,
                    m.name()
                )));
            }
            if 2 * self.rank > lim {
                warnings.push(format!(
                    "rank {} is not small relative to min(d, k) = {lim} for {}",
                    self.rank,
                    m.name()
                ));
            }
        }
        Ok(warnings)
    }
}

/// Fraction of the targeted matrices' parameters that the adapters train:
/// `Σ r·(d+k) / Σ d·k`, which is `2r/d` when every target is `d×d`.
pub fn param_fraction(model: &ModelConfig, lora: &LoraConfig) -> Result<f64> {
    lora.validate(model)?;
    let (mut num, mut den) = (0usize, 0usize);
    for &m in &lora.targets {
        let (d, k) = m.dims(model);
        num += lora.rank * (d + k);
        den += d * k;
    }
    Ok(num as f64 / den as f64)
}

/// Number of trainable adapter parameters: `Σ r·(d+k)` over every targeted
/// matrix in every layer.
pub fn adapter_param_count(model: &ModelConfig, lora: &LoraConfig) -> usize {
    lora.targets
        .iter()
        .map(|m| {
            let (d, k) = m.dims(model);
            lora.rank * (d + k)
        })
        .sum::<usize>()
        * model.n_layers
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TargetRef {
    pub layer: usize,
    pub matrix: MatrixKind,
}

impl TargetRef {
    pub fn path(&self) -> String {
        self.matrix.path(self.layer)
    }
}

/// One adapted matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter<T: Real = f32> {
    pub target: TargetRef,
    /// `d×r`
    pub b: Tensor<T>,
    /// `r×k`
    pub a: Tensor<T>,
    pub scale: f64,
}

impl<T: Real> LoraAdapter<T> {
    pub fn rank(&self) -> usize {
        self.a.shape()[0]
    }

    /// Dense `scale·B·A`.
    pub fn delta_weight(&self) -> Tensor<T> {
        let ba = self.b.matmul(&self.a).expect("adapter factors align");
        let s = T::lit(self.scale);
        ba.map(|x| x * s)
    }
}

#[derive(Clone, Debug)]
struct Slot {
    target: TargetRef,
    path: String,
    a_path: String,
    b_path: String,
    scale: f64,
}

/// A frozen base model with trainable adapters attached.
#[derive(Clone, Debug)]
pub struct AdaptedModel<T: Real = f32> {
    base: Model<T>,
    lora: LoraConfig,
    adapters: ParamStore<T>,
    slots: Vec<Slot>,
}

fn slot_for(target: TargetRef, scale: f64) -> Slot {
    let path = target.path();
    Slot {
        target,
        a_path: format!("lora.{path}.a"),
        b_path: format!("lora.{path}.b"),
        path,
        scale,
    }
}

/// Attaches fresh adapters: `A ~ Normal(0, init_std²)` from `config.seed`,
/// `B = 0`, so the adapted model starts out identical to the base.
pub fn attach_adapters<T: Real>(model: &Model<T>, config: &LoraConfig) -> Result<AdaptedModel<T>> {
    config.validate(model.config())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_std)
        .map_err(|e| Error::Config(format!("init_std: {e}")))?;
    let mut adapters = Vec::new();
    for layer in 0..model.config().n_layers {
        for &matrix in &config.targets {
            let (d, k) = matrix.dims(model.config());
            let r = config.rank;
            let a_data = (0..r * k).map(|_| T::lit(normal.sample(&mut rng))).collect();
            adapters.push(LoraAdapter {
                target: TargetRef { layer, matrix },
                b: Tensor::zeros(&[d, r]),
                a: Tensor::new(&[r, k], a_data)?,
                scale: config.scale(),
            });
        }
    }
    AdaptedModel::assemble(model, config.clone(), adapters)
}

impl<T: Real> AdaptedModel<T> {
    fn assemble(model: &Model<T>, lora: LoraConfig, adapters: Vec<LoraAdapter<T>>) -> Result<Self> {
        let mut base = model.clone();
        base.freeze();
        let mut store = ParamStore::new();
        let mut slots = Vec::with_capacity(adapters.len());
        for ad in adapters {
            let slot = slot_for(ad.target, ad.scale);
            store.insert(slot.a_path.clone(), ad.a.with_grad(true))?;
            store.insert(slot.b_path.clone(), ad.b.with_grad(true))?;
            slots.push(slot);
        }
        Ok(AdaptedModel {
            base,
            lora,
            adapters: store,
            slots,
        })
    }

    pub fn base(&self) -> &Model<T> {
        &self.base
    }

    pub fn lora_config(&self) -> &LoraConfig {
        &self.lora
    }

    pub fn adapter_params(&self) -> &ParamStore<T> {
        &self.adapters
    }

    pub fn adapter_params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.adapters
    }

    pub fn adapter_count(&self) -> usize {
        self.slots.len()
    }

    pub fn trainable_count(&self) -> usize {
        self.adapters.trainable_count() + self.base.params().trainable_count()
    }

    pub fn base_hash(&self) -> String {
        self.base.param_hash()
    }

    pub fn adapters(&self) -> Vec<LoraAdapter<T>> {
        self.slots
            .iter()
            .map(|s| LoraAdapter {
                target: s.target,
                a: self.adapters.get(&s.a_path).expect("slot registered").clone().with_grad(false),
                b: self.adapters.get(&s.b_path).expect("slot registered").clone().with_grad(false),
                scale: s.scale,
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> AdaptedModel<U> {
        AdaptedModel {
            base: self.base.cast(),
            lora: self.lora.clone(),
            adapters: self.adapters.cast(),
            slots: self.slots.clone(),
        }
    }
}

impl<T: Real> AdaptedModel<T> {
    /// Frozen base parameters and trainable adapter factors in one store.
    pub fn combined_params(&self) -> ParamStore<T> {
        let mut out = self.base.params().clone();
        for (path, t) in self.adapters.iter() {
            out.insert(path, t.clone()).expect("adapter paths are disjoint from base paths");
        }
        out
    }

    /// Forward pass of this model's architecture with every tensor, base and
    /// adapter alike, read from `params` (shaped like [`Self::combined_params`]).
    pub fn forward_combined<'a>(
        &self,
        params: &'a ParamStore<T>,
        g: &mut Graph<'a, T>,
        tokens: &[usize],
        last_only: bool,
    ) -> Result<Var> {
        let slots = &self.slots;
        let mut hook = |g: &mut Graph<'a, T>, x: Var, path: &str| -> Result<Option<Var>> {
            let Some(slot) = slots.iter().find(|s| s.path == path) else {
                return Ok(None);
            };
            let b = g.store_param(params, &slot.b_path)?;
            let a = g.store_param(params, &slot.a_path)?;
            let xb = g.matmul(x, b)?;
            let xba = g.matmul(xb, a)?;
            Ok(Some(g.scale(xba, T::lit(slot.scale))))
        };
        forward_impl(self.base.config(), params, g, tokens, last_only, &mut hook)
    }
}

impl<T: Real> ProjectionDelta<T> for AdaptedModel<T> {
    fn delta<'a>(&'a self, g: &mut Graph<'a, T>, x: Var, path: &str) -> Result<Option<Var>> {
        let Some(slot) = self.slots.iter().find(|s| s.path == path) else {
            return Ok(None);
        };
        let b = g.store_param(&self.adapters, &slot.b_path)?;
        let a = g.store_param(&self.adapters, &slot.a_path)?;
        let xb = g.matmul(x, b)?;
        let xba = g.matmul(xb, a)?;
        Ok(Some(g.scale(xba, T::lit(slot.scale))))
    }
}

impl<T: Real> LanguageModel<T> for AdaptedModel<T> {
    fn config(&self) -> &ModelConfig {
        self.base.config()
    }

    fn forward_graph<'a>(
        &'a self,
        g: &mut Graph<'a, T>,
        tokens: &[usize],
        last_only: bool,
    ) -> Result<Var> {
        self.base.forward_with(g, tokens, last_only, Some(self))
    }
}

/// Folds every adapter into its base matrix. Inputs are left untouched.
pub fn merge<T: Real>(adapted: &AdaptedModel<T>) -> Model<T> {
    let mut out = adapted.base.clone();
    for ad in adapted.adapters() {
        let delta = ad.delta_weight();
        let w = out
            .params_mut()
            .get_mut(&ad.target.path())
            .expect("adapter targets an existing matrix");
        for (x, &dx) in w.data_mut().iter_mut().zip(delta.data()) {
            if dx != T::zero() {
                *x = *x + dx;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub n_layers: usize,
}

impl From<&ModelConfig> for ModelDims {
    fn from(c: &ModelConfig) -> Self {
        ModelDims {
            vocab_size: c.vocab_size,
            d_model: c.d_model,
            d_ffn: c.d_ffn,
            n_layers: c.n_layers,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionMode {
    /// Weighted sums of the `A` and `B` factors separately.
    AbSpace,
    /// Exact weighted sum of the effective updates `ΔW`.
    DeltaSpace,
}

impl CompositionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ab" | "ab_space" => Ok(CompositionMode::AbSpace),
            "delta" | "delta_space" => Ok(CompositionMode::DeltaSpace),
            other => Err(Error::Config(format!(
                "unknown composition mode {other:?}; expected ab or delta"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionRecord {
    pub mode: CompositionMode,
    pub weights: Vec<f64>,
    /// CRC-32 of each source module's encoded bytes, as lowercase hex.
    pub source_checksums: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<CompositionRecord>,
}

impl Provenance {
    pub fn language(lang: impl Into<String>) -> Self {
        Provenance {
            language: Some(lang.into()),
            ..Default::default()
        }
    }
}

/// A detached, serializable set of adapters.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraModule {
    pub format_version: u32,
    pub config: LoraConfig,
    pub dims: ModelDims,
    pub adapters: Vec<LoraAdapter<f32>>,
    pub provenance: Provenance,
}

pub fn extract_module<T: Real>(adapted: &AdaptedModel<T>, provenance: Provenance) -> LoraModule {
    LoraModule {
        format_version: FORMAT_VERSION,
        config: adapted.lora.clone(),
        dims: ModelDims::from(adapted.base.config()),
        adapters: adapted
            .adapters()
            .into_iter()
            .map(|a| LoraAdapter {
                target: a.target,
                b: a.b.cast(),
                a: a.a.cast(),
                scale: a.scale,
            })
            .collect(),
        provenance,
    }
}

/// Loads `module`'s adapters verbatim on top of a frozen copy of `model`.
pub fn apply_module<T: Real>(model: &Model<T>, module: &LoraModule) -> Result<AdaptedModel<T>> {
    let cfg = model.config();
    let dims = ModelDims::from(cfg);
    for ad in &module.adapters {
        let path = ad.target.path();
        let mismatch = |message: String| Error::Compatibility {
            path: path.clone(),
            message,
        };
        if ad.target.layer >= cfg.n_layers {
            return Err(mismatch(format!("model has only {} layers", cfg.n_layers)));
        }
        let (d, k) = ad.target.matrix.dims(cfg);
        let r = ad.rank();
        if ad.b.shape() != [d, r] || ad.a.shape() != [r, k] {
            return Err(mismatch(format!(
                "factors B{:?} A{:?} do not fit a {d}x{k} matrix",
                ad.b.shape(),
                ad.a.shape()
            )));
        }
    }
    if module.dims != dims {
        let path = module
            .adapters
            .first()
            .map(|a| a.target.path())
            .unwrap_or_else(|| "<module>".into());
        return Err(Error::Compatibility {
            path,
            message: format!("module dims {:?} vs model dims {:?}", module.dims, dims),
        });
    }
    let adapters = module
        .adapters
        .iter()
        .map(|a| LoraAdapter {
            target: a.target,
            b: a.b.cast(),
            a: a.a.cast(),
            scale: a.scale,
        })
        .collect();
    AdaptedModel::assemble(model, module.config.clone(), adapters)
}

#[derive(Serialize, Deserialize)]
struct TargetHeader {
    layer: usize,
    matrix: MatrixKind,
    d: usize,
    k: usize,
    rank: usize,
    scale: f64,
}

impl LoraModule {
    pub fn rank(&self) -> usize {
        self.config.rank
    }

    fn header(&self) -> Value {
        let targets: Vec<TargetHeader> = self
            .adapters
            .iter()
            .map(|a| TargetHeader {
                layer: a.target.layer,
                matrix: a.target.matrix,
                d: a.b.shape()[0],
                k: a.a.shape()[1],
                rank: a.rank(),
                scale: a.scale,
            })
            .collect();
        json!({
            "kind": KIND_LORA,
            "format_version": self.format_version,
            "rank": self.config.rank,
            "alpha": self.config.alpha(),
            "init_std": self.config.init_std,
            "seed": self.config.seed,
            "model_dims": self.dims,
            "targets": targets,
            "provenance": self.provenance,
        })
    }

    /// Encoded container bytes; deterministic for equal modules.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        for a in &self.adapters {
            payload.extend_from_slice(a.a.data());
            payload.extend_from_slice(a.b.data());
        }
        container::encode(&self.header(), &payload)
    }

    /// CRC-32 of the encoded module, as stored in its trailer.
    pub fn checksum(&self) -> u32 {
        let bytes = self.to_bytes();
        u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap())
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let corrupt = |m: String| Error::Corruption {
            path: origin.to_path_buf(),
            message: m,
        };
        let (header, payload) = container::decode(bytes, origin, |h| {
            let targets: Vec<TargetHeader> = serde_json::from_value(h["targets"].clone())
                .map_err(|e| Error::Corruption {
                    path: origin.to_path_buf(),
                    message: format!("targets: {e}"),
                })?;
            Ok(targets.iter().map(|t| t.rank * (t.d + t.k)).sum())
        })?;
        if header["kind"] != KIND_LORA {
            return Err(corrupt(format!("expected kind {KIND_LORA}, found {}", header["kind"])));
        }
        let field = |name: &str| -> Result<Value> {
            header
                .get(name)
                .cloned()
                .ok_or_else(|| corrupt(format!("header lacks {name}")))
        };
        let targets: Vec<TargetHeader> =
            serde_json::from_value(field("targets")?).map_err(|e| corrupt(e.to_string()))?;
        let dims: ModelDims =
            serde_json::from_value(field("model_dims")?).map_err(|e| corrupt(e.to_string()))?;
        let provenance: Provenance =
            serde_json::from_value(field("provenance")?).map_err(|e| corrupt(e.to_string()))?;
        let rank = field("rank")?.as_u64().ok_or_else(|| corrupt("rank".into()))? as usize;
        let alpha = field("alpha")?.as_f64().ok_or_else(|| corrupt("alpha".into()))?;
        let init_std = field("init_std")?.as_f64().unwrap_or(DEFAULT_INIT_STD);
        let seed = field("seed")?.as_u64().unwrap_or(0);
        let config = LoraConfig {
            rank,
            alpha: if alpha == rank as f64 { None } else { Some(alpha) },
            targets: targets.iter().map(|t| t.matrix).collect(),
            init_std,
            seed,
        };
        let mut offset = 0;
        let mut take = |n: usize| {
            let s = payload[offset..offset + n].to_vec();
            offset += n;
            s
        };
        let mut adapters = Vec::with_capacity(targets.len());
        for t in &targets {
            let a = Tensor::new(&[t.rank, t.k], take(t.rank * t.k))?;
            let b = Tensor::new(&[t.d, t.rank], take(t.d * t.rank))?;
            adapters.push(LoraAdapter {
                target: TargetRef {
                    layer: t.layer,
                    matrix: t.matrix,
                },
                b,
                a,
                scale: t.scale,
            });
        }
        Ok(LoraModule {
            format_version: FORMAT_VERSION,
            config,
            dims,
            adapters,
            provenance,
        })
    }
}

pub fn save_module(module: &LoraModule, path: &Path) -> Result<()> {
    container::write_file(path, &module.to_bytes())
}

pub fn load_module(path: &Path) -> Result<LoraModule> {
    LoraModule::from_bytes(&container::read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::{build_model, forward_logits};

    fn cfg(d: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            d_model: d,
            n_heads: 2,
            n_layers: 2,
            d_ffn: 2 * d,
            max_seq_len: 12,
            seed: 11,
            tied_head: false,
        }
    }

    fn randomize_b(adapted: &mut AdaptedModel<f32>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0f64, 0.1).unwrap();
        for (p, t) in adapted.adapter_params_mut().iter_mut() {
            if p.ends_with(".b") {
                for x in t.data_mut() {
                    *x = n.sample(&mut rng) as f32;
                }
            }
        }
    }

    #[test]
    fn fresh_adapters_are_identity() {
        let m = build_model(&cfg(8)).unwrap();
        let a = attach_adapters(&m, &LoraConfig::attention(2, 0)).unwrap();
        let toks = [1, 5, 7, 2];
        assert_eq!(
            forward_logits(&m, &toks).unwrap(),
            forward_logits(&a, &toks).unwrap()
        );
        assert_eq!(a.adapter_count(), 8);
    }

    #[test]
    fn rank_limits() {
        let m = build_model(&cfg(8)).unwrap();
        assert!(matches!(
            attach_adapters(&m, &LoraConfig::attention(9, 0)),
            Err(Error::Config(_))
        ));
        let warn = LoraConfig::attention(5, 0).validate(m.config()).unwrap();
        assert!(!warn.is_empty());
        assert!(LoraConfig::attention(4, 0).with_targets(&["query", "mlp"]).is_err());
    }

    #[test]
    fn fraction_square() {
        let c = ModelConfig {
            d_model: 64,
            n_heads: 4,
            ..cfg(64)
        };
        assert_eq!(param_fraction(&c, &LoraConfig::attention(4, 0)).unwrap(), 0.125);
    }

    #[test]
    fn merge_matches_unmerged() {
        let m = build_model(&cfg(8)).unwrap();
        let mut a = attach_adapters(&m, &LoraConfig::attention(2, 1)).unwrap();
        randomize_b(&mut a, 3);
        let merged = merge(&a);
        let toks = [3, 1, 4, 1, 5];
        let d = forward_logits(&merged, &toks)
            .unwrap()
            .max_abs_diff(&forward_logits(&a, &toks).unwrap())
            .unwrap();
        assert!(d <= 1e-5, "{d}");
        assert_eq!(merge(&a).param_hash(), merged.param_hash());
    }

    #[test]
    fn merge_of_fresh_is_base() {
        let m = build_model(&cfg(8)).unwrap();
        let a = attach_adapters(&m, &LoraConfig::attention_ffn(2, 1)).unwrap();
        let mut merged = merge(&a);
        let mut base = m.clone();
        merged.freeze();
        base.freeze();
        assert_eq!(merged.param_hash(), base.param_hash());
    }

    #[test]
    fn extract_apply_roundtrip_and_copy_semantics() {
        let m = build_model(&cfg(8)).unwrap();
        let mut a = attach_adapters(&m, &LoraConfig::attention(2, 1)).unwrap();
        randomize_b(&mut a, 4);
        let module = extract_module(&a, Provenance::language("L3"));
        assert_eq!(module.provenance.language.as_deref(), Some("L3"));
        let again = apply_module(&m, &module).unwrap();
        let toks = [2, 7, 1];
        assert_eq!(
            forward_logits(&a, &toks).unwrap(),
            forward_logits(&again, &toks).unwrap()
        );
        let snapshot = module.clone();
        randomize_b(&mut a, 5);
        assert_eq!(module, snapshot);
    }

    #[test]
    fn apply_checks_dims() {
        let small = build_model(&cfg(8)).unwrap();
        let big = build_model(&ModelConfig {
            n_heads: 2,
            ..cfg(16)
        })
        .unwrap();
        let a = attach_adapters(&small, &LoraConfig::attention(2, 1)).unwrap();
        let module = extract_module(&a, Provenance::default());
        match apply_module(&big, &module) {
            Err(Error::Compatibility { path, .. }) => assert_eq!(path, "layers.0.attn.query"),
            other => panic!("expected compatibility error, got {other:?}"),
        }
    }

    #[test]
    fn zero_module_is_base() {
        let m = build_model(&cfg(8)).unwrap();
        let a = attach_adapters(&m, &LoraConfig::attention(2, 1)).unwrap();
        let module = extract_module(&a, Provenance::default());
        let applied = apply_module(&m, &module).unwrap();
        assert_eq!(
            forward_logits(&m, &[1, 2]).unwrap(),
            forward_logits(&applied, &[1, 2]).unwrap()
        );
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_model(&cfg(8)).unwrap();
        let mut a = attach_adapters(&m, &LoraConfig::attention_ffn(3, 9)).unwrap();
        randomize_b(&mut a, 6);
        let mut module = extract_module(&a, Provenance::language("L1"));
        module.provenance.step = Some(40);
        let path = dir.path().join("m.lora");
        save_module(&module, &path).unwrap();
        let back = load_module(&path).unwrap();
        assert_eq!(back, module);
        assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
    }

    #[test]
    fn load_detects_flip_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_model(&cfg(8)).unwrap();
        let a = attach_adapters(&m, &LoraConfig::attention(2, 1)).unwrap();
        let module = extract_module(&a, Provenance::default());
        let path = dir.path().join("m.lora");
        save_module(&module, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut flipped = bytes.clone();
        let i = flipped.len() - 10;
        flipped[i] ^= 0x40;
        std::fs::write(&path, &flipped).unwrap();
        assert!(matches!(load_module(&path), Err(Error::Corruption { .. })));

        let mut bumped = bytes;
        bumped[7] += 1;
        std::fs::write(&path, &bumped).unwrap();
        let err = load_module(&path).unwrap_err();
        assert!(matches!(err, Error::Version { found: 2, .. }));
        assert!(err.to_string().contains("[1]"));
    }
}
