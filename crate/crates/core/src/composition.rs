//! Weighted combination of adapter modules, `m̂ = Σ wᵢ mᵢ`.
//!
//! Two algebras are offered. [`CompositionMode::AbSpace`] sums the factors
//! (`Â = Σ wᵢAᵢ`, `B̂ = Σ wᵢBᵢ`), the literal reading over module parameters;
//! note the product then carries cross terms, and a single module weighted by
//! `c` has its update scaled by `c²`. [`CompositionMode::DeltaSpace`] stacks
//! the weighted factors into a rank-`Σrᵢ` adapter whose product is exactly
//! `Σ wᵢ·ΔWᵢ`.

use crate::error::{Error, Result};
use crate::lora::{
    CompositionMode, CompositionRecord, LoraAdapter, LoraConfig, LoraModule, Provenance,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct CompositionSpec<'a> {
    pub modules: Vec<&'a LoraModule>,
    pub weights: Vec<f64>,
    pub mode: CompositionMode,
}

impl<'a> CompositionSpec<'a> {
    pub fn new(modules: &'a [LoraModule], weights: Vec<f64>, mode: CompositionMode) -> Self {
        CompositionSpec {
            modules: modules.iter().collect(),
            weights,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.modules.first() else {
            return Err(Error::Config("composition needs at least one module".into()));
        };
        if self.weights.len() != self.modules.len() {
            return Err(Error::Config(format!(
                "{} weights for {} modules",
                self.weights.len(),
                self.modules.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::Numeric(format!("non-finite composition weight {w}")));
        }
        check_compatible(&self.modules)?;
        if self.mode == CompositionMode::AbSpace {
            for m in &self.modules[1..] {
                for (a, b) in first.adapters.iter().zip(&m.adapters) {
                    if a.rank() != b.rank() {
                        return Err(Error::Mode(format!(
                            "ab_space needs equal ranks; {} has rank {} and {}",
                            a.target.path(),
                            a.rank(),
                            b.rank()
                        )));
                    }
                    if a.scale != b.scale {
                        return Err(Error::Mode(format!(
                            "ab_space needs equal scales; {} has {} and {}",
                            a.target.path(),
                            a.scale,
                            b.scale
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Modules must share model dims and target the same matrices in the same order.
pub fn check_compatible(modules: &[&LoraModule]) -> Result<()> {
    let Some(first) = modules.first() else {
        return Ok(());
    };
    for m in &modules[1..] {
        if m.dims != first.dims {
            return Err(Error::Compatibility {
                path: first
                    .adapters
                    .first()
                    .map(|a| a.target.path())
                    .unwrap_or_default(),
                message: format!("model dims {:?} vs {:?}", m.dims, first.dims),
            });
        }
        if m.adapters.len() != first.adapters.len() {
            return Err(Error::Compatibility {
                path: "<module>".into(),
                message: format!(
                    "{} adapters vs {}",
                    m.adapters.len(),
                    first.adapters.len()
                ),
            });
        }
        for (a, b) in first.adapters.iter().zip(&m.adapters) {
            if a.target != b.target || a.b.shape()[0] != b.b.shape()[0] || a.a.shape()[1] != b.a.shape()[1] {
                return Err(Error::Compatibility {
                    path: a.target.path(),
                    message: format!("paired with {}", b.target.path()),
                });
            }
        }
    }
    Ok(())
}

pub fn compose_modules(spec: &CompositionSpec<'_>) -> Result<LoraModule> {
    spec.validate()?;
    let first = spec.modules[0];
    let record = CompositionRecord {
        mode: spec.mode,
        weights: spec.weights.clone(),
        source_checksums: spec
            .modules
            .iter()
            .map(|m| format!("{:08x}", m.checksum()))
            .collect(),
    };
    let mut adapters = Vec::with_capacity(first.adapters.len());
    let config = match spec.mode {
        CompositionMode::AbSpace => {
            for (t, base) in first.adapters.iter().enumerate() {
                let mut a = Tensor::<f32>::zeros(base.a.shape());
                let mut b = Tensor::<f32>::zeros(base.b.shape());
                for (m, &w) in spec.modules.iter().zip(&spec.weights) {
                    let src = &m.adapters[t];
                    add_scaled(&mut a, &src.a, w);
                    add_scaled(&mut b, &src.b, w);
                }
                adapters.push(LoraAdapter {
                    target: base.target,
                    a,
                    b,
                    scale: base.scale,
                });
            }
            first.config.clone()
        }
        CompositionMode::DeltaSpace => {
            let scale = first.adapters.first().map_or(1.0, |a| a.scale);
            let total_rank: usize = spec.modules.iter().map(|m| m.rank()).sum();
            for (t, base) in first.adapters.iter().enumerate() {
                let (d, k) = (base.b.shape()[0], base.a.shape()[1]);
                let rank: usize = spec.modules.iter().map(|m| m.adapters[t].rank()).sum();
                let mut a = Vec::with_capacity(rank * k);
                let mut b = vec![0.0f32; d * rank];
                let mut col = 0;
                for (m, &w) in spec.modules.iter().zip(&spec.weights) {
                    let src = &m.adapters[t];
                    let r = src.rank();
                    // Fold weight and scale ratio into B so ΔŴ = scale·B̂Â.
                    let factor = if src.scale == scale {
                        w
                    } else {
                        w * src.scale / scale
                    };
                    a.extend_from_slice(src.a.data());
                    for i in 0..d {
                        for j in 0..r {
                            let v = src.b.data()[i * r + j];
                            b[i * rank + col + j] = if factor == 1.0 { v } else { (factor * v as f64) as f32 };
                        }
                    }
                    col += r;
                }
                adapters.push(LoraAdapter {
                    target: base.target,
                    a: Tensor::new(&[rank, k], a)?,
                    b: Tensor::new(&[d, rank], b)?,
                    scale,
                });
            }
            LoraConfig {
                rank: total_rank,
                alpha: Some(scale * total_rank as f64),
                ..first.config.clone()
            }
        }
    };
    Ok(LoraModule {
        format_version: first.format_version,
        config,
        dims: first.dims,
        adapters,
        provenance: Provenance {
            composition: Some(record),
            ..Default::default()
        },
    })
}

fn add_scaled(acc: &mut Tensor<f32>, src: &Tensor<f32>, w: f64) {
    for (x, &s) in acc.data_mut().iter_mut().zip(src.data()) {
        *x += if w == 1.0 { s } else { (w * s as f64) as f32 };
    }
}

/// Equal `1/N` weights in [`CompositionMode::AbSpace`].
pub fn uniform_average(modules: &[LoraModule]) -> Result<LoraModule> {
    if modules.is_empty() {
        return Err(Error::Config("uniform average of zero modules".into()));
    }
    let w = 1.0 / modules.len() as f64;
    compose_modules(&CompositionSpec::new(
        modules,
        vec![w; modules.len()],
        CompositionMode::AbSpace,
    ))
}
