//! First-order optimizers over a [`ParamStore`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{GradMap, ParamStore};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr,
            betas: default_betas(),
            eps: default_eps(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            betas: default_betas(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "invalid adam hyperparameters betas={:?} eps={}",
                self.betas, self.eps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Optimizer with per-parameter state keyed by path.
#[derive(Clone, Debug)]
pub struct Optimizer<T: Real = f32> {
    config: OptimizerConfig,
    step: u64,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            step: 0,
            state: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters with `requires_grad == false` are never
    /// touched, even if `grads` holds an entry for them.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &GradMap<T>) -> Result<()> {
        self.step += 1;
        let lr = T::lit(self.config.lr);
        let (b1, b2) = self.config.betas;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (path, p) in params.iter_mut() {
            if !p.requires_grad {
                continue;
            }
            let Some(g) = grads.get(path) else { continue };
            if g.shape() != p.shape() {
                return Err(Error::dim("optimizer_step", p.shape(), g.shape()));
            }
            match self.config.kind {
                OptimizerKind::Sgd => {
                    for (x, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                        *x = *x - lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let st = self.state.entry(path.to_string()).or_insert_with(|| Moments {
                        m: vec![T::zero(); g.len()],
                        v: vec![T::zero(); g.len()],
                    });
                    let (tb1, tb2) = (T::lit(b1), T::lit(b2));
                    let (tbc1, tbc2) = (T::lit(bc1), T::lit(bc2));
                    let eps = T::lit(self.config.eps);
                    for (i, (x, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        st.m[i] = tb1 * st.m[i] + (T::one() - tb1) * gi;
                        st.v[i] = tb2 * st.v[i] + (T::one() - tb2) * gi * gi;
                        let mhat = st.m[i] / tbc1;
                        let vhat = st.v[i] / tbc2;
                        *x = *x - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
