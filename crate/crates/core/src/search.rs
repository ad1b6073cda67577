//! Seeded derivative-free minimization over a box.
//!
//! Phase one samples uniformly inside the bounds (the starting point is
//! always evaluation #1). Phase two cycles golden-section line searches over
//! each coordinate around the incumbent, shrinking the search radius after
//! every sweep. The incumbent is the best point evaluated so far, so the
//! result is never worse than the start.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BOUNDS: (f64, f64) = (-1.5, 1.5);
pub const DEFAULT_BUDGET: usize = 200;
pub const DEFAULT_L1: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMetric {
    #[serde(rename = "rougeL")]
    RougeL,
    Loss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    #[serde(default = "default_bounds")]
    pub bounds: (f64, f64),
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_l1")]
    pub l1_penalty: f64,
    #[serde(default = "default_metric")]
    pub objective: ObjectiveMetric,
    /// Evaluations per golden-section line search.
    #[serde(default = "default_line_evals")]
    pub line_evals: usize,
}

fn default_bounds() -> (f64, f64) {
    DEFAULT_BOUNDS
}
fn default_budget() -> usize {
    DEFAULT_BUDGET
}
fn default_l1() -> f64 {
    DEFAULT_L1
}
fn default_metric() -> ObjectiveMetric {
    ObjectiveMetric::RougeL
}
fn default_line_evals() -> usize {
    6
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            bounds: DEFAULT_BOUNDS,
            budget: DEFAULT_BUDGET,
            seed: 0,
            l1_penalty: DEFAULT_L1,
            objective: ObjectiveMetric::RougeL,
            line_evals: default_line_evals(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::Config(format!("invalid search bounds [{lo}, {hi}]")));
        }
        if self.budget == 0 {
            return Err(Error::Config("search budget must be >= 1".into()));
        }
        if !(self.l1_penalty >= 0.0) {
            return Err(Error::Config("l1_penalty must be >= 0".into()));
        }
        if self.line_evals < 2 {
            return Err(Error::Config("line_evals must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Start,
    Random,
    Refine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub index: usize,
    pub phase: Phase,
    pub weights: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub best_weights: Vec<f64>,
    pub best_value: f64,
    pub trace: Vec<Evaluation>,
}

impl SearchOutcome {
    pub fn start_value(&self) -> f64 {
        self.trace[0].value
    }
}

/// The all-equal starting point `1/n` per coordinate, clamped to the bounds.
pub fn equal_start(n_dims: usize, bounds: (f64, f64)) -> Vec<f64> {
    vec![(1.0 / n_dims as f64).clamp(bounds.0, bounds.1); n_dims]
}

struct Tracker<'f, F> {
    objective: &'f mut F,
    budget: usize,
    trace: Vec<Evaluation>,
    best: Option<(Vec<f64>, f64)>,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Tracker<'_, F> {
    fn exhausted(&self) -> bool {
        self.trace.len() >= self.budget
    }

    fn eval(&mut self, w: Vec<f64>, phase: Phase) -> Result<f64> {
        let value = (self.objective)(&w)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "objective returned {value} at weights {w:?}"
            )));
        }
        if self.best.as_ref().is_none_or(|(_, b)| value < *b) {
            self.best = Some((w.clone(), value));
        }
        self.trace.push(Evaluation {
            index: self.trace.len(),
            phase,
            weights: w,
            value,
        });
        Ok(value)
    }
}

/// Minimizes `objective` from the all-equal start. See the module docs.
pub fn gradient_free_minimize<F>(
    mut objective: F,
    n_dims: usize,
    config: &SearchConfig,
) -> Result<SearchOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    config.validate()?;
    let start = equal_start(n_dims, config.bounds);
    minimize_from(&mut objective, start, config)
}

pub fn minimize_from<F>(objective: &mut F, start: Vec<f64>, config: &SearchConfig) -> Result<SearchOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    config.validate()?;
    let n = start.len();
    if n == 0 {
        return Err(Error::Config("search needs at least one dimension".into()));
    }
    let (lo, hi) = config.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut t = Tracker {
        objective,
        budget: config.budget,
        trace: Vec::with_capacity(config.budget),
        best: None,
    };
    t.eval(start, Phase::Start)?;

    let random_evals = config.budget.div_ceil(2);
    while t.trace.len() < random_evals {
        let w: Vec<f64> = (0..n)
            .map(|_| if lo < hi { rng.random_range(lo..=hi) } else { lo })
            .collect();
        t.eval(w, Phase::Random)?;
    }

    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut radius = (hi - lo) / 4.0;
    'sweeps: while !t.exhausted() && radius > 0.0 {
        for i in 0..n {
            let center = t.best.as_ref().expect("start evaluated").0.clone();
            let mut a = (center[i] - radius).max(lo);
            let mut b = (center[i] + radius).min(hi);
            if a >= b {
                continue;
            }
            let at = |x: f64| {
                let mut w = center.clone();
                w[i] = x;
                w
            };
            let mut c = b - INV_PHI * (b - a);
            let mut d = a + INV_PHI * (b - a);
            if t.exhausted() {
                break 'sweeps;
            }
            let mut fc = t.eval(at(c), Phase::Refine)?;
            if t.exhausted() {
                break 'sweeps;
            }
            let mut fd = t.eval(at(d), Phase::Refine)?;
            for _ in 2..config.line_evals {
                if t.exhausted() {
                    break 'sweeps;
                }
                if fc <= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - INV_PHI * (b - a);
                    fc = t.eval(at(c), Phase::Refine)?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + INV_PHI * (b - a);
                    fd = t.eval(at(d), Phase::Refine)?;
                }
            }
        }
        radius *= 0.5;
    }

    let (best_weights, best_value) = t.best.expect("at least one evaluation");
    Ok(SearchOutcome {
        best_weights,
        best_value,
        trace: t.trace,
    })
}
