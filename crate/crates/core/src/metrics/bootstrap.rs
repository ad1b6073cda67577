//! Paired bootstrap resampling over per-example scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_THRESHOLD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    A,
    B,
    Tie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub p_value: f64,
    pub n_resamples: usize,
    pub winner: Winner,
    pub threshold: f64,
    pub observed_diff: f64,
}

impl SignificanceResult {
    pub fn significant(&self) -> bool {
        self.p_value < self.threshold
    }
}

/// Two-sided paired bootstrap. The p-value is twice the fraction of resamples
/// whose mean difference does not favour the observed winner, capped at 1.
pub fn paired_bootstrap(
    scores_a: &[f64],
    scores_b: &[f64],
    n_resamples: usize,
    threshold: f64,
    seed: u64,
) -> Result<SignificanceResult> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::Data(format!(
            "paired bootstrap needs equal lengths, got {} and {}",
            scores_a.len(),
            scores_b.len()
        )));
    }
    let n = scores_a.len();
    if n < 2 {
        return Err(Error::Data("paired bootstrap needs at least 2 examples".into()));
    }
    if n_resamples == 0 {
        return Err(Error::Config("n_resamples must be >= 1".into()));
    }
    let diffs: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    let observed: f64 = diffs.iter().sum::<f64>() / n as f64;
    let winner = if observed > 0.0 {
        Winner::A
    } else if observed < 0.0 {
        Winner::B
    } else {
        Winner::Tie
    };
    if winner == Winner::Tie {
        return Ok(SignificanceResult {
            p_value: 1.0,
            n_resamples,
            winner,
            threshold,
            observed_diff: observed,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut against = 0usize;
    for _ in 0..n_resamples {
        let mut s = 0.0;
        for _ in 0..n {
            s += diffs[rng.random_range(0..n)];
        }
        let m = s / n as f64;
        let flips = match winner {
            Winner::A => m <= 0.0,
            _ => m >= 0.0,
        };
        if flips {
            against += 1;
        }
    }
    let p_value = (2.0 * against as f64 / n_resamples as f64).min(1.0);
    Ok(SignificanceResult {
        p_value,
        n_resamples,
        winner,
        threshold,
        observed_diff: observed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_comparison_is_tie() {
        let a = [0.2, 0.5, 0.9];
        let r = paired_bootstrap(&a, &a, 1000, 0.01, 3).unwrap();
        assert_eq!(r.winner, Winner::Tie);
        assert!(!r.significant());
    }

    #[test]
    fn strict_domination_is_significant() {
        let b = [0.1, 0.4, 0.3, 0.2];
        let a: Vec<f64> = b.iter().map(|x| x + 0.05).collect();
        let r = paired_bootstrap(&a, &b, 1000, 0.01, 3).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert_eq!(r.winner, Winner::A);
        assert!(r.significant());
        let r = paired_bootstrap(&b, &a, 1000, 0.01, 3).unwrap();
        assert_eq!(r.winner, Winner::B);
        assert!(r.significant());
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            paired_bootstrap(&[1.0, 2.0], &[1.0], 10, 0.01, 0),
            Err(Error::Data(_))
        ));
    }
}
