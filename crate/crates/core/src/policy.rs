//! Stationary tabular policies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::mdp::{check_distribution, sample_index};

/// Action probabilities `[state][action]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch { expected: num_states * num_actions, got: probs.len() });
        }
        for row in probs.chunks(num_actions) {
            check_distribution(row, "policy row")?;
        }
        Ok(Self { num_states, num_actions, probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self { num_states, num_actions, probs: vec![1.0 / num_actions as f64; num_states * num_actions] }
    }

    /// Puts all mass on `actions[s]`.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            check_index("action", a, num_actions)?;
            probs[s * num_actions + a] = 1.0;
        }
        Ok(Self { num_states: actions.len(), num_actions, probs })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.num_actions..(state + 1) * self.num_actions]
    }

    #[inline]
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.num_actions + action]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        sample_index(self.row(state), rng)
    }
}

/// Softmax policy parameterised by one logit per state-action pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub logits: Vec<f64>,
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl PolicyTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self { num_states, num_actions, logits: vec![0.0; num_states * num_actions] }
    }

    pub fn from_logits(num_states: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch { expected: num_states * num_actions, got: logits.len() });
        }
        Ok(Self { num_states, num_actions, logits })
    }

    pub fn state_logits(&self, state: usize) -> &[f64] {
        &self.logits[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn probs(&self, state: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions];
        softmax_into(self.state_logits(state), &mut out);
        out
    }

    pub fn log_prob(&self, state: usize, action: usize) -> f64 {
        let z = self.state_logits(state);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        z[action] - lse
    }

    pub fn entropy(&self, state: usize) -> f64 {
        self.probs(state).iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
    }

    pub fn to_policy(&self) -> Policy {
        let mut probs = vec![0.0; self.logits.len()];
        for (z, p) in self.logits.chunks(self.num_actions).zip(probs.chunks_mut(self.num_actions)) {
            softmax_into(z, p);
        }
        Policy { num_states: self.num_states, num_actions: self.num_actions, probs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn rows_are_distributions(logits in prop::collection::vec(-30.0f64..30.0, 12)) {
            let table = PolicyTable::from_logits(4, 3, logits).unwrap();
            let policy = table.to_policy();
            for s in 0..4 {
                let total: f64 = policy.row(s).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!(policy.row(s).iter().all(|p| *p > 0.0));
            }
        }

        #[test]
        fn shift_invariance(logits in prop::collection::vec(-5.0f64..5.0, 6), shift in -50.0f64..50.0) {
            let a = PolicyTable::from_logits(2, 3, logits.clone()).unwrap();
            let mut shifted = logits;
            for z in &mut shifted[3..] {
                *z += shift;
            }
            let b = PolicyTable::from_logits(2, 3, shifted).unwrap();
            for s in 0..2 {
                for (p, q) in a.probs(s).iter().zip(b.probs(s)) {
                    prop_assert!((p - q).abs() < 1e-9);
                }
                for act in 0..3 {
                    prop_assert!((a.log_prob(s, act) - b.log_prob(s, act)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn uniform_logits_have_max_entropy() {
        let t = PolicyTable::zeros(1, 4);
        assert!((t.entropy(0) - 4f64.ln()).abs() < 1e-12);
    }
}
