use serde::{Deserialize, Serialize};

use super::rollout::TrajectoryBatch;
use crate::error::{Error, Result};

/// Per-sample advantages and regression targets for both value heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Advantages {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub target1: Vec<f64>,
    pub target2: Vec<f64>,
}

/// Single-head GAE over an actor-major batch. Accumulation stops at done flags
/// and at the end of each stream, where `values[next_state]` bootstraps.
pub fn gae(batch: &TrajectoryBatch, rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let mut adv = vec![0.0; batch.len()];
    for n in 0..batch.actors {
        let mut running = 0.0;
        for t in (0..batch.steps).rev() {
            let i = batch.index(n, t);
            let v = values[batch.states[i]];
            if batch.dones[i] {
                running = rewards[i] - v;
            } else {
                let delta = rewards[i] + gamma * values[batch.next_states[i]] - v;
                running = delta + gamma * lambda * running;
            }
            adv[i] = running;
        }
    }
    let targets = adv.iter().zip(&batch.states).map(|(a, &s)| values[s] + a).collect();
    (adv, targets)
}

/// Head `i` discounts with `γⁱ`.
pub fn gae_two_head(batch: &TrajectoryBatch, v1: &[f64], v2: &[f64], gamma: f64, lambda: f64) -> Advantages {
    let (a1, target1) = gae(batch, &batch.rewards1, v1, gamma, lambda);
    let (a2, target2) = gae(batch, &batch.rewards2, v2, gamma * gamma, lambda);
    Advantages { a1, a2, target1, target2 }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eta2Aggregation {
    #[default]
    Mean,
    Sum,
}

/// `max(0, V₂(s₀) + A₂(s₀, a₀))` at each stream's first episode start (step 0
/// if none), aggregated over streams.
pub fn eta2_estimate(batch: &TrajectoryBatch, v2: &[f64], a2: &[f64], aggregation: Eta2Aggregation) -> f64 {
    let mut total = 0.0;
    for n in 0..batch.actors {
        let t = (0..batch.steps).find(|&t| batch.episode_starts[batch.index(n, t)]).unwrap_or(0);
        let i = batch.index(n, t);
        total += (v2[batch.states[i]] + a2[i]).max(0.0);
    }
    match aggregation {
        Eta2Aggregation::Mean => total / batch.actors as f64,
        Eta2Aggregation::Sum => total,
    }
}

/// `A₁ + β A₂ / √(η₂ + c)`. With `β = 0` this is `A₁` exactly, whatever the scale.
pub fn optimistic_advantage(a1: &[f64], a2: &[f64], beta: f64, c: f64, eta2: f64) -> Result<Vec<f64>> {
    if a1.len() != a2.len() {
        return Err(Error::DimensionMismatch { expected: a1.len(), got: a2.len() });
    }
    if beta == 0.0 {
        return Ok(a1.to_vec());
    }
    let scale = eta2 + c;
    if !(scale > 0.0) {
        return Err(Error::ZeroUncertaintyScale);
    }
    let k = beta / scale.sqrt();
    Ok(a1.iter().zip(a2).map(|(x, y)| x + k * y).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(actors: usize, steps: usize, states: Vec<usize>, next: Vec<usize>, r1: Vec<f64>, r2: Vec<f64>, dones: Vec<bool>) -> TrajectoryBatch {
        let n = actors * steps;
        let mut starts = vec![false; n];
        for a in 0..actors {
            for t in 0..steps {
                let i = a * steps + t;
                starts[i] = t == 0 || dones[i - 1];
            }
        }
        TrajectoryBatch {
            actors,
            steps,
            states,
            actions: vec![0; n],
            next_states: next,
            rewards1: r1,
            rewards2: r2,
            dones,
            episode_starts: starts,
            log_probs: vec![0.0; n],
            episodes: Vec::new(),
            bonus_ratio: None,
        }
    }

    #[test]
    fn terminal_step_has_no_bootstrap() {
        let b = batch(1, 1, vec![0], vec![1], vec![2.0], vec![0.5], vec![true]);
        let adv = gae_two_head(&b, &[0.3, 9.0], &[0.1, 9.0], 0.9, 0.7);
        assert_eq!(adv.a1, vec![2.0 - 0.3]);
        assert_eq!(adv.a2, vec![0.5 - 0.1]);
        assert_eq!(adv.target1, vec![2.0]);
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let b = batch(1, 3, vec![0, 1, 2], vec![1, 2, 0], vec![1.0, 2.0, 3.0], vec![0.1, 0.2, 0.3], vec![false; 3]);
        let v1 = [0.5, -0.5, 1.5];
        let v2 = [0.2, 0.4, 0.8];
        let g = 0.9;
        let adv = gae_two_head(&b, &v1, &v2, g, 0.0);
        for i in 0..3 {
            let (s, sp) = (b.states[i], b.next_states[i]);
            assert!((adv.a1[i] - (g * v1[sp] + b.rewards1[i] - v1[s])).abs() < 1e-15);
            assert!((adv.a2[i] - (g * g * v2[sp] + b.rewards2[i] - v2[s])).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_and_sum_aggregation() {
        // Two streams with V₂(s₀) + A₂ = 0.4 and 0.8.
        let b = batch(2, 1, vec![0, 1], vec![2, 2], vec![0.0; 2], vec![0.0; 2], vec![true, true]);
        let v2 = [0.4, 0.8, 0.0];
        let a2 = [0.0, 0.0];
        assert!((eta2_estimate(&b, &v2, &a2, Eta2Aggregation::Mean) - 0.6).abs() < 1e-15);
        assert!((eta2_estimate(&b, &v2, &a2, Eta2Aggregation::Sum) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn negative_stream_estimates_clamp() {
        let b = batch(2, 1, vec![0, 1], vec![2, 2], vec![0.0; 2], vec![0.0; 2], vec![true, true]);
        let eta = eta2_estimate(&b, &[-1.0, 0.5, 0.0], &[0.0, 0.0], Eta2Aggregation::Mean);
        assert_eq!(eta, 0.25);
    }

    #[test]
    fn zero_heads_give_zero_eta2() {
        let b = batch(1, 2, vec![0, 1], vec![1, 2], vec![1.0, 1.0], vec![0.0; 2], vec![false, true]);
        let adv = gae_two_head(&b, &[0.0; 3], &[0.0; 3], 1.0, 1.0);
        assert_eq!(eta2_estimate(&b, &[0.0; 3], &adv.a2, Eta2Aggregation::Mean), 0.0);
    }

    #[test]
    fn eta2_falls_back_to_first_step() {
        let mut b = batch(1, 2, vec![3, 1], vec![1, 2], vec![0.0; 2], vec![0.0; 2], vec![false, false]);
        b.episode_starts = vec![false, false];
        let eta = eta2_estimate(&b, &[0.0, 0.0, 0.0, 0.7], &[0.1, 5.0], Eta2Aggregation::Mean);
        assert!((eta - 0.8).abs() < 1e-12);
    }

    #[test]
    fn optimistic_advantage_cases() {
        let a1 = [1.0, -2.0];
        let a2 = [0.5, 3.0];
        assert_eq!(optimistic_advantage(&a1, &a2, 0.0, 0.0, 0.0).unwrap(), a1.to_vec());
        assert_eq!(optimistic_advantage(&a1, &[0.0, 0.0], 2.0, 0.01, 1.0).unwrap(), a1.to_vec());
        assert!(matches!(optimistic_advantage(&a1, &a2, 1.0, 0.0, 0.0), Err(Error::ZeroUncertaintyScale)));
        let got = optimistic_advantage(&a1, &a2, 1.0, 0.0, 4.0).unwrap();
        assert_eq!(got, vec![1.25, -0.5]);
    }

    #[test]
    fn large_scale_limit_sums_heads() {
        let c: f64 = 1e6;
        let a1 = [0.3, -1.0, 2.0];
        let a2 = [1.0, 0.2, -4.0];
        for eta2 in [0.0, 1.0, 10.0] {
            let got = optimistic_advantage(&a1, &a2, c.sqrt(), c, eta2).unwrap();
            for i in 0..3 {
                let err = (got[i] - (a1[i] + a2[i])).abs() / (a1[i].abs() + a2[i].abs());
                assert!(err <= 5e-6, "{err}");
            }
        }
    }
}
