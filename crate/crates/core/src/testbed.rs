//! Random layered DAG instances for the verification suites.
//!
//! States are split into `H + 1` layers; every action of a layer-`l` state
//! moves to a random non-empty subset of layer `l + 1`, and the last layer
//! moves into an absorbing terminal sink. With the solver's `H + 1` decision
//! layers, timestep `h` is always spent in state layer `h`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::belief::{q_max_for, BeliefConfig, BeliefState, LocalUncertainty};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::{Policy, PolicyTable};

#[derive(Clone, Debug)]
pub struct InstanceSpec {
    /// Total states including the sink.
    pub max_states: usize,
    pub max_actions: usize,
    /// Largest solver horizon H (H + 1 state layers).
    pub max_horizon: usize,
    pub reward_variance: f64,
    /// Episodes of uniform-random play used to form the posterior.
    pub max_observed_episodes: usize,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self { max_states: 6, max_actions: 3, max_horizon: 5, reward_variance: 0.5, max_observed_episodes: 30 }
    }
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub truth: TabularMdp,
    pub belief: BeliefState,
    /// Posterior-mean model (T_τ, r_τ).
    pub model: TabularMdp,
    pub nu: LocalUncertainty,
    pub logits: PolicyTable,
    pub policy: Policy,
}

fn random_simplex<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

pub fn random_layered_dag<R: Rng + ?Sized>(spec: &InstanceSpec, rng: &mut R) -> Result<TabularMdp> {
    if spec.max_states < 3 || spec.max_actions < 1 || spec.max_horizon < 1 {
        return Err(Error::InvalidConfig("instance needs >= 3 states, >= 1 action and H >= 1".into()));
    }
    let horizon = rng.random_range(1..=spec.max_horizon.min(spec.max_states - 2));
    let num_layers = horizon + 1;
    let regular = rng.random_range(num_layers..=spec.max_states - 1);
    let na = rng.random_range(1.max(spec.max_actions.min(2))..=spec.max_actions);

    let mut layer_sizes = vec![1usize; num_layers];
    for _ in num_layers..regular {
        let l = rng.random_range(0..num_layers);
        layer_sizes[l] += 1;
    }
    let mut layers = Vec::with_capacity(num_layers);
    let mut next_id = 0;
    for &size in &layer_sizes {
        layers.push((next_id..next_id + size).collect::<Vec<_>>());
        next_id += size;
    }
    let sink = regular;
    let ns = regular + 1;

    let mut transition = vec![0.0; ns * na * ns];
    let mut reward_mean = vec![0.0; ns * na];
    let mut reward_std = vec![0.0; ns * na];
    let std = spec.reward_variance.sqrt();
    for (l, layer) in layers.iter().enumerate() {
        for &s in layer {
            for a in 0..na {
                let row = &mut transition[(s * na + a) * ns..(s * na + a + 1) * ns];
                if l + 1 == num_layers {
                    row[sink] = 1.0;
                } else {
                    let mut next = layers[l + 1].clone();
                    next.shuffle(rng);
                    let k = rng.random_range(1..=next.len());
                    for (sp, p) in next[..k].iter().zip(random_simplex(k, rng)) {
                        row[*sp] = p;
                    }
                }
                reward_mean[s * na + a] = rng.random_range(-1.0..1.0);
                reward_std[s * na + a] = std;
            }
        }
    }
    for a in 0..na {
        transition[(sink * na + a) * ns + sink] = 1.0;
    }
    let mut initial = vec![0.0; ns];
    for (&s, p) in layers[0].iter().zip(random_simplex(layers[0].len(), rng)) {
        initial[s] = p;
    }
    let mut terminal = vec![false; ns];
    terminal[sink] = true;
    TabularMdp::new(ns, na, horizon, transition, reward_mean, reward_std, initial, terminal)
}

pub fn random_logits<R: Rng + ?Sized>(num_states: usize, num_actions: usize, rng: &mut R) -> PolicyTable {
    let logits = (0..num_states * num_actions).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    PolicyTable { num_states, num_actions, logits }
}

/// Random DAG, a posterior formed from random play, and a random softmax policy.
pub fn random_instance<R: Rng + ?Sized>(spec: &InstanceSpec, rng: &mut R) -> Result<Instance> {
    let truth = random_layered_dag(spec, rng)?;
    let mut belief = BeliefState::for_mdp(&truth, &BeliefConfig::standard(spec.reward_variance, q_max_for(&truth)))?;
    // Simulate to the sink so the last layer is observed too.
    let sim = truth.with_horizon(truth.horizon() + 1)?;
    let episodes = rng.random_range(0..=spec.max_observed_episodes);
    for _ in 0..episodes {
        let mut s = sim.sample_initial(rng);
        for h in 0..sim.horizon() {
            let a = rng.random_range(0..sim.num_actions());
            let t = sim.step(s, a, h, rng)?;
            belief.observe(&t)?;
            if t.episode_done {
                break;
            }
            s = t.next_state;
        }
    }
    let model = belief.mean_model()?;
    let nu = belief.local_uncertainty();
    let logits = random_logits(truth.num_states(), truth.num_actions(), rng);
    let policy = logits.to_policy();
    Ok(Instance { truth, belief, model, nu, logits, policy })
}
