//! Tabular PPO with two value heads and the optimistic advantage.

mod gae;
mod loss;
mod rollout;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use gae::{eta2_estimate, gae, gae_two_head, optimistic_advantage, Advantages, Eta2Aggregation};
pub use loss::{clip_term, clipped_loss, loss_gradient_check, objective_and_gradient, HeadTargets, LossCoefficients, ObjectiveGradient, ObjectiveTerms};
pub use rollout::{collect, ActorState, BonusSource, EpisodeRecord, TrajectoryBatch};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::nn::Adam;
use crate::par::Execution;
use crate::policy::PolicyTable;
use crate::rnd::{RndConfig, RndEstimator};
use crate::rng::{purpose, stream, StreamRng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Extrinsic advantage only.
    #[default]
    Ppo,
    /// Optimistic advantage with exact `1/n(s′)` uncertainty rewards.
    OppoExact,
    /// Optimistic advantage with RND uncertainty rewards.
    OppoRnd,
    /// One head on extrinsic plus RND reward.
    Rnd,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ppo, Variant::OppoExact, Variant::OppoRnd, Variant::Rnd];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ppo => "ppo",
            Variant::OppoExact => "oppo_exact",
            Variant::OppoRnd => "oppo_rnd",
            Variant::Rnd => "rnd",
        }
    }

    pub fn uses_rnd(self) -> bool {
        matches!(self, Variant::OppoRnd | Variant::Rnd)
    }

    pub fn is_optimistic(self) -> bool {
        matches!(self, Variant::OppoExact | Variant::OppoRnd)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}` (expected ppo, oppo_exact, oppo_rnd or rnd)")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub variant: Variant,
    pub beta: f64,
    pub c: f64,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub actors: usize,
    pub steps_per_actor: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub policy_learning_rate: f64,
    pub value_learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub eta2_aggregation: Eta2Aggregation,
    pub rnd: RndConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ppo,
            beta: 1.0,
            c: 0.01,
            clip: 0.1,
            gamma: 0.99,
            lambda: 0.95,
            actors: 32,
            steps_per_actor: 64,
            epochs: 4,
            minibatches: 4,
            policy_learning_rate: 1e-3,
            value_learning_rate: 1e-3,
            value_coef: 0.5,
            entropy_coef: 0.01,
            eta2_aggregation: Eta2Aggregation::Mean,
            rnd: RndConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn batch_size(&self) -> usize {
        self.actors * self.steps_per_actor
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be a non-negative finite number");
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad("c must be a non-negative finite number");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.actors == 0 || self.steps_per_actor == 0 {
            return bad("actors and steps_per_actor must be positive");
        }
        if self.epochs == 0 || self.minibatches == 0 || self.minibatches > self.batch_size() {
            return bad("epochs must be positive and minibatches must lie in 1..=actors*steps_per_actor");
        }
        for (name, x) in [
            ("policy_learning_rate", self.policy_learning_rate),
            ("value_learning_rate", self.value_learning_rate),
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("rnd.learning_rate", self.rnd.learning_rate),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be a non-negative finite number")));
            }
        }
        if self.rnd.hidden == 0 || self.rnd.output == 0 {
            return bad("RND layer sizes must be positive");
        }
        Ok(())
    }

    fn coefficients(&self) -> LossCoefficients {
        LossCoefficients { clip: self.clip, value: self.value_coef, entropy: self.entropy_coef }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueHeads {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

impl ValueHeads {
    pub fn zeros(num_states: usize) -> Self {
        Self { v1: vec![0.0; num_states], v2: vec![0.0; num_states] }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct UpdateMetrics {
    /// Mean total extrinsic reward of episodes finished in the batch.
    pub mean_episode_reward: Option<f64>,
    pub episodes: usize,
    pub eta2: f64,
    /// Mean policy entropy over batch states before the update.
    pub entropy: f64,
    /// Fraction of minibatch samples outside the clip range, over all epochs.
    pub clip_fraction: f64,
    pub mean_r2: f64,
    pub bonus_ratio: Option<f64>,
    pub rnd_loss: Option<f64>,
    pub objective: f64,
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Learner plus the persistent actor streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    config: AgentConfig,
    num_states: usize,
    num_actions: usize,
    logits: PolicyTable,
    values: ValueHeads,
    policy_optimizer: Adam,
    value1_optimizer: Adam,
    value2_optimizer: Adam,
    bonus: BonusSource,
    actors: Vec<ActorState>,
    shuffle_rng: StreamRng,
    timesteps: u64,
    updates: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format_version: u32,
    agent: Agent,
}

impl Agent {
    /// Every random stream is derived from `seed` and a purpose tag, so the
    /// actor and shuffle streams do not depend on the variant.
    pub fn new(env: &TabularMdp, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ns = env.num_states();
        let bonus = match config.variant {
            Variant::Ppo => BonusSource::Zero,
            Variant::OppoExact => BonusSource::exact_count(ns),
            Variant::OppoRnd | Variant::Rnd => {
                let mut rng = stream(seed, purpose::RND_INIT, 0);
                BonusSource::rnd(RndEstimator::new(ns, config.rnd.clone(), &mut rng)?)
            }
        };
        Self::with_bonus(env, config, seed, bonus)
    }

    /// Like [`Agent::new`] with an explicit uncertainty-reward source.
    pub fn with_bonus(env: &TabularMdp, config: AgentConfig, seed: u64, bonus: BonusSource) -> Result<Self> {
        config.validate()?;
        let (ns, na) = (env.num_states(), env.num_actions());
        let actors = (0..config.actors).map(|n| ActorState::new(stream(seed, purpose::ACTOR, n as u64))).collect();
        Ok(Self {
            num_states: ns,
            num_actions: na,
            logits: PolicyTable::zeros(ns, na),
            values: ValueHeads::zeros(ns),
            policy_optimizer: Adam::new(ns * na, config.policy_learning_rate),
            value1_optimizer: Adam::new(ns, config.value_learning_rate),
            value2_optimizer: Adam::new(ns, config.value_learning_rate),
            bonus,
            actors,
            shuffle_rng: stream(seed, purpose::SHUFFLE, 0),
            timesteps: 0,
            updates: 0,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn logits(&self) -> &PolicyTable {
        &self.logits
    }

    pub fn set_logits(&mut self, logits: PolicyTable) -> Result<()> {
        if logits.num_states != self.num_states || logits.num_actions != self.num_actions {
            return Err(Error::DimensionMismatch { expected: self.num_states * self.num_actions, got: logits.logits.len() });
        }
        self.logits = logits;
        Ok(())
    }

    pub fn values(&self) -> &ValueHeads {
        &self.values
    }

    pub fn set_values(&mut self, values: ValueHeads) -> Result<()> {
        if values.v1.len() != self.num_states || values.v2.len() != self.num_states {
            return Err(Error::DimensionMismatch { expected: self.num_states, got: values.v1.len().min(values.v2.len()) });
        }
        self.values = values;
        Ok(())
    }

    pub fn bonus(&self) -> &BonusSource {
        &self.bonus
    }

    pub fn timesteps(&self) -> u64 {
        self.timesteps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn check_env(&self, env: &TabularMdp) -> Result<()> {
        if env.num_states() != self.num_states || env.num_actions() != self.num_actions {
            return Err(Error::DimensionMismatch { expected: self.num_states * self.num_actions, got: env.num_states() * env.num_actions() });
        }
        Ok(())
    }

    pub fn collect(&mut self, env: &TabularMdp, exec: Execution) -> Result<TrajectoryBatch> {
        self.check_env(env)?;
        let batch = collect(env, &self.logits, &mut self.bonus, &mut self.actors, self.config.steps_per_actor, exec)?;
        self.timesteps += batch.len() as u64;
        Ok(batch)
    }

    /// Advantage used for the policy term of the given variant.
    pub fn advantages(&self, batch: &TrajectoryBatch) -> Result<(Advantages, Vec<f64>, f64)> {
        let cfg = &self.config;
        if cfg.variant == Variant::Rnd {
            let combined: Vec<f64> = batch.rewards1.iter().zip(&batch.rewards2).map(|(a, b)| a + b).collect();
            let (a1, target1) = gae(batch, &combined, &self.values.v1, cfg.gamma, cfg.lambda);
            let n = batch.len();
            let adv = Advantages { a1: a1.clone(), a2: vec![0.0; n], target1, target2: vec![0.0; n] };
            return Ok((adv, a1, 0.0));
        }
        let adv = gae_two_head(batch, &self.values.v1, &self.values.v2, cfg.gamma, cfg.lambda);
        let eta2 = eta2_estimate(batch, &self.values.v2, &adv.a2, cfg.eta2_aggregation);
        let policy_adv = if cfg.variant.is_optimistic() {
            optimistic_advantage(&adv.a1, &adv.a2, cfg.beta, cfg.c, eta2)?
        } else {
            adv.a1.clone()
        };
        Ok((adv, policy_adv, eta2))
    }

    /// Clipped-surrogate epochs on the batch, then one RND predictor step for
    /// variants with an RND source. The agent is left unchanged on error.
    pub fn update(&mut self, batch: &TrajectoryBatch) -> Result<UpdateMetrics> {
        batch.validate(self.num_states, self.num_actions)?;
        let mut next = self.clone();
        let metrics = next.update_in_place(batch)?;
        *self = next;
        Ok(metrics)
    }

    fn update_in_place(&mut self, batch: &TrajectoryBatch) -> Result<UpdateMetrics> {
        let (adv, policy_adv, eta2) = self.advantages(batch)?;
        if policy_adv.iter().chain(&adv.target1).chain(&adv.target2).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("advantage"));
        }
        let coef = self.config.coefficients();
        let train_head2 = self.config.variant != Variant::Rnd;
        let n = batch.len();
        let entropy = batch.states.iter().map(|&s| self.logits.entropy(s)).sum::<f64>() / n as f64;

        let mut order: Vec<usize> = (0..n).collect();
        let mut clip_total = 0.0;
        let mut clip_count = 0usize;
        let mut objective = 0.0;
        let mb = self.config.minibatches;
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.shuffle_rng);
            for k in 0..mb {
                let chunk = &order[k * n / mb..(k + 1) * n / mb];
                let heads = HeadTargets {
                    v1: &self.values.v1,
                    target1: &adv.target1,
                    v2: &self.values.v2,
                    target2: train_head2.then_some(adv.target2.as_slice()),
                };
                let (terms, grad) = objective_and_gradient(batch, chunk, &self.logits, &heads, &policy_adv, coef);
                if !terms.is_finite() {
                    return Err(Error::NonFinite("loss"));
                }
                clip_total += terms.clip_fraction * chunk.len() as f64;
                clip_count += chunk.len();
                objective = terms.objective;
                // Ascent: hand the optimizer the negated gradient.
                let neg = |g: &[f64]| g.iter().map(|x| -x).collect::<Vec<_>>();
                self.policy_optimizer.apply(&mut self.logits.logits, &neg(&grad.logits))?;
                self.value1_optimizer.apply(&mut self.values.v1, &neg(&grad.v1))?;
                if train_head2 {
                    self.value2_optimizer.apply(&mut self.values.v2, &neg(&grad.v2))?;
                }
            }
        }

        let rnd_loss = match &mut self.bonus {
            BonusSource::Rnd { estimator, .. } => {
                let ns = self.num_states;
                let obs = batch.next_states.iter().map(|&s| crate::nn::one_hot(s, ns)).collect::<Result<Vec<_>>>()?;
                Some(estimator.update_predictor(&obs)?)
            }
            _ => None,
        };
        self.updates += 1;
        let episodes = batch.episodes.len();
        Ok(UpdateMetrics {
            mean_episode_reward: (episodes > 0).then(|| batch.episodes.iter().map(|e| e.total_reward).sum::<f64>() / episodes as f64),
            episodes,
            eta2,
            entropy,
            clip_fraction: clip_total / clip_count as f64,
            mean_r2: batch.rewards2.iter().sum::<f64>() / n as f64,
            bonus_ratio: batch.bonus_ratio,
            rnd_loss,
            objective,
        })
    }

    /// One collect-then-update iteration.
    pub fn train_iteration(&mut self, env: &TabularMdp, exec: Execution) -> Result<(TrajectoryBatch, UpdateMetrics)> {
        let batch = self.collect(env, exec)?;
        let metrics = self.update(&batch)?;
        Ok((batch, metrics))
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let ck = Checkpoint { format_version: CHECKPOINT_FORMAT_VERSION, agent: self.clone() };
        std::fs::write(path, serde_json::to_vec(&ck)?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
        let version = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::FormatVersion(version));
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        ck.agent.config.validate()?;
        Ok(ck.agent)
    }
}
