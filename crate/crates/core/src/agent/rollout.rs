use serde::{Deserialize, Serialize};

use crate::belief::LocalUncertainty;
use crate::error::{Error, Result};
use crate::mdp::{sample_index, TabularMdp};
use crate::nn::one_hot;
use crate::par::{try_map_indexed, Execution};
use crate::policy::{softmax_into, PolicyTable};
use crate::rnd::{bonus_count_ratio, RndEstimator};
use crate::rng::StreamRng;

/// Where the uncertainty reward r₂ of a transition comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusSource {
    Zero,
    /// `1 / n(s′)` with next-state counts incremented before the lookup.
    ExactCount { counts: Vec<u64> },
    /// RND bonus of the next state; `counts` shadows exact visitation for the
    /// bonus-ratio diagnostic.
    Rnd { estimator: Box<RndEstimator>, counts: Vec<u64> },
    /// A fixed ν(s, a) table.
    Table(LocalUncertainty),
}

impl BonusSource {
    pub fn exact_count(num_states: usize) -> Self {
        BonusSource::ExactCount { counts: vec![0; num_states] }
    }

    pub fn rnd(estimator: RndEstimator) -> Self {
        let n = estimator.input_size();
        BonusSource::Rnd { estimator: Box::new(estimator), counts: vec![0; n] }
    }

    pub fn estimator(&self) -> Option<&RndEstimator> {
        match self {
            BonusSource::Rnd { estimator, .. } => Some(estimator),
            _ => None,
        }
    }

    /// Fills `batch.rewards2` in actor-major visitation order. Returns the
    /// batch-mean RND-bonus / (1/n) ratio for the RND source.
    fn fill(&mut self, batch: &mut TrajectoryBatch) -> Result<Option<f64>> {
        match self {
            BonusSource::Zero => {
                batch.rewards2.iter_mut().for_each(|r| *r = 0.0);
                Ok(None)
            }
            BonusSource::ExactCount { counts } => {
                for (r, &sp) in batch.rewards2.iter_mut().zip(&batch.next_states) {
                    counts[sp] += 1;
                    *r = 1.0 / counts[sp] as f64;
                }
                Ok(None)
            }
            BonusSource::Rnd { estimator, counts } => {
                // The predictor is frozen during collection, so one lookup per state suffices.
                let ns = counts.len();
                let mut bonus = Vec::with_capacity(ns);
                let mut raw = Vec::with_capacity(ns);
                for s in 0..ns {
                    let x = one_hot(s, ns)?;
                    raw.push(estimator.raw_bonus(&x)?);
                    bonus.push(estimator.bonus(&x)?);
                }
                let mut sample_raw = Vec::with_capacity(batch.len());
                let mut sample_counts = Vec::with_capacity(batch.len());
                for (r, &sp) in batch.rewards2.iter_mut().zip(&batch.next_states) {
                    counts[sp] += 1;
                    *r = bonus[sp];
                    sample_raw.push(raw[sp]);
                    sample_counts.push(counts[sp]);
                }
                Ok(Some(bonus_count_ratio(&sample_raw, &sample_counts)?))
            }
            BonusSource::Table(nu) => {
                for ((r, &s), &a) in batch.rewards2.iter_mut().zip(&batch.states).zip(&batch.actions) {
                    *r = nu.get(s, a);
                }
                Ok(None)
            }
        }
    }
}

/// Persistent environment state of one actor stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorState {
    pub rng: StreamRng,
    pub state: usize,
    pub step: usize,
    pub episode_return: f64,
    /// The next step begins a new episode.
    pub needs_reset: bool,
}

impl ActorState {
    pub fn new(rng: StreamRng) -> Self {
        Self { rng, state: 0, step: 0, episode_return: 0.0, needs_reset: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Step within the batch at which the episode ended.
    pub step: usize,
    pub actor: usize,
    pub total_reward: f64,
}

/// `N × T` samples stored actor-major: index `n * T + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub actors: usize,
    pub steps: usize,
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub next_states: Vec<usize>,
    pub rewards1: Vec<f64>,
    pub rewards2: Vec<f64>,
    pub dones: Vec<bool>,
    pub episode_starts: Vec<bool>,
    pub log_probs: Vec<f64>,
    /// Completed episodes ordered by (step, actor).
    pub episodes: Vec<EpisodeRecord>,
    pub bonus_ratio: Option<f64>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.actors * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, actor: usize, step: usize) -> usize {
        actor * self.steps + step
    }

    /// Checks shapes and that every sample is consistent with `num_states`.
    pub fn validate(&self, num_states: usize, num_actions: usize) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        for len in [
            self.states.len(),
            self.actions.len(),
            self.next_states.len(),
            self.rewards1.len(),
            self.rewards2.len(),
            self.dones.len(),
            self.episode_starts.len(),
            self.log_probs.len(),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if self.states.iter().chain(&self.next_states).any(|&s| s >= num_states) {
            return Err(Error::OutOfRange { what: "state", index: num_states, limit: num_states });
        }
        if self.actions.iter().any(|&a| a >= num_actions) {
            return Err(Error::OutOfRange { what: "action", index: num_actions, limit: num_actions });
        }
        if self.rewards2.iter().any(|&r| !(r >= 0.0)) {
            return Err(Error::InvalidConfig("uncertainty rewards must be non-negative".into()));
        }
        Ok(())
    }
}

struct Segment {
    actor: ActorState,
    states: Vec<usize>,
    actions: Vec<usize>,
    next_states: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    starts: Vec<bool>,
    log_probs: Vec<f64>,
    episodes: Vec<EpisodeRecord>,
}

fn run_actor(env: &TabularMdp, logits: &PolicyTable, mut actor: ActorState, index: usize, steps: usize) -> Result<Segment> {
    let mut seg = Segment {
        actor: actor.clone(),
        states: Vec::with_capacity(steps),
        actions: Vec::with_capacity(steps),
        next_states: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
        dones: Vec::with_capacity(steps),
        starts: Vec::with_capacity(steps),
        log_probs: Vec::with_capacity(steps),
        episodes: Vec::new(),
    };
    let mut probs = vec![0.0; env.num_actions()];
    for t in 0..steps {
        let start = actor.needs_reset;
        if start {
            actor.state = env.sample_initial(&mut actor.rng);
            actor.step = 0;
            actor.episode_return = 0.0;
            actor.needs_reset = false;
        }
        softmax_into(logits.state_logits(actor.state), &mut probs);
        let action = sample_index(&probs, &mut actor.rng);
        let tr = env.step(actor.state, action, actor.step, &mut actor.rng)?;
        seg.states.push(actor.state);
        seg.actions.push(action);
        seg.next_states.push(tr.next_state);
        seg.rewards.push(tr.reward);
        seg.dones.push(tr.episode_done);
        seg.starts.push(start);
        seg.log_probs.push(logits.log_prob(actor.state, action));
        actor.episode_return += tr.reward;
        if tr.episode_done {
            seg.episodes.push(EpisodeRecord { step: t, actor: index, total_reward: actor.episode_return });
            actor.needs_reset = true;
        } else {
            actor.state = tr.next_state;
            actor.step += 1;
        }
    }
    seg.actor = actor;
    Ok(seg)
}

/// Runs every actor for `steps` steps under the softmax of `logits`, then
/// fills r₂ from `bonus`. Episodes reset inside a stream on termination and
/// actor states persist across calls.
pub fn collect(
    env: &TabularMdp,
    logits: &PolicyTable,
    bonus: &mut BonusSource,
    actors: &mut [ActorState],
    steps: usize,
    exec: Execution,
) -> Result<TrajectoryBatch> {
    if actors.is_empty() || steps == 0 {
        return Err(Error::EmptyBatch);
    }
    if logits.num_states != env.num_states() || logits.num_actions != env.num_actions() {
        return Err(Error::DimensionMismatch { expected: env.num_states() * env.num_actions(), got: logits.logits.len() });
    }
    let segments = try_map_indexed(exec, actors.len(), |n| run_actor(env, logits, actors[n].clone(), n, steps))?;
    let total = actors.len() * steps;
    let mut batch = TrajectoryBatch {
        actors: actors.len(),
        steps,
        states: Vec::with_capacity(total),
        actions: Vec::with_capacity(total),
        next_states: Vec::with_capacity(total),
        rewards1: Vec::with_capacity(total),
        rewards2: vec![0.0; total],
        dones: Vec::with_capacity(total),
        episode_starts: Vec::with_capacity(total),
        log_probs: Vec::with_capacity(total),
        episodes: Vec::new(),
        bonus_ratio: None,
    };
    for (slot, seg) in actors.iter_mut().zip(segments) {
        *slot = seg.actor;
        batch.states.extend(seg.states);
        batch.actions.extend(seg.actions);
        batch.next_states.extend(seg.next_states);
        batch.rewards1.extend(seg.rewards);
        batch.dones.extend(seg.dones);
        batch.episode_starts.extend(seg.starts);
        batch.log_probs.extend(seg.log_probs);
        batch.episodes.extend(seg.episodes);
    }
    batch.episodes.sort_by_key(|e| (e.step, e.actor));
    batch.bonus_ratio = bonus.fill(&mut batch)?;
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// 0 -a0-> 1 -a0-> 2 (terminal), reward 1 per step; action 1 self-loops with reward 0.
    fn chain() -> TabularMdp {
        let mut t = vec![0.0; 3 * 2 * 3];
        t[0 * 3 + 1] = 1.0;
        t[1 * 3 + 0] = 1.0;
        t[2 * 3 + 2] = 1.0;
        t[3 * 3 + 1] = 1.0;
        t[4 * 3 + 2] = 1.0;
        t[5 * 3 + 2] = 1.0;
        TabularMdp::new(3, 2, 10, t, vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0], vec![0.0; 6], vec![1.0, 0.0, 0.0], vec![false, false, true])
            .unwrap()
    }

    fn greedy_a0() -> PolicyTable {
        PolicyTable::from_logits(3, 2, vec![50.0, -50.0, 50.0, -50.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn deterministic_trace_matches_hand_simulation() {
        let env = chain();
        let mut actors = vec![ActorState::new(stream(0, 1, 0))];
        let batch = collect(&env, &greedy_a0(), &mut BonusSource::Zero, &mut actors, 3, Execution::Sequential).unwrap();
        assert_eq!(batch.states, vec![0, 1, 0]);
        assert_eq!(batch.actions, vec![0, 0, 0]);
        assert_eq!(batch.next_states, vec![1, 2, 1]);
        assert_eq!(batch.rewards1, vec![1.0, 1.0, 1.0]);
        assert_eq!(batch.dones, vec![false, true, false]);
        assert_eq!(batch.episode_starts, vec![true, false, true]);
        assert_eq!(batch.episodes, vec![EpisodeRecord { step: 1, actor: 0, total_reward: 2.0 }]);
        assert_eq!(batch.rewards2, vec![0.0; 3]);
        // The stream continues mid-episode next time.
        assert_eq!(actors[0].state, 1);
        assert!(!actors[0].needs_reset);
    }

    #[test]
    fn exact_counts_replay_visitation_order() {
        let env = chain();
        let logits = PolicyTable::zeros(3, 2);
        let mut actors: Vec<_> = (0..3).map(|n| ActorState::new(stream(7, 1, n))).collect();
        let mut bonus = BonusSource::exact_count(3);
        let mut replay = vec![0u64; 3];
        for _ in 0..3 {
            let batch = collect(&env, &logits, &mut bonus, &mut actors, 20, Execution::Sequential).unwrap();
            for (sp, r) in batch.next_states.iter().zip(&batch.rewards2) {
                replay[*sp] += 1;
                assert_eq!(*r, 1.0 / replay[*sp] as f64);
            }
        }
        assert_eq!(bonus, BonusSource::ExactCount { counts: replay });
    }

    #[test]
    fn sequential_and_parallel_collection_agree() {
        let env = chain();
        let logits = PolicyTable::from_logits(3, 2, vec![0.3, -0.2, 0.1, 0.4, 0.0, 0.0]).unwrap();
        let run = |exec| {
            let mut actors: Vec<_> = (0..4).map(|n| ActorState::new(stream(3, 1, n))).collect();
            let mut bonus = BonusSource::exact_count(3);
            let b = collect(&env, &logits, &mut bonus, &mut actors, 17, exec).unwrap();
            (b, actors)
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn table_source_reads_nu() {
        let env = chain();
        let nu = LocalUncertainty::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mut actors = vec![ActorState::new(stream(0, 1, 0))];
        let b = collect(&env, &PolicyTable::zeros(3, 2), &mut BonusSource::Table(nu.clone()), &mut actors, 12, Execution::Sequential)
            .unwrap();
        for i in 0..b.len() {
            assert_eq!(b.rewards2[i], nu.get(b.states[i], b.actions[i]));
        }
        b.validate(3, 2).unwrap();
    }

    #[test]
    fn episode_ends_at_horizon() {
        let env = chain().with_horizon(2).unwrap();
        // Self-loop action keeps the agent in state 0 until the horizon.
        let logits = PolicyTable::from_logits(3, 2, vec![-50.0, 50.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut actors = vec![ActorState::new(stream(0, 1, 0))];
        let b = collect(&env, &logits, &mut BonusSource::Zero, &mut actors, 4, Execution::Sequential).unwrap();
        assert_eq!(b.dones, vec![false, true, false, true]);
        assert_eq!(b.episode_starts, vec![true, false, true, false]);
    }
}
