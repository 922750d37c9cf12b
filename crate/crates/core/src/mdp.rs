//! Finite-horizon tabular MDPs.
//!
//! Transition probabilities are stored flat as `[state][action][next_state]`,
//! rewards as `[state][action]`. Terminal states absorb: stepping out of one
//! is an error and the solvers treat their values as zero.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};

const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    transition: Vec<f64>,
    reward_mean: Vec<f64>,
    reward_std: Vec<f64>,
    initial: Vec<f64>,
    terminal: Vec<bool>,
}

/// One simulated step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub step_index: usize,
    pub episode_done: bool,
}

pub(crate) fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidMdp(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::InvalidMdp(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// Inverse-CDF draw from a probability row using a single uniform.
pub(crate) fn sample_index<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

impl TabularMdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transition: Vec<f64>,
        reward_mean: Vec<f64>,
        reward_std: Vec<f64>,
        initial: Vec<f64>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidMdp("horizon must be at least 1".into()));
        }
        let sa = num_states * num_actions;
        for (len, expected, what) in [
            (transition.len(), sa * num_states, "transition"),
            (reward_mean.len(), sa, "reward_mean"),
            (reward_std.len(), sa, "reward_std"),
            (initial.len(), num_states, "initial"),
            (terminal.len(), num_states, "terminal"),
        ] {
            if len != expected {
                return Err(Error::InvalidMdp(format!("{what} has length {len}, expected {expected}")));
            }
        }
        for (i, row) in transition.chunks(num_states).enumerate() {
            check_distribution(row, &format!("transition row ({}, {})", i / num_actions, i % num_actions))?;
        }
        if reward_mean.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("reward_mean must be finite".into()));
        }
        if reward_std.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidMdp("reward_std must be finite and non-negative".into()));
        }
        check_distribution(&initial, "initial distribution")?;
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            transition,
            reward_mean,
            reward_std,
            initial,
            terminal,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of actions in a simulated episode.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn sa_index(&self, state: usize, action: usize) -> usize {
        state * self.num_actions + action
    }

    #[inline]
    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let start = self.sa_index(state, action) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    #[inline]
    pub fn reward_mean(&self, state: usize, action: usize) -> f64 {
        self.reward_mean[self.sa_index(state, action)]
    }

    #[inline]
    pub fn reward_std(&self, state: usize, action: usize) -> f64 {
        self.reward_std[self.sa_index(state, action)]
    }

    pub fn reward_means(&self) -> &[f64] {
        &self.reward_mean
    }

    pub fn reward_stds(&self) -> &[f64] {
        &self.reward_std
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    #[inline]
    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    /// Largest absolute mean reward.
    pub fn max_abs_reward(&self) -> f64 {
        self.reward_mean.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Successor states with positive probability.
    pub fn successors(&self, state: usize, action: usize) -> Vec<usize> {
        self.transition_row(state, action)
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(s, _)| s)
            .collect()
    }

    /// Same structure with new rewards and transitions; used for posterior samples.
    pub(crate) fn with_dynamics(&self, transition: Vec<f64>, reward_mean: Vec<f64>, reward_std: Vec<f64>) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.horizon,
            transition,
            reward_mean,
            reward_std,
            self.initial.clone(),
            self.terminal.clone(),
        )
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let mut out = self.clone();
        if horizon == 0 {
            return Err(Error::InvalidMdp("horizon must be at least 1".into()));
        }
        out.horizon = horizon;
        Ok(out)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.initial, rng)
    }

    /// Simulates one action. Always consumes exactly one uniform and one
    /// standard normal from `rng`.
    pub fn step<R: Rng + ?Sized>(&self, state: usize, action: usize, step_index: usize, rng: &mut R) -> Result<Transition> {
        check_index("state", state, self.num_states)?;
        check_index("action", action, self.num_actions)?;
        check_index("step", step_index, self.horizon)?;
        if self.terminal[state] {
            return Err(Error::EpisodeEnded);
        }
        let next_state = sample_index(self.transition_row(state, action), rng);
        let z: f64 = rng.sample(StandardNormal);
        let sa = self.sa_index(state, action);
        let reward = self.reward_mean[sa] + self.reward_std[sa] * z;
        Ok(Transition {
            state,
            action,
            reward,
            next_state,
            step_index,
            episode_done: self.terminal[next_state] || step_index + 1 == self.horizon,
        })
    }

    /// States reachable at each timestep `h = 0..=H`.
    ///
    /// Layer 0 is the support of the initial distribution. Terminal states
    /// appear in the layer where they are entered and do not propagate.
    pub fn reachable_layers(&self) -> Vec<Vec<usize>> {
        let mut layers = Vec::with_capacity(self.horizon + 1);
        let mut current: Vec<bool> = self.initial.iter().map(|p| *p > 0.0).collect();
        for h in 0..=self.horizon {
            layers.push((0..self.num_states).filter(|&s| current[s]).collect::<Vec<_>>());
            if h == self.horizon {
                break;
            }
            let mut next = vec![false; self.num_states];
            for s in (0..self.num_states).filter(|&s| current[s] && !self.terminal[s]) {
                for a in 0..self.num_actions {
                    for (sp, &p) in self.transition_row(s, a).iter().enumerate() {
                        if p > 0.0 {
                            next[sp] = true;
                        }
                    }
                }
            }
            current = next;
        }
        layers
    }

    /// Sticky-action wrapper over augmented states `(state, previous action)`.
    ///
    /// Previous-action slot `num_actions` is the no-op used at reset; it
    /// behaves like the chosen action. The executed action becomes the next
    /// state's previous action. Rewards of mixed actions are moment-matched
    /// to a single Gaussian.
    pub fn sticky_wrap(&self, zeta: f64) -> Result<TabularMdp> {
        if !(0.0..1.0).contains(&zeta) {
            return Err(Error::InvalidConfig(format!("sticky probability {zeta} outside [0, 1)")));
        }
        let slots = self.num_actions + 1;
        let ns = self.num_states * slots;
        let na = self.num_actions;
        let aug = |s: usize, prev: usize| s * slots + prev;

        let mut transition = vec![0.0; ns * na * ns];
        let mut reward_mean = vec![0.0; ns * na];
        let mut reward_std = vec![0.0; ns * na];
        for s in 0..self.num_states {
            for prev in 0..slots {
                for a in 0..na {
                    let row_start = (aug(s, prev) * na + a) * ns;
                    let sa = aug(s, prev) * na + a;
                    let repeats = prev != self.num_actions && prev != a && zeta > 0.0;
                    if !repeats {
                        for (sp, &p) in self.transition_row(s, a).iter().enumerate() {
                            transition[row_start + aug(sp, a)] = p;
                        }
                        reward_mean[sa] = self.reward_mean(s, a);
                        reward_std[sa] = self.reward_std(s, a);
                    } else {
                        for (sp, &p) in self.transition_row(s, a).iter().enumerate() {
                            transition[row_start + aug(sp, a)] += (1.0 - zeta) * p;
                        }
                        for (sp, &p) in self.transition_row(s, prev).iter().enumerate() {
                            transition[row_start + aug(sp, prev)] += zeta * p;
                        }
                        let (ma, mp) = (self.reward_mean(s, a), self.reward_mean(s, prev));
                        let (va, vp) = (self.reward_std(s, a).powi(2), self.reward_std(s, prev).powi(2));
                        reward_mean[sa] = (1.0 - zeta) * ma + zeta * mp;
                        let var = (1.0 - zeta) * va + zeta * vp + zeta * (1.0 - zeta) * (ma - mp).powi(2);
                        reward_std[sa] = var.sqrt();
                    }
                }
            }
        }
        let mut initial = vec![0.0; ns];
        let mut terminal = vec![false; ns];
        for s in 0..self.num_states {
            initial[aug(s, self.num_actions)] = self.initial[s];
            for prev in 0..slots {
                terminal[aug(s, prev)] = self.terminal[s];
            }
        }
        TabularMdp::new(ns, na, self.horizon, transition, reward_mean, reward_std, initial, terminal)
    }

    pub fn to_file_format(&self) -> MdpFile {
        let ns = self.num_states;
        let na = self.num_actions;
        MdpFile {
            format_version: MDP_FORMAT_VERSION,
            num_states: ns,
            num_actions: na,
            horizon: self.horizon,
            initial: self.initial.clone(),
            terminal: (0..ns).filter(|&s| self.terminal[s]).collect(),
            transition: (0..ns)
                .map(|s| (0..na).map(|a| self.transition_row(s, a).to_vec()).collect())
                .collect(),
            reward_mean: self.reward_mean.chunks(na).map(<[f64]>::to_vec).collect(),
            reward_std: self.reward_std.chunks(na).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn from_file_format(file: MdpFile) -> Result<Self> {
        if file.format_version != MDP_FORMAT_VERSION {
            return Err(Error::FormatVersion(file.format_version));
        }
        let ns = file.num_states;
        let na = file.num_actions;
        let shape_ok = file.transition.len() == ns
            && file.transition.iter().all(|r| r.len() == na && r.iter().all(|row| row.len() == ns))
            && file.reward_mean.len() == ns
            && file.reward_mean.iter().all(|r| r.len() == na)
            && file.reward_std.len() == ns
            && file.reward_std.iter().all(|r| r.len() == na);
        if !shape_ok {
            return Err(Error::InvalidMdp("table shapes do not match num_states/num_actions".into()));
        }
        let mut terminal = vec![false; ns];
        for &s in &file.terminal {
            check_index("terminal state", s, ns)?;
            terminal[s] = true;
        }
        TabularMdp::new(
            ns,
            na,
            file.horizon,
            file.transition.into_iter().flatten().flatten().collect(),
            file.reward_mean.into_iter().flatten().collect(),
            file.reward_std.into_iter().flatten().collect(),
            file.initial,
            terminal,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file_format())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file_format(serde_json::from_str(&text)?)
    }
}

pub const MDP_FORMAT_VERSION: u32 = 1;

/// On-disk MDP layout: nested tables written as decimal JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub format_version: u32,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub initial: Vec<f64>,
    pub terminal: Vec<usize>,
    /// `[state][action][next_state]`
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward_mean: Vec<Vec<f64>>,
    pub reward_std: Vec<Vec<f64>>,
}
