//! Bayesian posterior over an MDP's rewards and transitions.
//!
//! Transitions get a Dirichlet posterior over a fixed successor support per
//! state-action pair; mean rewards get a conjugate Gaussian posterior with
//! known observation variance. The belief also keeps the visit counters used
//! by the count-based bonuses.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::mdp::{TabularMdp, Transition};

/// Prior on each mean reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RewardPrior {
    /// Improper flat prior: the posterior is centred on the sample mean.
    Flat,
    Gaussian { mean: f64, variance: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeliefConfig {
    /// Known observation variance σ_r².
    pub reward_variance: f64,
    pub reward_prior: RewardPrior,
    /// Bound on |Q| used to weight the transition term of ν.
    pub q_max: f64,
    /// Dirichlet prior mass per support element.
    pub transition_prior_mass: f64,
}

impl BeliefConfig {
    /// Gaussian prior centred at 0 with variance 10·σ_r², unit Dirichlet mass.
    pub fn standard(reward_variance: f64, q_max: f64) -> Self {
        Self {
            reward_variance,
            reward_prior: RewardPrior::Gaussian { mean: 0.0, variance: 10.0 * reward_variance },
            q_max,
            transition_prior_mass: 1.0,
        }
    }
}

/// `q_max` for a known model: the number of reward-bearing layers the solver
/// evaluates (`H + 1`) times the largest absolute mean reward.
pub fn q_max_for(mdp: &TabularMdp) -> f64 {
    (mdp.horizon() + 1) as f64 * mdp.max_abs_reward()
}

/// ν per state-action pair, `[state][action]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalUncertainty {
    pub num_states: usize,
    pub num_actions: usize,
    pub nu: Vec<f64>,
}

impl LocalUncertainty {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self { num_states, num_actions, nu: vec![0.0; num_states * num_actions] }
    }

    pub fn new(num_states: usize, num_actions: usize, nu: Vec<f64>) -> Result<Self> {
        if nu.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch { expected: num_states * num_actions, got: nu.len() });
        }
        if nu.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("local uncertainty must be finite and non-negative".into()));
        }
        Ok(Self { num_states, num_actions, nu })
    }

    #[inline]
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.nu[state * self.num_actions + action]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { nu: self.nu.iter().map(|v| v * factor).collect(), ..self.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct BeliefState {
    template: TabularMdp,
    support: Vec<Vec<usize>>,
    alpha: Vec<Vec<f64>>,
    reward_count: Vec<u64>,
    reward_sum: Vec<f64>,
    next_state_count: Vec<u64>,
    reward_variance: f64,
    reward_prior: RewardPrior,
    q_max: f64,
}

impl BeliefState {
    /// Fresh belief whose Dirichlet support is the one-step reachable set of
    /// `mdp`. Initial distribution, terminals and horizon are taken as known.
    pub fn for_mdp(mdp: &TabularMdp, config: &BeliefConfig) -> Result<Self> {
        if !(config.reward_variance.is_finite() && config.reward_variance >= 0.0) {
            return Err(Error::InvalidConfig("reward variance must be non-negative".into()));
        }
        if !(config.transition_prior_mass > 0.0) {
            return Err(Error::InvalidConfig("Dirichlet prior mass must be positive".into()));
        }
        if !(config.q_max.is_finite() && config.q_max >= 0.0) {
            return Err(Error::InvalidConfig("q_max must be non-negative".into()));
        }
        if let RewardPrior::Gaussian { variance, .. } = config.reward_prior {
            if !(variance >= 0.0) {
                return Err(Error::InvalidConfig("reward prior variance must be non-negative".into()));
            }
        }
        let sa = mdp.num_states() * mdp.num_actions();
        let mut support = Vec::with_capacity(sa);
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                support.push(mdp.successors(s, a));
            }
        }
        let alpha = support.iter().map(|sup| vec![config.transition_prior_mass; sup.len()]).collect();
        Ok(Self {
            template: mdp.clone(),
            support,
            alpha,
            reward_count: vec![0; sa],
            reward_sum: vec![0.0; sa],
            next_state_count: vec![0; mdp.num_states()],
            reward_variance: config.reward_variance,
            reward_prior: config.reward_prior,
            q_max: config.q_max,
        })
    }

    pub fn num_states(&self) -> usize {
        self.template.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.template.num_actions()
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn reward_variance(&self) -> f64 {
        self.reward_variance
    }

    fn sa(&self, state: usize, action: usize) -> Result<usize> {
        check_index("state", state, self.num_states())?;
        check_index("action", action, self.num_actions())?;
        Ok(self.template.sa_index(state, action))
    }

    pub fn support(&self, state: usize, action: usize) -> &[usize] {
        &self.support[self.template.sa_index(state, action)]
    }

    pub fn dirichlet_alpha(&self, state: usize, action: usize) -> &[f64] {
        &self.alpha[self.template.sa_index(state, action)]
    }

    pub fn visit_count(&self, state: usize, action: usize) -> u64 {
        self.reward_count[self.template.sa_index(state, action)]
    }

    pub fn next_state_count(&self, state: usize) -> u64 {
        self.next_state_count[state]
    }

    pub fn observe(&mut self, t: &Transition) -> Result<()> {
        let sa = self.sa(t.state, t.action)?;
        check_index("next state", t.next_state, self.num_states())?;
        let slot = self.support[sa].iter().position(|&s| s == t.next_state).ok_or_else(|| {
            Error::InvalidConfig(format!("successor {} outside the support of ({}, {})", t.next_state, t.state, t.action))
        })?;
        self.alpha[sa][slot] += 1.0;
        self.reward_count[sa] += 1;
        self.reward_sum[sa] += t.reward;
        self.next_state_count[t.next_state] += 1;
        Ok(())
    }

    /// Posterior mean and variance of the mean reward.
    pub fn reward_posterior(&self, state: usize, action: usize) -> (f64, f64) {
        let sa = self.template.sa_index(state, action);
        let n = self.reward_count[sa] as f64;
        let sum = self.reward_sum[sa];
        let sigma2 = self.reward_variance;
        match self.reward_prior {
            RewardPrior::Flat => {
                if n == 0.0 {
                    (0.0, sigma2)
                } else {
                    (sum / n, sigma2 / n)
                }
            }
            RewardPrior::Gaussian { mean, variance } => {
                if variance == 0.0 {
                    (mean, 0.0)
                } else if sigma2 == 0.0 {
                    if n == 0.0 {
                        (mean, variance)
                    } else {
                        (sum / n, 0.0)
                    }
                } else {
                    let precision = 1.0 / variance + n / sigma2;
                    ((mean / variance + sum / sigma2) / precision, 1.0 / precision)
                }
            }
        }
    }

    /// Posterior mean transition row as a dense vector over states.
    pub fn mean_transition(&self, state: usize, action: usize) -> Vec<f64> {
        let sa = self.template.sa_index(state, action);
        let total: f64 = self.alpha[sa].iter().sum();
        let mut row = vec![0.0; self.num_states()];
        for (&s, &a) in self.support[sa].iter().zip(&self.alpha[sa]) {
            row[s] = a / total;
        }
        row
    }

    /// `Σ_{s'} var T̂(s,a,s') / T_τ(s,a,s')`, which for a Dirichlet with
    /// support size K and total mass α₀ is `(K − 1)/(α₀ + 1)`.
    pub fn transition_uncertainty(&self, state: usize, action: usize) -> f64 {
        let alpha = self.dirichlet_alpha(state, action);
        let k = alpha.len() as f64;
        if k <= 1.0 {
            return 0.0;
        }
        let total: f64 = alpha.iter().sum();
        (k - 1.0) / (total + 1.0)
    }

    pub fn local_uncertainty_nu(&self, state: usize, action: usize) -> f64 {
        let (_, reward_var) = self.reward_posterior(state, action);
        reward_var + self.q_max * self.q_max * self.transition_uncertainty(state, action)
    }

    pub fn local_uncertainty(&self) -> LocalUncertainty {
        let (ns, na) = (self.num_states(), self.num_actions());
        let nu = (0..ns).flat_map(|s| (0..na).map(move |a| (s, a))).map(|(s, a)| self.local_uncertainty_nu(s, a)).collect();
        LocalUncertainty { num_states: ns, num_actions: na, nu }
    }

    /// Tabular heuristic `c_u / max(n_{s,a}, 1)`.
    pub fn cu_bound(&self, state: usize, action: usize, c_u: f64) -> Result<f64> {
        if !(c_u > 0.0) {
            return Err(Error::InvalidConfig("c_u must be positive".into()));
        }
        let sa = self.sa(state, action)?;
        Ok(c_u / self.reward_count[sa].max(1) as f64)
    }

    pub fn next_state_count_bonus(&self, next_state: usize) -> f64 {
        1.0 / self.next_state_count[next_state].max(1) as f64
    }

    /// Posterior-mean model (T_τ, r_τ) with the known initial distribution.
    pub fn mean_model(&self) -> Result<TabularMdp> {
        let (ns, na) = (self.num_states(), self.num_actions());
        let mut transition = Vec::with_capacity(ns * na * ns);
        let mut reward_mean = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for a in 0..na {
                transition.extend(self.mean_transition(s, a));
                reward_mean.push(self.reward_posterior(s, a).0);
            }
        }
        let std = vec![self.reward_variance.sqrt(); ns * na];
        self.template.with_dynamics(transition, reward_mean, std)
    }

    /// Draws one (r̂, T̂) pair from the posterior.
    pub fn sample_mdp<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TabularMdp> {
        let (ns, na) = (self.num_states(), self.num_actions());
        let mut transition = vec![0.0; ns * na * ns];
        let mut reward_mean = vec![0.0; ns * na];
        let mut draws = Vec::new();
        for sa in 0..ns * na {
            let alpha = &self.alpha[sa];
            let row = &mut transition[sa * ns..(sa + 1) * ns];
            if alpha.len() == 1 {
                row[self.support[sa][0]] = 1.0;
            } else {
                draws.clear();
                for &a in alpha {
                    let g = Gamma::new(a, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                    draws.push(g.sample(rng));
                }
                let total: f64 = draws.iter().sum();
                if total > 0.0 {
                    for (&s, g) in self.support[sa].iter().zip(&draws) {
                        row[s] = g / total;
                    }
                } else {
                    // Every gamma draw underflowed; fall back to the mean.
                    let mass: f64 = alpha.iter().sum();
                    for (&s, a) in self.support[sa].iter().zip(alpha) {
                        row[s] = a / mass;
                    }
                }
                // Renormalise so rows sum to one to rounding.
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= sum);
            }
            let (mean, var) = self.reward_posterior(sa / na, sa % na);
            let z: f64 = rng.sample(StandardNormal);
            reward_mean[sa] = mean + var.sqrt() * z;
        }
        let std = vec![self.reward_variance.sqrt(); ns * na];
        self.template.with_dynamics(transition, reward_mean, std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// One state-action pair with three successors.
    fn three_way() -> TabularMdp {
        TabularMdp::new(
            4,
            1,
            2,
            vec![0.0, 0.2, 0.3, 0.5, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0; 4],
            vec![0.0; 4],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![false; 4],
        )
        .unwrap()
    }

    fn obs(s: usize, a: usize, r: f64, sp: usize) -> Transition {
        Transition { state: s, action: a, reward: r, next_state: sp, step_index: 0, episode_done: false }
    }

    #[test]
    fn observe_raises_alpha_and_counts() {
        let mdp = three_way();
        let mut b = BeliefState::for_mdp(&mdp, &BeliefConfig::standard(0.5, 1.0)).unwrap();
        b.observe(&obs(0, 0, 0.0, 2)).unwrap();
        assert_eq!(b.dirichlet_alpha(0, 0), &[1.0, 2.0, 1.0]);
        assert_eq!(b.visit_count(0, 0), 1);
        assert_eq!(b.next_state_count(2), 1);
        assert!(b.observe(&obs(0, 0, 0.0, 0)).is_err());
    }

    #[test]
    fn flat_prior_symmetric_mean() {
        let mdp = three_way();
        let cfg = BeliefConfig { reward_prior: RewardPrior::Flat, ..BeliefConfig::standard(0.5, 1.0) };
        let mut b = BeliefState::for_mdp(&mdp, &cfg).unwrap();
        b.observe(&obs(0, 0, 1.0, 1)).unwrap();
        b.observe(&obs(0, 0, 0.0, 1)).unwrap();
        assert_eq!(b.reward_posterior(0, 0).0, 0.5);
    }

    #[test]
    fn posterior_row_converges() {
        let mdp = three_way();
        let mut b = BeliefState::for_mdp(&mdp, &BeliefConfig::standard(0.5, 1.0)).unwrap();
        let mut rng = stream(7, 0, 0);
        let n = 1000;
        for _ in 0..n {
            let t = mdp.step(0, 0, 0, &mut rng).unwrap();
            b.observe(&t).unwrap();
        }
        let row = b.mean_transition(0, 0);
        for (sp, &p) in mdp.transition_row(0, 0).iter().enumerate() {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((row[sp] - p).abs() <= 3.0 * se + 3.0 / n as f64, "sp={sp} {} vs {p}", row[sp]);
        }
    }

    #[test]
    fn reward_variance_below_sigma_over_n() {
        let mdp = three_way();
        let mut b = BeliefState::for_mdp(&mdp, &BeliefConfig::standard(0.5, 1.0)).unwrap();
        for n in 1..20 {
            b.observe(&obs(0, 0, 0.3, 1)).unwrap();
            assert!(b.reward_posterior(0, 0).1 <= 0.5 / n as f64);
        }
    }

    #[test]
    fn deterministic_successor_has_no_transition_term() {
        let mdp = three_way();
        let b = BeliefState::for_mdp(&mdp, &BeliefConfig::standard(0.5, 3.0)).unwrap();
        assert_eq!(b.transition_uncertainty(1, 0), 0.0);
    }

    #[test]
    fn uniform_prior_three_successors() {
        // Oracle: evaluate the Dirichlet variance/mean ratio term by term.
        let alpha = [1.0f64, 1.0, 1.0];
        let a0: f64 = alpha.iter().sum();
        let direct: f64 = alpha.iter().map(|a| (a * (a0 - a) / (a0 * a0 * (a0 + 1.0))) / (a / a0)).sum();
        assert!((direct - 0.5).abs() < 1e-15);
        let mdp = three_way();
        let q_max = 2.0;
        let cfg = BeliefConfig { reward_variance: 0.0, reward_prior: RewardPrior::Gaussian { mean: 0.0, variance: 0.0 }, q_max, transition_prior_mass: 1.0 };
        let b = BeliefState::for_mdp(&mdp, &cfg).unwrap();
        assert!((b.transition_uncertainty(0, 0) - direct).abs() < 1e-15);
        assert!((b.local_uncertainty_nu(0, 0) - 0.5 * q_max * q_max).abs() < 1e-15);
    }

    #[test]
    fn cu_bound_rules() {
        let mdp = three_way();
        let mut b = BeliefState::for_mdp(&mdp, &BeliefConfig::standard(0.5, 2.0)).unwrap();
        assert_eq!(b.cu_bound(0, 0, 3.0).unwrap(), 3.0);
        assert!(b.cu_bound(0, 0, 0.0).is_err());
        let k = b.support(0, 0).len() as f64;
        let c_u = 0.5 + 4.0 * k;
        for _ in 0..4 {
            b.observe(&obs(0, 0, 0.0, 3)).unwrap();
        }
        assert_eq!(b.cu_bound(0, 0, c_u).unwrap(), c_u / 4.0);
        let four = b.cu_bound(0, 0, c_u).unwrap();
        for _ in 0..4 {
            b.observe(&obs(0, 0, 0.0, 3)).unwrap();
        }
        assert_eq!(b.cu_bound(0, 0, c_u).unwrap(), four / 2.0);
    }

    #[test]
    fn nu_below_cu_bound_for_unit_prior() {
        let mdp = three_way();
        let q_max = 1.7;
        let mut b = BeliefState::for_mdp(&mdp, &BeliefConfig::standard(0.5, q_max)).unwrap();
        let mut rng = stream(11, 0, 0);
        for _ in 0..200 {
            let t = mdp.step(0, 0, 0, &mut rng).unwrap();
            b.observe(&t).unwrap();
            let k = b.support(0, 0).len() as f64;
            let c_u = 0.5 + q_max * q_max * k;
            assert!(b.local_uncertainty_nu(0, 0) <= b.cu_bound(0, 0, c_u).unwrap());
        }
    }

    #[test]
    fn nu_shrinks_with_data() {
        let mdp = three_way();
        let (mut at_n, mut at_2n) = (0.0, 0.0);
        for seq in 0..100 {
            let mut b = BeliefState::for_mdp(&mdp, &BeliefConfig::standard(0.5, 1.0)).unwrap();
            let mut rng = stream(seq, 0, 0);
            for i in 0..40 {
                let mut t = mdp.step(0, 0, 0, &mut rng).unwrap();
                t.reward = rng.sample::<f64, _>(StandardNormal) * 0.5f64.sqrt();
                b.observe(&t).unwrap();
                if i + 1 == 20 {
                    at_n += b.local_uncertainty_nu(0, 0);
                }
            }
            at_2n += b.local_uncertainty_nu(0, 0);
        }
        assert!(at_2n <= at_n);
    }

    #[test]
    fn count_bonus_clamps() {
        let mdp = three_way();
        let mut b = BeliefState::for_mdp(&mdp, &BeliefConfig::standard(0.5, 1.0)).unwrap();
        assert_eq!(b.next_state_count_bonus(3), 1.0);
        for _ in 0..100 {
            b.observe(&obs(0, 0, 0.0, 3)).unwrap();
        }
        assert_eq!(b.next_state_count_bonus(3), 0.01);
    }

    #[test]
    fn tree_bonus_matches_support_over_visits() {
        // Root with one action fanning out to 4 leaves.
        let p = [0.1, 0.2, 0.3, 0.4];
        let mut t = vec![0.0; 5 * 5];
        t[1..5].copy_from_slice(&p);
        for s in 1..5 {
            t[s * 5 + s] = 1.0;
        }
        let mdp = TabularMdp::new(5, 1, 1, t, vec![0.0; 5], vec![0.0; 5], vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![false; 5]).unwrap();
        let mut b = BeliefState::for_mdp(&mdp, &BeliefConfig::standard(0.5, 1.0)).unwrap();
        let mut rng = stream(3, 0, 0);
        let n = 20_000;
        for _ in 0..n {
            let tr = mdp.step(0, 0, 0, &mut rng).unwrap();
            b.observe(&tr).unwrap();
        }
        let avg: f64 = (1..5).map(|sp| p[sp - 1] * b.next_state_count_bonus(sp)).sum();
        let approx = 4.0 / n as f64;
        assert!((avg - approx).abs() / approx < 0.05, "{avg} vs {approx}");
    }

    #[test]
    fn sampled_rows_are_stochastic_and_reproducible() {
        let mdp = three_way();
        let b = BeliefState::for_mdp(&mdp, &BeliefConfig::standard(0.5, 1.0)).unwrap();
        for seed in 0..50 {
            let m = b.sample_mdp(&mut stream(seed, 0, 0)).unwrap();
            for s in 0..4 {
                let total: f64 = m.transition_row(s, 0).iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
            assert_eq!(m, b.sample_mdp(&mut stream(seed, 0, 0)).unwrap());
        }
    }

    #[test]
    fn concentrated_dirichlet_sampling() {
        let mdp = three_way();
        let mut b = BeliefState::for_mdp(&mdp, &BeliefConfig::standard(0.5, 1.0)).unwrap();
        let mut rng = stream(5, 0, 0);
        for _ in 0..200_000 {
            let t = mdp.step(0, 0, 0, &mut rng).unwrap();
            b.observe(&t).unwrap();
        }
        let mean = b.mean_transition(0, 0);
        let draws = 10_000;
        let mut within = 0;
        for _ in 0..draws {
            let m = b.sample_mdp(&mut rng).unwrap();
            if m.transition_row(0, 0).iter().zip(&mean).all(|(p, q)| (p - q).abs() < 1e-2) {
                within += 1;
            }
        }
        assert!(within as f64 / draws as f64 > 0.999);
    }

    #[test]
    fn zero_reward_variance_samples_mean() {
        let mdp = three_way();
        let cfg = BeliefConfig { reward_variance: 0.0, reward_prior: RewardPrior::Gaussian { mean: 0.25, variance: 0.0 }, q_max: 1.0, transition_prior_mass: 1.0 };
        let b = BeliefState::for_mdp(&mdp, &cfg).unwrap();
        let m = b.sample_mdp(&mut stream(1, 0, 0)).unwrap();
        assert!(m.reward_means().iter().all(|r| *r == 0.25));
    }
}
