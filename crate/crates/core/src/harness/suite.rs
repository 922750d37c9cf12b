use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{collect, gae_two_head, loss_gradient_check, ActorState, BonusSource};
use crate::belief::LocalUncertainty;
use crate::error::{Error, Result};
use crate::nn::gradient_check;
use crate::par::{try_map_indexed, Execution};
use crate::rng::{purpose, stream};
use crate::testbed::{random_instance, random_layered_dag, random_logits, InstanceSpec};
use crate::verify::{policy_difference_identity_check, verify_posterior_bounds, verify_theorem2, MonteCarloConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Pointwise posterior-variance bound on Q.
    Theorem1,
    /// Scalar posterior-variance bound on the value.
    Corollary1,
    /// Surrogate value and gradient agree with the optimistic value.
    Theorem2,
    PolicyDifference,
    GaeOracle,
    GradientCheck,
}

impl Suite {
    pub const ALL: [Suite; 6] =
        [Suite::Theorem1, Suite::Corollary1, Suite::Theorem2, Suite::PolicyDifference, Suite::GaeOracle, Suite::GradientCheck];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Corollary1 => "corollary1",
            Suite::Theorem2 => "theorem2",
            Suite::PolicyDifference => "policy_difference",
            Suite::GaeOracle => "gae_oracle",
            Suite::GradientCheck => "gradient_check",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<_> = Suite::ALL.iter().map(|x| x.name()).collect();
            Error::InvalidConfig(format!("unknown suite `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub suites: Vec<Suite>,
    /// Random instances for the posterior-bound suites.
    pub instances: usize,
    pub monte_carlo: MonteCarloConfig,
    pub theorem2_instances: usize,
    pub fd_step: f64,
    pub theorem2_tolerance: f64,
    pub beta: f64,
    pub c: f64,
    pub policy_difference_instances: usize,
    pub gae_batches: usize,
    pub gae_tolerance: f64,
    pub gradient_seeds: u64,
    pub gradient_tolerance: f64,
    /// Network shapes covered by the gradient check.
    pub network_shapes: Vec<Vec<usize>>,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            suites: Suite::ALL.to_vec(),
            instances: 50,
            monte_carlo: MonteCarloConfig::default(),
            theorem2_instances: 20,
            fd_step: 1e-4,
            theorem2_tolerance: 1e-6,
            beta: 1.0,
            c: 0.01,
            policy_difference_instances: 50,
            gae_batches: 100,
            gae_tolerance: 1e-9,
            gradient_seeds: 10,
            gradient_tolerance: 1e-5,
            network_shapes: vec![vec![49, 64, 32], vec![49, 64, 64, 32], vec![3, 5, 2]],
            seed: 0,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: Suite,
    pub pass: bool,
    /// Cases run and cases failed.
    pub cases: usize,
    pub failures: usize,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<18} {}/{} cases ok; {}", self.suite.name(), self.cases - self.failures, self.cases, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(f, "{}", if self.all_pass() { "ALL PASS" } else { "FAILURES PRESENT" })
    }
}

fn check(suite: Suite, outcomes: &[bool], detail: String) -> CheckResult {
    let failures = outcomes.iter().filter(|&&ok| !ok).count();
    CheckResult { suite, pass: failures == 0, cases: outcomes.len(), failures, detail }
}

fn posterior_suites(cfg: &VerifyConfig, want1: bool, want2: bool) -> Result<Vec<CheckResult>> {
    let spec = InstanceSpec::default();
    // Instances run one after another; each one parallelises over posterior samples.
    let reports = try_map_indexed(Execution::Sequential, cfg.instances, |i| {
        let inst = random_instance(&spec, &mut stream(cfg.seed, purpose::INSTANCE, i as u64))?;
        let mc = MonteCarloConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.monte_carlo.clone() };
        verify_posterior_bounds(&inst.belief, &inst.policy, &mc)
    })?;
    let mut out = Vec::new();
    if want1 {
        let worst = reports.iter().map(|(t, _)| t.max_excess).fold(f64::NEG_INFINITY, f64::max);
        let ratio = reports.iter().map(|(t, _)| t.max_ratio).fold(0.0, f64::max);
        let ok: Vec<bool> = reports.iter().map(|(t, _)| t.pass).collect();
        out.push(check(Suite::Theorem1, &ok, format!("max(var - Q2 - k*SE) = {worst:.3e}, max var/Q2 = {ratio:.3}")));
    }
    if want2 {
        let worst = reports.iter().map(|(_, c)| c.excess).fold(f64::NEG_INFINITY, f64::max);
        let jensen = reports.iter().all(|(_, c)| c.jensen_holds);
        let ok: Vec<bool> = reports.iter().map(|(_, c)| c.pass).collect();
        out.push(check(Suite::Corollary1, &ok, format!("max(var - eta2 - k*SE) = {worst:.3e}, Jensen bound holds: {jensen}")));
    }
    Ok(out)
}

fn theorem2_suite(cfg: &VerifyConfig) -> Result<CheckResult> {
    let spec = InstanceSpec::default();
    let reports = try_map_indexed(cfg.exec, cfg.theorem2_instances, |i| {
        let inst = random_instance(&spec, &mut stream(cfg.seed ^ 0x7432, purpose::INSTANCE, i as u64))?;
        verify_theorem2(&inst.model, &inst.nu, &inst.logits, cfg.beta, cfg.c, cfg.fd_step, cfg.theorem2_tolerance)
    })?;
    let gap = reports.iter().map(|r| r.value_gap).fold(0.0, f64::max);
    let grad = reports.iter().map(|r| r.max_grad_gap).fold(0.0, f64::max);
    let ok: Vec<bool> = reports.iter().map(|r| r.pass).collect();
    Ok(check(Suite::Theorem2, &ok, format!("max |L - eta~| = {gap:.3e}, max gradient gap = {grad:.3e}")))
}

fn policy_difference_suite(cfg: &VerifyConfig) -> Result<CheckResult> {
    let spec = InstanceSpec::default();
    let reports = try_map_indexed(cfg.exec, cfg.policy_difference_instances, |i| {
        let mut rng = stream(cfg.seed ^ 0x9d1f, purpose::INSTANCE, i as u64);
        let inst = random_instance(&spec, &mut rng)?;
        let other = random_logits(inst.model.num_states(), inst.model.num_actions(), &mut rng).to_policy();
        policy_difference_identity_check(&inst.model, &inst.nu, &inst.policy, &other)
    })?;
    let gap = reports.iter().map(|r| r.max_gap).fold(0.0, f64::max);
    let ok: Vec<bool> = reports.iter().map(|r| r.pass).collect();
    Ok(check(Suite::PolicyDifference, &ok, format!("max identity gap = {gap:.3e}")))
}

/// Largest gap between two-head GAE at λ = γ = 1 and Monte-Carlo
/// return-to-go minus baseline on one random episodic batch.
pub fn gae_oracle_gap(seed: u64) -> Result<f64> {
    let mut rng = stream(seed, purpose::INSTANCE, 0);
    let truth = random_layered_dag(&InstanceSpec::default(), &mut rng)?;
    // Acting in every layer takes exactly H + 1 steps, so whole episodes fill each stream.
    let env = truth.with_horizon(truth.horizon() + 1)?;
    let (ns, na) = (env.num_states(), env.num_actions());
    let nu = LocalUncertainty::new(ns, na, (0..ns * na).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let logits = random_logits(ns, na, &mut rng);
    let actors = rng.random_range(1..=6usize);
    let steps = env.horizon() * rng.random_range(1..=4usize);
    let mut streams: Vec<_> = (0..actors).map(|n| ActorState::new(stream(seed, purpose::ACTOR, n as u64))).collect();
    let batch = collect(&env, &logits, &mut BonusSource::Table(nu), &mut streams, steps, Execution::Sequential)?;
    let v1: Vec<f64> = (0..ns).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v2: Vec<f64> = (0..ns).map(|_| rng.random_range(0.0..1.0)).collect();
    let adv = gae_two_head(&batch, &v1, &v2, 1.0, 1.0);
    if !batch.dones[batch.len() - 1] {
        return Err(Error::InvalidConfig("oracle batch must end on an episode boundary".into()));
    }
    let mut worst = 0.0f64;
    for n in 0..actors {
        let (mut g1, mut g2) = (0.0, 0.0);
        for t in (0..steps).rev() {
            let i = batch.index(n, t);
            if batch.dones[i] {
                g1 = 0.0;
                g2 = 0.0;
            }
            g1 += batch.rewards1[i];
            g2 += batch.rewards2[i];
            let s = batch.states[i];
            worst = worst.max((adv.a1[i] - (g1 - v1[s])).abs()).max((adv.a2[i] - (g2 - v2[s])).abs());
        }
    }
    Ok(worst)
}

fn gae_suite(cfg: &VerifyConfig) -> Result<CheckResult> {
    let gaps = try_map_indexed(cfg.exec, cfg.gae_batches, |i| gae_oracle_gap(cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))?;
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    let ok: Vec<bool> = gaps.iter().map(|&g| g <= cfg.gae_tolerance).collect();
    Ok(check(Suite::GaeOracle, &ok, format!("max |GAE - (return - V)| = {worst:.3e}")))
}

fn gradient_suite(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut errors = Vec::new();
    for shape in &cfg.network_shapes {
        for seed in 0..cfg.gradient_seeds {
            errors.push(gradient_check(shape, cfg.seed.wrapping_add(seed))?);
        }
    }
    let net_worst = errors.iter().copied().fold(0.0, f64::max);
    let loss_errors: Vec<f64> = (0..cfg.gradient_seeds).map(|s| loss_gradient_check(cfg.seed.wrapping_add(s))).collect();
    let loss_worst = loss_errors.iter().copied().fold(0.0, f64::max);
    errors.extend(loss_errors);
    let ok: Vec<bool> = errors.iter().map(|&e| e < cfg.gradient_tolerance).collect();
    Ok(check(Suite::GradientCheck, &ok, format!("max relative error: networks {net_worst:.3e}, clipped objective {loss_worst:.3e}")))
}

/// Runs the selected suites in a fixed order.
pub fn verify_all(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.suites.is_empty() {
        return Err(Error::InvalidConfig("no verification suite selected".into()));
    }
    let want = |s| cfg.suites.contains(&s);
    let mut checks = Vec::new();
    if want(Suite::Theorem1) || want(Suite::Corollary1) {
        checks.extend(posterior_suites(cfg, want(Suite::Theorem1), want(Suite::Corollary1))?);
    }
    if want(Suite::Theorem2) {
        checks.push(theorem2_suite(cfg)?);
    }
    if want(Suite::PolicyDifference) {
        checks.push(policy_difference_suite(cfg)?);
    }
    if want(Suite::GaeOracle) {
        checks.push(gae_suite(cfg)?);
    }
    if want(Suite::GradientCheck) {
        checks.push(gradient_suite(cfg)?);
    }
    Ok(VerifyReport { checks })
}
