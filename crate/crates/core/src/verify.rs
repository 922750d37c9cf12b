//! Numerical checks of the uncertainty bounds and of the surrogate's
//! first-order agreement with the optimistic value.

use crate::belief::{BeliefState, LocalUncertainty};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::par::{map_indexed, try_map_indexed, Execution};
use crate::policy::{Policy, PolicyTable};
use crate::rng::{purpose, stream};
use crate::ube::{evaluate, occupancy, occupancy_weighted_sum, solve, surrogate_l};

/// Settings for the posterior-sampling checks.
#[derive(Clone, Debug)]
pub struct MonteCarloConfig {
    pub samples: usize,
    pub bootstrap_resamples: usize,
    /// Number of standard errors of slack allowed.
    pub se_multiplier: f64,
    /// Multiplies ν before solving; 1.0 except in mutation runs.
    pub nu_scale: f64,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { samples: 10_000, bootstrap_resamples: 200, se_multiplier: 3.0, nu_scale: 1.0, seed: 0, exec: Execution::Parallel }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theorem1Report {
    /// max over (h, s, a) of `var Q̂ − Q₂ − k·SE`.
    pub max_excess: f64,
    /// `(h, s, a)` attaining `max_excess`.
    pub worst_cell: (usize, usize, usize),
    /// Largest observed `var Q̂ / Q₂` over cells with `Q₂ > 0`.
    pub max_ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corollary1Report {
    pub var_eta: f64,
    pub eta2: f64,
    pub standard_error: f64,
    /// `var η̂ − η₂ − k·SE`
    pub excess: f64,
    /// `Σ ρ π var Q̂⁰`, the intermediate quantity of the Jensen step.
    pub jensen_bound: f64,
    pub jensen_holds: bool,
    pub pass: bool,
}

/// Solved posterior samples, stored sample-major.
struct PosteriorDraws {
    cells: usize,
    samples: usize,
    q: Vec<f64>,
    eta: Vec<f64>,
}

fn draw_posterior(belief: &BeliefState, policy: &Policy, cfg: &MonteCarloConfig) -> Result<PosteriorDraws> {
    let per_sample = try_map_indexed(cfg.exec, cfg.samples, |i| -> Result<(Vec<f64>, f64)> {
        let mut rng = stream(cfg.seed, purpose::POSTERIOR_SAMPLE, i as u64);
        let mdp = belief.sample_mdp(&mut rng)?;
        let (q, v) = evaluate(&mdp, policy, mdp.reward_means());
        let eta = mdp.initial().iter().zip(&v[..mdp.num_states()]).map(|(p, x)| p * x).sum();
        Ok((q, eta))
    })?;
    let cells = per_sample.first().map_or(0, |(q, _)| q.len());
    let mut q = Vec::with_capacity(cells * cfg.samples);
    let mut eta = Vec::with_capacity(cfg.samples);
    for (qs, e) in per_sample {
        q.extend(qs);
        eta.push(e);
    }
    Ok(PosteriorDraws { cells, samples: cfg.samples, q, eta })
}

/// Column means and unbiased variances of a sample-major matrix.
fn column_moments(data: &[f64], cols: usize) -> (Vec<f64>, Vec<f64>) {
    let n = data.len() / cols;
    // Shift by the first row so constant columns give exactly zero variance.
    let pivot = &data[..cols];
    let mut shift = vec![0.0; cols];
    for row in data.chunks(cols) {
        for ((m, x), p) in shift.iter_mut().zip(row).zip(pivot) {
            *m += x - p;
        }
    }
    shift.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; cols];
    for row in data.chunks(cols) {
        for ((v, x), (m, p)) in var.iter_mut().zip(row).zip(shift.iter().zip(pivot)) {
            let d = x - p - m;
            *v += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    let mean = shift.iter().zip(pivot).map(|(m, p)| m + p).collect();
    (mean, var)
}

/// Bootstrap standard error of each column's variance.
fn bootstrap_variance_se(data: &[f64], cols: usize, cfg: &MonteCarloConfig, tag: u64) -> Vec<f64> {
    let n = data.len() / cols;
    let (mean, _) = column_moments(data, cols);
    let resampled: Vec<Vec<f64>> = map_indexed(cfg.exec, cfg.bootstrap_resamples, |b| {
        use rand::Rng;
        let mut rng = stream(cfg.seed ^ tag, purpose::BOOTSTRAP, b as u64);
        let mut weight = vec![0u32; n];
        for _ in 0..n {
            weight[rng.random_range(0..n)] += 1;
        }
        let mut s1 = vec![0.0; cols];
        let mut s2 = vec![0.0; cols];
        for (row, &w) in data.chunks(cols).zip(&weight) {
            if w == 0 {
                continue;
            }
            let w = w as f64;
            for c in 0..cols {
                let d = row[c] - mean[c];
                s1[c] += w * d;
                s2[c] += w * d * d;
            }
        }
        (0..cols).map(|c| (s2[c] - s1[c] * s1[c] / n as f64) / (n - 1) as f64).collect()
    });
    let b = resampled.len() as f64;
    (0..cols)
        .map(|c| {
            let m = resampled.iter().map(|r| r[c]).sum::<f64>() / b;
            (resampled.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / (b - 1.0)).sqrt()
        })
        .collect()
}

fn validate_mc(cfg: &MonteCarloConfig) -> Result<()> {
    if cfg.samples < 2 || cfg.bootstrap_resamples < 2 {
        return Err(Error::InvalidConfig("need at least two samples and two bootstrap resamples".into()));
    }
    Ok(())
}

/// Checks `Q₂ ≥ var Q̂` pointwise and `η₂ ≥ var η̂` from one set of posterior draws.
pub fn verify_posterior_bounds(
    belief: &BeliefState,
    policy: &Policy,
    cfg: &MonteCarloConfig,
) -> Result<(Theorem1Report, Corollary1Report)> {
    validate_mc(cfg)?;
    let model = belief.mean_model()?;
    let nu = belief.local_uncertainty().scaled(cfg.nu_scale);
    let sol = solve(&model, &nu, policy, 0.0, 0.0)?;
    let draws = draw_posterior(belief, policy, cfg)?;
    let k = cfg.se_multiplier;

    let (_, var_q) = column_moments(&draws.q, draws.cells);
    let se_q = bootstrap_variance_se(&draws.q, draws.cells, cfg, 0);
    let (ns, na) = (sol.num_states, sol.num_actions);
    let mut max_excess = f64::NEG_INFINITY;
    let mut worst = 0;
    let mut max_ratio = 0.0f64;
    for c in 0..draws.cells {
        let excess = var_q[c] - sol.q2[c] - k * se_q[c];
        if excess > max_excess {
            max_excess = excess;
            worst = c;
        }
        if sol.q2[c] > 0.0 {
            max_ratio = max_ratio.max(var_q[c] / sol.q2[c]);
        }
    }
    let theorem1 = Theorem1Report {
        max_excess,
        worst_cell: (worst / (ns * na), (worst / na) % ns, worst % na),
        max_ratio,
        pass: max_excess <= 0.0,
    };

    let (_, var_eta) = column_moments(&draws.eta, 1);
    let se_eta = bootstrap_variance_se(&draws.eta, 1, cfg, 1)[0];
    let start = model.initial();
    let mut jensen_bound = 0.0;
    for s in 0..ns {
        for a in 0..na {
            jensen_bound += start[s] * policy.prob(s, a) * var_q[sol.qsa(0, s, a)];
        }
    }
    let excess = var_eta[0] - sol.eta2 - k * se_eta;
    let corollary1 = Corollary1Report {
        var_eta: var_eta[0],
        eta2: sol.eta2,
        standard_error: se_eta,
        excess,
        jensen_bound,
        jensen_holds: var_eta[0] <= jensen_bound * (1.0 + 1e-9) + 1e-12,
        pass: excess <= 0.0,
    };
    let _ = draws.samples;
    Ok((theorem1, corollary1))
}

pub fn verify_theorem1(belief: &BeliefState, policy: &Policy, cfg: &MonteCarloConfig) -> Result<Theorem1Report> {
    verify_posterior_bounds(belief, policy, cfg).map(|(t, _)| t)
}

pub fn verify_corollary1(belief: &BeliefState, policy: &Policy, cfg: &MonteCarloConfig) -> Result<Corollary1Report> {
    verify_posterior_bounds(belief, policy, cfg).map(|(_, c)| c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theorem2Report {
    /// `|L(π, π) − η̃(π)|`
    pub value_gap: f64,
    /// Largest component gap between the two finite-difference gradients.
    pub max_grad_gap: f64,
    pub grad_surrogate: Vec<f64>,
    pub grad_optimistic: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

pub const THEOREM2_VALUE_TOLERANCE: f64 = 1e-10;

/// Central-difference gradients of `θ ↦ L(π_φ, π_θ)` and `θ ↦ η̃(π_θ)` at `θ = φ`.
pub fn verify_theorem2(
    model: &TabularMdp,
    nu: &LocalUncertainty,
    logits: &PolicyTable,
    beta: f64,
    c: f64,
    fd_step: f64,
    tolerance: f64,
) -> Result<Theorem2Report> {
    if !(fd_step > 0.0) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let policy = logits.to_policy();
    let sol = solve(model, nu, &policy, beta, c)?;
    if !(sol.eta2 + c > 0.0) {
        return Err(Error::ZeroUncertaintyScale);
    }
    let occ = occupancy(model, &policy)?;
    let value_gap = (surrogate_l(model, &sol, &occ, &policy, beta, c)? - sol.eta_tilde).abs();

    let n = logits.logits.len();
    let mut grad_surrogate = vec![0.0; n];
    let mut grad_optimistic = vec![0.0; n];
    let mut shifted = logits.clone();
    for k in 0..n {
        let base = logits.logits[k];
        let mut at = |delta: f64| -> Result<(f64, f64)> {
            shifted.logits[k] = base + delta;
            let p = shifted.to_policy();
            let l = surrogate_l(model, &sol, &occ, &p, beta, c)?;
            let eta = solve(model, nu, &p, beta, c)?.eta_tilde;
            Ok((l, eta))
        };
        let (l_plus, e_plus) = at(fd_step)?;
        let (l_minus, e_minus) = at(-fd_step)?;
        shifted.logits[k] = base;
        grad_surrogate[k] = (l_plus - l_minus) / (2.0 * fd_step);
        grad_optimistic[k] = (e_plus - e_minus) / (2.0 * fd_step);
    }
    let max_grad_gap = grad_surrogate.iter().zip(&grad_optimistic).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(Theorem2Report {
        value_gap,
        max_grad_gap,
        grad_surrogate,
        grad_optimistic,
        tolerance,
        pass: value_gap <= THEOREM2_VALUE_TOLERANCE && max_grad_gap <= tolerance,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDifferenceReport {
    /// `η_i(π') − η_i(π)` for both heads.
    pub lhs: [f64; 2],
    /// `Σ ρ^{π'}_h(s) π'(a|s) A^{h,π}_i(s,a)` for both heads.
    pub rhs: [f64; 2],
    pub max_gap: f64,
    pub pass: bool,
}

pub const POLICY_DIFFERENCE_TOLERANCE: f64 = 1e-9;

pub fn policy_difference_identity_check(
    model: &TabularMdp,
    nu: &LocalUncertainty,
    policy: &Policy,
    candidate: &Policy,
) -> Result<PolicyDifferenceReport> {
    let old = solve(model, nu, policy, 0.0, 0.0)?;
    let new = solve(model, nu, candidate, 0.0, 0.0)?;
    let occ_new = occupancy(model, candidate)?;
    let lhs = [new.eta1 - old.eta1, new.eta2 - old.eta2];
    let rhs = [
        occupancy_weighted_sum(model, &occ_new, candidate, &old.a1),
        occupancy_weighted_sum(model, &occ_new, candidate, &old.a2),
    ];
    let max_gap = (lhs[0] - rhs[0]).abs().max((lhs[1] - rhs[1]).abs());
    Ok(PolicyDifferenceReport { lhs, rhs, max_gap, pass: max_gap <= POLICY_DIFFERENCE_TOLERANCE })
}
