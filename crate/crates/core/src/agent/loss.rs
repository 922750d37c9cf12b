use rand::Rng;

use super::rollout::TrajectoryBatch;
use crate::policy::{softmax_into, PolicyTable};
use crate::rng::stream;
use crate::testbed::random_logits;

/// `min(l·A, clip(l, 1−ε, 1+ε)·A)`
pub fn clip_term(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Batch mean of the clipped surrogate with `l = π_θ(a|s) / π_old(a|s)`.
pub fn clipped_loss(batch: &TrajectoryBatch, logits: &PolicyTable, advantages: &[f64], clip: f64) -> f64 {
    let total: f64 = (0..batch.len())
        .map(|i| {
            let l = (logits.log_prob(batch.states[i], batch.actions[i]) - batch.log_probs[i]).exp();
            clip_term(l, advantages[i], clip)
        })
        .sum();
    total / batch.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossCoefficients {
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveTerms {
    pub surrogate: f64,
    pub value_loss1: f64,
    pub value_loss2: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// `surrogate − c_v (value_loss1 + value_loss2) + c_e entropy`
    pub objective: f64,
}

impl ObjectiveTerms {
    pub fn is_finite(&self) -> bool {
        [self.surrogate, self.value_loss1, self.value_loss2, self.entropy, self.objective].iter().all(|x| x.is_finite())
    }
}

/// Regression targets per value head. `None` leaves the head untouched.
pub struct HeadTargets<'a> {
    pub v1: &'a [f64],
    pub target1: &'a [f64],
    pub v2: &'a [f64],
    pub target2: Option<&'a [f64]>,
}

/// Gradients of the objective with respect to the logits and the two value tables.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveGradient {
    pub logits: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

/// Objective over the minibatch `indices` and its exact gradient.
pub fn objective_and_gradient(
    batch: &TrajectoryBatch,
    indices: &[usize],
    logits: &PolicyTable,
    heads: &HeadTargets<'_>,
    advantages: &[f64],
    coef: LossCoefficients,
) -> (ObjectiveTerms, ObjectiveGradient) {
    let na = logits.num_actions;
    let m = indices.len() as f64;
    let mut grad = ObjectiveGradient {
        logits: vec![0.0; logits.logits.len()],
        v1: vec![0.0; heads.v1.len()],
        v2: vec![0.0; heads.v2.len()],
    };
    let mut terms = ObjectiveTerms::default();
    let mut probs = vec![0.0; na];
    let mut clipped = 0usize;
    for &i in indices {
        let (s, a) = (batch.states[i], batch.actions[i]);
        softmax_into(logits.state_logits(s), &mut probs);
        let log_pi = logits.log_prob(s, a);
        let l = (log_pi - batch.log_probs[i]).exp();
        let adv = advantages[i];
        terms.surrogate += clip_term(l, adv, coef.clip);
        if (l - 1.0).abs() > coef.clip {
            clipped += 1;
        }
        let g = &mut grad.logits[s * na..(s + 1) * na];
        if l * adv <= l.clamp(1.0 - coef.clip, 1.0 + coef.clip) * adv {
            let w = adv * l / m;
            for (k, gk) in g.iter_mut().enumerate() {
                *gk += w * ((k == a) as u8 as f64 - probs[k]);
            }
        }
        let h: f64 = -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        terms.entropy += h;
        for (k, gk) in g.iter_mut().enumerate() {
            let p = probs[k];
            if p > 0.0 {
                *gk -= coef.entropy / m * p * (p.ln() + h);
            }
        }
        let e1 = heads.v1[s] - heads.target1[i];
        terms.value_loss1 += e1 * e1;
        grad.v1[s] -= coef.value * 2.0 * e1 / m;
        if let Some(t2) = heads.target2 {
            let e2 = heads.v2[s] - t2[i];
            terms.value_loss2 += e2 * e2;
            grad.v2[s] -= coef.value * 2.0 * e2 / m;
        }
    }
    terms.surrogate /= m;
    terms.entropy /= m;
    terms.value_loss1 /= m;
    terms.value_loss2 /= m;
    terms.clip_fraction = clipped as f64 / m;
    terms.objective = terms.surrogate - coef.value * (terms.value_loss1 + terms.value_loss2) + coef.entropy * terms.entropy;
    (terms, grad)
}

fn random_batch(seed: u64, ns: usize, na: usize, len: usize, old: &PolicyTable) -> (TrajectoryBatch, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = stream(seed, 9, 0);
    let states: Vec<usize> = (0..len).map(|_| rng.random_range(0..ns)).collect();
    let actions: Vec<usize> = (0..len).map(|_| rng.random_range(0..na)).collect();
    let log_probs = states.iter().zip(&actions).map(|(&s, &a)| old.log_prob(s, a)).collect();
    let adv = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
    let t1 = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t2 = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
    let batch = TrajectoryBatch {
        actors: 1,
        steps: len,
        states,
        actions,
        next_states: vec![0; len],
        rewards1: vec![0.0; len],
        rewards2: vec![0.0; len],
        dones: vec![false; len],
        episode_starts: vec![false; len],
        log_probs,
        episodes: Vec::new(),
        bonus_ratio: None,
    };
    (batch, adv, t1, t2)
}

/// Largest relative gap between [`objective_and_gradient`] and central
/// differences on a random batch drawn from `seed`, with the current policy
/// moved away from the sampling policy so that some samples clip.
pub fn loss_gradient_check(seed: u64) -> f64 {
    let (ns, na) = (4, 3);
    let coef = LossCoefficients { clip: 0.2, value: 0.5, entropy: 0.01 };
    let old = random_logits(ns, na, &mut stream(seed, 0, 0));
    let mut cur = old.clone();
    let mut rng = stream(seed, 8, 0);
    cur.logits.iter_mut().for_each(|z| *z += rng.random_range(-0.3..0.3));
    let (batch, adv, t1, t2) = random_batch(seed, ns, na, 40, &old);
    let v1: Vec<f64> = (0..ns).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v2: Vec<f64> = (0..ns).map(|_| rng.random_range(0.0..1.0)).collect();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let eval = |z: &PolicyTable, v1: &[f64], v2: &[f64]| {
        let heads = HeadTargets { v1, target1: &t1, v2, target2: Some(&t2) };
        objective_and_gradient(&batch, &idx, z, &heads, &adv, coef)
    };
    let (_, grad) = eval(&cur, &v1, &v2);
    let h = 1e-6;
    let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
    let mut worst = 0.0f64;
    for k in 0..cur.logits.len() {
        let mut up = cur.clone();
        up.logits[k] += h;
        let mut down = cur.clone();
        down.logits[k] -= h;
        let fd = (eval(&up, &v1, &v2).0.objective - eval(&down, &v1, &v2).0.objective) / (2.0 * h);
        worst = worst.max(rel(fd, grad.logits[k]));
    }
    for s in 0..ns {
        for head in 0..2 {
            let (mut up1, mut down1, mut up2, mut down2) = (v1.clone(), v1.clone(), v2.clone(), v2.clone());
            if head == 0 {
                up1[s] += h;
                down1[s] -= h;
            } else {
                up2[s] += h;
                down2[s] -= h;
            }
            let fd = (eval(&cur, &up1, &up2).0.objective - eval(&cur, &down1, &down2).0.objective) / (2.0 * h);
            let an = if head == 0 { grad.v1[s] } else { grad.v2[s] };
            worst = worst.max(rel(fd, an));
        }
    }
    worst
}
