//! Random network distillation: a frozen random target network, a trained
//! predictor, and the squared prediction error as a novelty bonus.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, FeedForwardNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RndConfig {
    pub hidden: usize,
    pub output: usize,
    pub learning_rate: f64,
    /// Raw bonuses are returned until this many have been observed.
    pub warmup: u64,
    /// Feed normalized instead of raw bonuses to the agent.
    pub normalize: bool,
    /// Fan-in that scales the first-layer weights of both networks; `None`
    /// uses the input size. A one-hot input has a single active entry, so 1
    /// keeps the untrained bonus of order one.
    pub first_layer_fan_in: Option<usize>,
}

impl Default for RndConfig {
    fn default() -> Self {
        Self { hidden: 64, output: 32, learning_rate: 1e-3, warmup: 100, normalize: false, first_layer_fan_in: None }
    }
}

/// Running mean and variance of raw bonuses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BonusNormalizer {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

pub const MIN_BONUS_STD: f64 = 1e-8;

impl BonusNormalizer {
    pub fn observe(&mut self, value: f64) {
        self.observe_repeated(value, 1);
    }

    /// Merges `times` copies of `value` into the running moments.
    pub fn observe_repeated(&mut self, value: f64, times: u64) {
        if times == 0 {
            return;
        }
        let n = self.count as f64;
        let k = times as f64;
        let total = n + k;
        let delta = value - self.mean;
        self.mean += delta * k / total;
        self.m2 += delta * delta * n * k / total;
        self.count += times;
    }

    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }

    /// `raw / std` after warm-up. During warm-up, or when the spread is below
    /// [`MIN_BONUS_STD`], the raw bonus passes through unchanged.
    pub fn normalize(&self, raw: f64, warmup: u64) -> f64 {
        let std = self.std();
        if self.count < warmup || std < MIN_BONUS_STD {
            raw
        } else {
            raw / std
        }
    }
}

/// Batch mean of `raw_bonus / (1 / n)`, pairing each sample's raw RND bonus
/// with the visitation count of the same state at that sample.
pub fn bonus_count_ratio(raw_bonuses: &[f64], counts: &[u64]) -> Result<f64> {
    if raw_bonuses.len() != counts.len() {
        return Err(Error::DimensionMismatch { expected: raw_bonuses.len(), got: counts.len() });
    }
    if raw_bonuses.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if counts.contains(&0) {
        return Err(Error::InvalidConfig("visitation counts must be positive".into()));
    }
    let total: f64 = raw_bonuses.iter().zip(counts).map(|(b, &n)| b * n as f64).sum();
    Ok(total / raw_bonuses.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RndEstimator {
    pub config: RndConfig,
    target: FeedForwardNet,
    predictor: FeedForwardNet,
    optimizer: Adam,
    normalizer: BonusNormalizer,
}

impl RndEstimator {
    /// Target `[in, hidden, output]`; predictor gets one extra hidden layer.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, config: RndConfig, rng: &mut R) -> Result<Self> {
        let mut target = FeedForwardNet::random(&[input_dim, config.hidden, config.output], rng)?;
        let mut predictor = FeedForwardNet::random(&[input_dim, config.hidden, config.hidden, config.output], rng)?;
        if let Some(fan_in) = config.first_layer_fan_in {
            if fan_in == 0 {
                return Err(Error::InvalidConfig("first_layer_fan_in must be positive".into()));
            }
            let gain = (input_dim as f64 / fan_in as f64).sqrt();
            for net in [&mut target, &mut predictor] {
                net.params_mut()[..input_dim * config.hidden].iter_mut().for_each(|w| *w *= gain);
            }
        }
        Self::from_networks(target, predictor, config)
    }

    pub fn from_networks(target: FeedForwardNet, predictor: FeedForwardNet, config: RndConfig) -> Result<Self> {
        if target.input_size() != predictor.input_size() || target.output_size() != predictor.output_size() {
            return Err(Error::InvalidConfig("target and predictor shapes disagree at the ends".into()));
        }
        if !(config.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("learning rate must be non-negative".into()));
        }
        let optimizer = Adam::new(predictor.num_params(), config.learning_rate);
        Ok(Self { config, target, predictor, optimizer, normalizer: BonusNormalizer::default() })
    }

    pub fn target(&self) -> &FeedForwardNet {
        &self.target
    }

    pub fn predictor(&self) -> &FeedForwardNet {
        &self.predictor
    }

    pub fn normalizer(&self) -> &BonusNormalizer {
        &self.normalizer
    }

    pub fn input_size(&self) -> usize {
        self.target.input_size()
    }

    /// `‖f_t(x) − f_p(x)‖²`
    pub fn raw_bonus(&self, observation: &[f64]) -> Result<f64> {
        let t = self.target.forward(observation)?;
        let p = self.predictor.forward(observation)?;
        Ok(t.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    pub fn normalized_bonus(&self, observation: &[f64]) -> Result<f64> {
        Ok(self.normalizer.normalize(self.raw_bonus(observation)?, self.config.warmup))
    }

    /// The bonus handed to the agent, raw or normalized per the config.
    pub fn bonus(&self, observation: &[f64]) -> Result<f64> {
        if self.config.normalize {
            self.normalized_bonus(observation)
        } else {
            self.raw_bonus(observation)
        }
    }

    /// One optimizer step on the batch-mean squared error. Returns the
    /// pre-step loss, which equals the mean raw bonus over the batch.
    /// Duplicate observations are grouped; the gradient is unchanged.
    pub fn update_predictor(&mut self, batch: &[Vec<f64>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut unique: Vec<(&[f64], u64)> = Vec::new();
        for obs in batch {
            if obs.len() != self.input_size() {
                return Err(Error::DimensionMismatch { expected: self.input_size(), got: obs.len() });
            }
            let key: Vec<u64> = obs.iter().map(|x| x.to_bits()).collect();
            match index.get(&key) {
                Some(&i) => unique[i].1 += 1,
                None => {
                    index.insert(key, unique.len());
                    unique.push((obs.as_slice(), 1));
                }
            }
        }
        let m = batch.len() as f64;
        let mut grads = vec![0.0; self.predictor.num_params()];
        let mut loss = 0.0;
        for &(obs, times) in &unique {
            let t = self.target.forward(obs)?;
            let p = self.predictor.forward(obs)?;
            let raw: f64 = t.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum();
            self.normalizer.observe_repeated(raw, times);
            loss += times as f64 * raw;
            let grad_out: Vec<f64> = t.iter().zip(&p).map(|(a, b)| -2.0 * (a - b)).collect();
            self.predictor.backward_into(obs, &grad_out, times as f64 / m, &mut grads)?;
        }
        let loss = loss / m;
        if !loss.is_finite() {
            return Err(Error::NonFinite("RND loss"));
        }
        self.optimizer.apply(self.predictor.params_mut(), &grads)?;
        Ok(loss)
    }
}
