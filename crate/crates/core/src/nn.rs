//! Fixed-architecture feed-forward networks with manual backpropagation.
//!
//! ReLU on hidden layers, identity on the output. All parameters live in a
//! single flat vector; layer `l` stores its weights input-major
//! (`w[i * out + j]`) followed by its biases, so sparse inputs such as
//! one-hot vectors only touch the rows they select.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl FeedForwardNet {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig("network needs at least two positive layer sizes".into()));
        }
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)] })
    }

    /// Zero biases; weights drawn from N(0, 1/fan_in).
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = scale * rng.sample::<f64, _>(StandardNormal);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(Error::DimensionMismatch { expected: self.input_size(), got: input.len() });
        }
        Ok(())
    }

    /// Activations of every layer, input first.
    fn trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let mut out = bias.to_vec();
            for (i, &x) in acts[l].iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (o, w) in out.iter_mut().zip(&weights[i * n_out..(i + 1) * n_out]) {
                    *o += x * w;
                }
            }
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
            offset += n_in * n_out + n_out;
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.trace(input).pop().unwrap())
    }

    /// Gradient of `output · grad_output` with respect to every parameter,
    /// accumulated into `grads` (flat, same layout as the parameters).
    pub fn backward_into(&self, input: &[f64], grad_output: &[f64], scale: f64, grads: &mut [f64]) -> Result<()> {
        self.check_input(input)?;
        if grad_output.len() != self.output_size() {
            return Err(Error::DimensionMismatch { expected: self.output_size(), got: grad_output.len() });
        }
        if grads.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), got: grads.len() });
        }
        let acts = self.trace(input);
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta: Vec<f64> = grad_output.iter().map(|g| g * scale).collect();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input_act = &acts[l];
            for (i, &x) in input_act.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (g, d) in grads[off + i * n_out..off + (i + 1) * n_out].iter_mut().zip(&delta) {
                    *g += x * d;
                }
            }
            for (g, d) in grads[off + n_in * n_out..off + n_in * n_out + n_out].iter_mut().zip(&delta) {
                *g += d;
            }
            if l > 0 {
                let weights = &self.params[off..off + n_in * n_out];
                let prev: Vec<f64> = (0..n_in)
                    .map(|i| {
                        if input_act[i] > 0.0 {
                            weights[i * n_out..(i + 1) * n_out].iter().zip(&delta).map(|(w, d)| w * d).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                delta = prev;
            }
        }
        Ok(())
    }

    pub fn backward(&self, input: &[f64], grad_output: &[f64]) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.params.len()];
        self.backward_into(input, grad_output, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Order-sensitive hash of the parameter bits.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for p in &self.params {
            p.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Adaptive-moment optimizer over a flat parameter vector (minimises).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    pub fn num_params(&self) -> usize {
        self.m.len()
    }

    /// One descent step. Leaves `params` untouched if the result would not be finite.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), got: grads.len().min(params.len()) });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let step = self.step + 1;
        let c1 = 1.0 - self.beta1.powi(step as i32);
        let c2 = 1.0 - self.beta2.powi(step as i32);
        let mut m = self.m.clone();
        let mut v = self.v.clone();
        let mut next = params.to_vec();
        for i in 0..next.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grads[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            next[i] -= self.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
        }
        if next.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        params.copy_from_slice(&next);
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }
}

pub fn update(net: &mut FeedForwardNet, optimizer: &mut Adam, grads: &[f64]) -> Result<()> {
    optimizer.apply(net.params_mut(), grads)
}

pub fn one_hot(index: usize, size: usize) -> Result<Vec<f64>> {
    crate::error::check_index("one-hot index", index, size)?;
    let mut v = vec![0.0; size];
    v[index] = 1.0;
    Ok(v)
}

/// Largest relative gap between [`FeedForwardNet::backward`] and central
/// differences for a random net, input and output gradient drawn from `seed`.
pub fn gradient_check(sizes: &[usize], seed: u64) -> Result<f64> {
    let mut rng = crate::rng::stream(seed, 0, 0);
    let net = FeedForwardNet::random(sizes, &mut rng)?;
    let x: Vec<f64> = (0..sizes[0]).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let g: Vec<f64> = (0..net.output_size()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let analytic = net.backward(&x, &g)?;
    let objective = |n: &FeedForwardNet| -> Result<f64> { Ok(n.forward(&x)?.iter().zip(&g).map(|(o, gi)| o * gi).sum()) };
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for k in 0..net.num_params() {
        let base = probe.params()[k];
        probe.params_mut()[k] = base + h;
        let up = objective(&probe)?;
        probe.params_mut()[k] = base - h;
        let down = objective(&probe)?;
        probe.params_mut()[k] = base;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-3));
    }
    Ok(worst)
}
