//! Parameter storage, glorot-uniform initialization and the Adam optimizer.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A trainable grid of scalars with its gradient accumulator and Adam moments.
///
/// Values and moments are `f32`, matching the checkpoint; gradients accumulate in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f64>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Adds another accumulator (e.g. from a worker) into this one.
    pub fn merge_grad(&mut self, other: &Param) {
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += *o;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite()) && self.grad.iter().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad Adam hyperparameters {self:?}")))
        }
    }
}

/// Optimizer hyperparameters plus the network-wide step counter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
        }
    }

    /// Advances the shared step counter; call once per optimizer step, then
    /// apply [`adam_step`] to every parameter with the returned `t`.
    pub fn begin_step(&mut self) -> u64 {
        self.step_count += 1;
        self.step_count
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(AdamConfig::default())
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(param: &mut Param, cfg: &AdamConfig, t: u64) -> Result<()> {
    let n = param.value.len();
    if param.grad.len() != n || param.m.len() != n || param.v.len() != n {
        return Err(Error::ShapeMismatch {
            left: (1, 1, n),
            right: (param.grad.len(), param.m.len(), param.v.len()),
        });
    }
    if t == 0 {
        return Err(Error::InvalidConfig("Adam step index starts at 1".into()));
    }
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..n {
        let g = param.grad[i];
        let m = cfg.beta1 * param.m[i] as f64 + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * param.v[i] as f64 + (1.0 - cfg.beta2) * g * g;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        let w = param.value[i] as f64 - cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        param.m[i] = m as f32;
        param.v[i] = v as f32;
        param.value[i] = w as f32;
    }
    Ok(())
}

/// Half-width `sqrt(6 / (fan_in + fan_out))` of the glorot-uniform interval.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Draws `n` samples uniformly from `[-l, l]`, `l = glorot_limit(fan_in, fan_out)`.
pub fn glorot_uniform<R: rand::Rng + ?Sized>(
    n: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Vec<f32> {
    assert!(fan_in >= 1 && fan_out >= 1, "fan_in and fan_out must be positive");
    let l = glorot_limit(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-l, l);
    (0..n).map(|_| dist.sample(rng) as f32).collect()
}

/// Seeded convenience form of [`glorot_uniform`].
pub fn glorot_init(n: usize, fan_in: usize, fan_out: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    glorot_uniform(n, fan_in, fan_out, &mut rng)
}
