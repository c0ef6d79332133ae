use std::collections::HashMap;

use super::params::{ParamId, ParamStore, Trainable};
use crate::error::{DartError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// AdamW with decoupled weight decay. Only trainable entries of each
/// parameter are touched; decay skips parameters flagged `no_decay`.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: HashMap<ParamId, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr` (the schedule is applied by the caller).
    pub fn step(&mut self, store: &mut ParamStore, lr: f32) -> Result<()> {
        for (_, p) in store.iter() {
            if p.trainable != Trainable::Frozen && p.grad.is_none() {
                return Err(DartError::Contract(format!(
                    "trainable parameter `{}` has no gradient",
                    p.name
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            let ranges = p.trainable_ranges();
            if ranges.is_empty() {
                continue;
            }
            let n = p.value.numel();
            let mom = self.moments.entry(id).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let decay = if p.no_decay { 0.0 } else { weight_decay };
            let grad = p.grad.as_ref().expect("checked above");
            let data = p.value.data_mut();
            for range in ranges {
                for i in range {
                    let g = grad[i];
                    mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g;
                    mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = mom.m[i] / bc1;
                    let v_hat = mom.v[i] / bc2;
                    data[i] -= lr * decay * data[i];
                    data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Scale all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f32) -> f32 {
    let mut sq = 0.0f64;
    for (_, p) in store.iter() {
        if let Some(g) = &p.grad {
            for r in p.trainable_ranges() {
                sq += g[r].iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>();
            }
        }
    }
    let norm = sq.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            if let Some(g) = store.get_mut(id).grad.as_mut() {
                g.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    norm
}

/// Linear warmup over the first `warmup_frac` of updates, then linear decay
/// to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearWarmupDecay {
    pub peak_lr: f32,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl LinearWarmupDecay {
    pub fn new(peak_lr: f32, total_steps: usize, warmup_frac: f32) -> Self {
        let warmup_steps = ((total_steps as f32) * warmup_frac).ceil() as usize;
        Self {
            peak_lr,
            total_steps,
            warmup_steps: warmup_steps.min(total_steps),
        }
    }

    /// Learning rate for the 0-based update index `step`.
    pub fn lr_at(&self, step: usize) -> f32 {
        if step < self.warmup_steps {
            self.peak_lr * (step + 1) as f32 / self.warmup_steps as f32
        } else if step >= self.total_steps {
            0.0
        } else {
            let remaining = (self.total_steps - step) as f32;
            let span = (self.total_steps - self.warmup_steps) as f32;
            self.peak_lr * remaining / span
        }
    }
}
