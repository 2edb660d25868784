use std::collections::BTreeMap;

use super::config::OptimConfig;
use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamStore, Scalar, Tensor};

/// Learning-rate multiplier: linear warmup to 1, then linear decay to 0.
pub fn schedule(step: usize, total: usize, warmup_fraction: f64) -> f64 {
    let total = total.max(1) as f64;
    let warmup = (warmup_fraction * total).round();
    let t = step as f64 + 1.0;
    if t <= warmup {
        t / warmup
    } else {
        ((total - t) / (total - warmup).max(1.0)).max(0.0)
    }
}

/// Adam with decoupled weight decay. Decay applies to matrices only;
/// biases, norms and vectors are left alone.
#[derive(Clone, Debug)]
pub struct AdamW {
    config: OptimConfig,
    total_steps: usize,
    step: usize,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(config: OptimConfig, total_steps: usize) -> Self {
        AdamW {
            config,
            total_steps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.config.learning_rate * schedule(self.step, self.total_steps, self.config.warmup_fraction)
    }

    /// Clip (if configured) and apply one update. Parameters without a
    /// gradient are untouched. Returns the pre-clip gradient norm.
    pub fn update<T: Scalar>(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<f64> {
        let norm = grads
            .iter()
            .flat_map(|(_, g)| g.data().iter())
            .map(|&x| {
                let x = x.to_f64().unwrap_or(f64::NAN);
                x * x
            })
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient norm at step {}", self.step)));
        }
        let clip = if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            self.config.grad_clip / norm
        } else {
            1.0
        };
        let lr = self.current_lr();
        let c = &self.config;
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, g) in grads.iter() {
            let p: &mut Tensor<T> = params
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::dim("adamw", p.shape(), g.shape()));
            }
            let decay = if p.ndim() == 2 { c.weight_decay } else { 0.0 };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gk = gk.to_f64().unwrap_or(f64::NAN) * clip;
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                let wf = w.to_f64().unwrap_or(f64::NAN);
                let next = wf - lr * (mhat / (vhat.sqrt() + c.eps) + decay * wf);
                *w = T::lit(next);
            }
        }
        self.step += 1;
        Ok(norm)
    }
}
