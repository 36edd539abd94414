use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A parameter store and its gradients, updated under `prefix` so moment
/// buffers of different stores never collide.
pub struct ParamGroup<'a> {
    pub prefix: &'a str,
    pub params: &'a mut ParamStore,
    pub grads: &'a [Tensor],
}

/// Bias-corrected Adam. Moment buffers are keyed `"{prefix}.{name}"` and
/// created as zeros on first use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    /// One update of every group. Nothing is modified when any gradient is
    /// non-finite; the error names the first offending parameter.
    pub fn step(&mut self, groups: &mut [ParamGroup<'_>], lr: f64) -> Result<()> {
        for g in groups.iter() {
            if g.grads.len() != g.params.len() {
                return Err(Error::Contract(format!(
                    "{}: {} gradients for {} parameters",
                    g.prefix,
                    g.grads.len(),
                    g.params.len()
                )));
            }
            for ((name, p), grad) in g.params.iter().zip(g.grads) {
                if p.shape() != grad.shape() {
                    return Err(Error::Shape {
                        op: "adam_step",
                        lhs: p.shape().to_vec(),
                        rhs: grad.shape().to_vec(),
                    });
                }
                if !grad.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of {}.{name}", g.prefix)));
                }
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for g in groups.iter_mut() {
            for ((name, p), grad) in g.params.iter_mut().zip(g.grads) {
                let key = format!("{}.{name}", g.prefix);
                if self.m.get(&key).is_none() {
                    self.m.insert(key.clone(), Tensor::zeros(p.shape()));
                    self.v.insert(key.clone(), Tensor::zeros(p.shape()));
                }
                let m = self.m.get_mut(&key).expect("just inserted").data_mut();
                let v = self.v.get_mut(&key).expect("just inserted").data_mut();
                for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Global L2 norm of all gradients.
pub fn global_norm<'a>(grads: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    grads
        .into_iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales the gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Vec<Tensor>], max_norm: f64) -> f64 {
    let norm = global_norm(grads.iter().flat_map(|g| g.iter()));
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
