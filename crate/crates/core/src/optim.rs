//! Adam with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config(format!(
                "clip_norm must be > 0, got {}",
                self.clip_norm
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("adam eps must be > 0"));
        }
        Ok(())
    }
}

/// Per-parameter moment estimates, one vector per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(shapes: &[&Tensor<T>]) -> Self {
        Self {
            step: 0,
            first: shapes.iter().map(|t| vec![T::zero(); t.len()]).collect(),
            second: shapes.iter().map(|t| vec![T::zero(); t.len()]).collect(),
        }
    }

    fn check(&self, params: &[&mut Tensor<T>]) -> Result<()> {
        let ok = self.first.len() == params.len()
            && self.second.len() == params.len()
            && params
                .iter()
                .zip(self.first.iter().zip(&self.second))
                .all(|(p, (m, v))| p.len() == m.len() && p.len() == v.len());
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "optimizer state does not match parameter shapes",
            ))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clip_scale: f64,
}

pub fn global_norm<T: Real>(grads: &[&[T]]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| {
            let x = x.to_f64_lossy();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Clips `grads` to `clip_norm` (global L2 norm), then applies one bias-corrected
/// Adam update in place. Non-finite gradients abort without touching anything.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[&[T]],
    state: &mut OptimizerState<T>,
    cfg: &AdamConfig,
) -> Result<StepStats> {
    state.check(params)?;
    if grads.len() != params.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::config("gradient shapes do not match parameters"));
    }
    let grad_norm = global_norm(grads);
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite {
            op: "adam_step gradients",
            step: None,
        });
    }
    let clip_scale = if grad_norm > cfg.clip_norm {
        cfg.clip_norm / grad_norm
    } else {
        1.0
    };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i][j].to_f64_lossy() * clip_scale;
            let mj = cfg.beta1 * m[j].to_f64_lossy() + (1.0 - cfg.beta1) * g;
            let vj = cfg.beta2 * v[j].to_f64_lossy() + (1.0 - cfg.beta2) * g * g;
            m[j] = T::lit(mj);
            v[j] = T::lit(vj);
            let update = cfg.lr * (mj / bc1) / ((vj / bc2).sqrt() + cfg.eps);
            *x = T::lit(x.to_f64_lossy() - update);
        }
    }
    Ok(StepStats {
        grad_norm,
        clip_scale,
    })
}
