//! Adam with bias correction and optional global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::params::{GradMap, ParamSet};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gradients are rescaled so their global l2 norm never exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Per-step diagnostics, mostly for training logs.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Factor applied to all gradients (1.0 when no clipping occurred).
    pub clip_scale: f64,
}

pub struct Adam {
    cfg: AdamConfig,
    step_count: u64,
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// State is allocated for exactly the parameters present at
    /// construction; later steps must supply gradients for the same set.
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let names: Vec<String> = params.names().map(String::from).collect();
        let m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        let v = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam { cfg, step_count: 0, names, m, v }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradMap) -> Result<StepStats> {
        if grads.len() != self.names.len() {
            return Err(Error::Contract(format!(
                "optimizer expects {} gradient entries, got {}",
                self.names.len(),
                grads.len()
            )));
        }
        let mut sq_norm = 0.0;
        for name in &self.names {
            let g = grads.get(name).ok_or_else(|| {
                Error::Contract(format!("missing gradient for parameter {name:?}"))
            })?;
            let p = params.require(name)?;
            if g.len() != p.numel() {
                return Err(Error::dimension(
                    format!("gradient of {name}"),
                    p.numel().to_string(),
                    g.len().to_string(),
                ));
            }
            sq_norm += g.iter().map(|x| x * x).sum::<f64>();
        }
        let grad_norm = sq_norm.sqrt();
        let clip_scale = match self.cfg.clip_norm {
            Some(max) if grad_norm > max => max / grad_norm,
            _ => 1.0,
        };

        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.cfg.beta1.powi(t);
        let bias2 = 1.0 - self.cfg.beta2.powi(t);

        for (slot, name) in self.names.iter().enumerate() {
            let g = &grads[name];
            let data = params.get_mut(name).unwrap().data_mut();
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for i in 0..data.len() {
                let gi = g[i] * clip_scale;
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * gi;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
        }
        Ok(StepStats { grad_norm, clip_scale })
    }
}
