//! Adam with decoupled weight decay over the model's named tensors.
//!
//! Complex parameters are optimized as (re, im) pairs through the flat real
//! view. The length-scale group (names ending in `fourier.log_l`) runs at
//! `lr * lr_scale`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: theta -= lr * weight_decay * theta.
    pub weight_decay: f64,
    /// Relative learning rate of the length-scale group.
    pub lscale_lr_scale: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            lscale_lr_scale: 0.1,
        }
    }
}

#[derive(Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Per-parameter learning-rate scale (1.0 or lscale_lr_scale).
    group_scale: Vec<f64>,
    pub step: u64,
    pub skipped: u64,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &ModelParams) -> Self {
        let named = params.named_tensors();
        let m = named.iter().map(|(_, t)| vec![0.0; t.real_dof()]).collect();
        let v = named.iter().map(|(_, t)| vec![0.0; t.real_dof()]).collect();
        let group_scale = named
            .iter()
            .map(|(name, _)| {
                if name.ends_with("fourier.log_l") {
                    cfg.lscale_lr_scale
                } else {
                    1.0
                }
            })
            .collect();
        AdamState {
            cfg,
            m,
            v,
            group_scale,
            step: 0,
            skipped: 0,
        }
    }

    /// One bias-corrected update. `grads` follows the named-tensor order;
    /// `None` entries mean no gradient flowed (treated as zero, decay still
    /// applies). Returns false if a non-finite gradient was found, in which
    /// case the whole step is skipped and counted.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Option<Tensor>], lr: f64) -> bool {
        let finite = grads
            .iter()
            .all(|g| g.as_ref().is_none_or(|t| t.all_finite()));
        if !finite {
            self.skipped += 1;
            return false;
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        let (b1, b2, eps, wd) = (
            self.cfg.beta1,
            self.cfg.beta2,
            self.cfg.eps,
            self.cfg.weight_decay,
        );

        let mut named = params.named_tensors_mut();
        for (idx, (_, slot)) in named.iter_mut().enumerate() {
            let lr_p = lr * self.group_scale[idx];
            let mut theta = slot.to_real_vec();
            let g = grads[idx].as_ref().map(|t| t.to_real_vec());
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..theta.len() {
                let gi = g.as_ref().map_or(0.0, |g| g[i]);
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                theta[i] -= lr_p * (mhat / (vhat.sqrt() + eps) + wd * theta[i]);
            }
            let mut t = (***slot).clone();
            t.set_from_real_vec(&theta);
            **slot = Arc::new(t);
        }
        true
    }
}
