use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::ParamRegistry;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!(
                    "adam {name} must be in [0, 1), got {b}"
                )));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "adam epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moments per parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    m: HashMap<String, Vec<f32>>,
    v: HashMap<String, Vec<f32>>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&[f32], &[f32])> {
        Some((self.m.get(name)?.as_slice(), self.v.get(name)?.as_slice()))
    }
}

/// One bias-corrected Adam update of every trainable entry in `reg`.
/// Frozen entries are skipped even when a gradient is supplied.
pub fn adam_step(
    reg: &mut ParamRegistry,
    grads: &HashMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    let trainable: Vec<String> = reg
        .iter()
        .filter(|(_, e)| !e.frozen)
        .map(|(n, _)| n.to_string())
        .collect();
    for name in &trainable {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Usage(format!("no gradient for trainable parameter {name}")))?;
        let p = reg.get(name).expect("listed above");
        if g.shape() != p.shape() {
            return Err(Error::shape("adam_step", g.shape(), p.shape()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1 as f64, cfg.beta2 as f64);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (cfg.learning_rate as f64, cfg.epsilon as f64);
    for name in trainable {
        let g = grads[&name].data();
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let p = reg.get_mut(&name).expect("listed above").data_mut();
        for i in 0..g.len() {
            let gi = g[i] as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            p[i] = (p[i] as f64 - update) as f32;
        }
    }
    Ok(())
}
