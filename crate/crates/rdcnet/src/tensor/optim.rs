//! Adam optimizer over named parameter groups and the cosine LR schedule.

use std::collections::HashSet;

use super::{Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Named trainable tensors plus their first/second moment accumulators.
#[derive(Debug)]
pub struct ParamGroup<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
    step: u64,
}

impl<T: Scalar> ParamGroup<T> {
    pub fn new() -> Self {
        ParamGroup {
            entries: Vec::new(),
            step: 0,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<(), TensorError> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(TensorError::Usage(format!(
                "duplicate parameter name {name}"
            )));
        }
        if !tensor.track_grad() {
            return Err(TensorError::Usage(format!(
                "parameter {name} must have track_grad set"
            )));
        }
        let n = tensor.len();
        self.entries.push(ParamEntry {
            name,
            tensor,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        });
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.tensor)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn zero_grads(&self) {
        for e in &self.entries {
            e.tensor.zero_grad();
        }
    }

    pub fn validate_unique(&self) -> bool {
        let mut seen = HashSet::new();
        self.entries.iter().all(|e| seen.insert(e.name.as_str()))
    }
}

impl<T: Scalar> Default for ParamGroup<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// One bias-corrected Adam update over the whole group; grads are zeroed
/// afterwards.
pub fn adam_step<T: Scalar>(
    params: &mut ParamGroup<T>,
    lr: f64,
    cfg: AdamConfig,
) -> Result<(), TensorError> {
    params.step += 1;
    let t = params.step as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let eps = T::from_f64(cfg.eps);
    let lr = T::from_f64(lr);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    for e in params.entries.iter_mut() {
        let g = e.tensor.grad();
        if g.len() != e.tensor.len() {
            return Err(TensorError::Usage(format!(
                "gradient shape mismatch for parameter {}",
                e.name
            )));
        }
        let mut data = e.tensor.data().to_vec();
        for i in 0..data.len() {
            e.m[i] = b1 * e.m[i] + (T::one() - b1) * g[i];
            e.v[i] = b2 * e.v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = e.m[i] / bc1;
            let v_hat = e.v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        e.tensor.set_data(&data);
        e.tensor.zero_grad();
    }
    Ok(())
}

/// Cosine schedule: lr_min + (lr_max - lr_min) * (1 + cos(pi * step/total)) / 2.
pub fn cosine_lr(step: u64, total: u64, lr_max: f64, lr_min: f64) -> Result<f64, TensorError> {
    if total == 0 {
        return Err(TensorError::Usage("cosine_lr total must be > 0".into()));
    }
    if step > total {
        return Err(TensorError::Usage(format!(
            "cosine_lr step {step} out of range 0..={total}"
        )));
    }
    let frac = step as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}
