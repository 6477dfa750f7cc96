//! Adam with a multi-step learning-rate schedule.
//!
//! Parameter tensors are immutable once created (the autodiff tape holds
//! references into them), so an update replaces each tensor wholesale. Moment
//! state is therefore keyed by parameter *name*, which survives replacement.

use std::collections::HashMap;

use crate::model::Forecaster;
use crate::tensor::{GradMap, Tensor};
use crate::Result;

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps (for bias correction).
    t: u64,
    slots: HashMap<String, Slot>,
}

impl Default for Adam {
    fn default() -> Adam {
        Adam::new()
    }
}

impl Adam {
    pub fn new() -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            slots: HashMap::new(),
        }
    }

    /// One update for a single named buffer. `begin_step` must have been
    /// called for the current step.
    fn update(&mut self, name: &str, data: &[f64], grad: &[f64], lr: f64) -> Vec<f64> {
        debug_assert_eq!(data.len(), grad.len());
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
            m: vec![0.0; data.len()],
            v: vec![0.0; data.len()],
        });
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut out = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            let g = grad[i];
            slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
            slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            out.push(data[i] - lr * m_hat / (v_hat.sqrt() + self.eps));
        }
        out
    }

    /// Apply one Adam step to every model parameter that received a gradient.
    /// Gradients are looked up by the *current* tensor, which is then replaced.
    pub fn step(&mut self, model: &mut Forecaster, grads: &GradMap, lr: f64) -> Result<()> {
        self.t += 1;
        for (name, slot) in model.params_mut() {
            let current: &Tensor = slot;
            let Some(grad) = grads.real(current) else {
                continue; // e.g. a branch the loss never touched
            };
            let new_data = self.update(&name, current.real_data(), grad, lr);
            let shape = current.shape().to_vec();
            *slot = Tensor::param(new_data, &shape)?;
        }
        Ok(())
    }
}

/// Piecewise-constant schedule: the base rate decays by `decay` at each
/// milestone epoch (0-based; an epoch equal to a milestone already uses the
/// decayed rate).
pub fn lr_at_epoch(base: f64, milestones: &[usize], decay: f64, epoch: usize) -> f64 {
    let hits = milestones.iter().filter(|&&m| epoch >= m).count();
    base * decay.powi(hits as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_decays_at_milestones() {
        let ms = [40, 70];
        assert_eq!(lr_at_epoch(1e-3, &ms, 0.1, 0), 1e-3);
        assert_eq!(lr_at_epoch(1e-3, &ms, 0.1, 39), 1e-3);
        assert!((lr_at_epoch(1e-3, &ms, 0.1, 40) - 1e-4).abs() < 1e-18);
        assert!((lr_at_epoch(1e-3, &ms, 0.1, 69) - 1e-4).abs() < 1e-18);
        assert!((lr_at_epoch(1e-3, &ms, 0.1, 70) - 1e-5).abs() < 1e-19);
        assert!((lr_at_epoch(1e-3, &ms, 0.1, 500) - 1e-5).abs() < 1e-19);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(w) = Σ (w − c)², gradient 2(w − c)
        let target = [3.0, -1.5, 0.25];
        let mut w = vec![0.0; 3];
        let mut adam = Adam::new();
        for _ in 0..2000 {
            adam.t += 1;
            let grad: Vec<f64> = w.iter().zip(&target).map(|(wi, c)| 2.0 * (wi - c)).collect();
            w = adam.update("w", &w, &grad, 0.05);
        }
        for (wi, c) in w.iter().zip(&target) {
            assert!((wi - c).abs() < 1e-6, "{wi} vs {c}");
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        // Bias correction makes the very first update ≈ lr · sign(g).
        let mut adam = Adam::new();
        adam.t = 1;
        let w = adam.update("w", &[1.0, 1.0], &[10.0, -0.5], 0.01);
        assert!((w[0] - (1.0 - 0.01)).abs() < 1e-8);
        assert!((w[1] - (1.0 + 0.01)).abs() < 1e-8);
    }
}
