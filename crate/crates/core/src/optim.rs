//! SGD with momentum and weight decay, and the milestone learning-rate schedule.

use crate::error::{Error, Result};
use crate::nn::Param;

/// Piecewise-constant schedule: `initial * factor^(milestones passed)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    /// Epochs (0-based) at which the rate is multiplied by `factor`; strictly increasing.
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn constant(initial: f64) -> Self {
        Self { initial, milestones: Vec::new(), factor: 1.0 }
    }

    /// 0.1, times 0.2 at epochs 60, 120 and 160.
    pub fn cifar100() -> Self {
        Self { initial: 0.1, milestones: vec![60, 120, 160], factor: 0.2 }
    }

    /// 0.1, times 0.1 at epochs 100 and 150.
    pub fn tiny_imagenet() -> Self {
        Self { initial: 0.1, milestones: vec![100, 150], factor: 0.1 }
    }

    pub fn validate(&self, epochs: usize) -> Result<()> {
        if !(self.initial.is_finite() && self.initial >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.initial)));
        }
        if !(self.factor.is_finite() && self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::invalid(format!("decay factor must be in (0, 1], got {}", self.factor)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("milestones must be strictly increasing"));
        }
        if let Some(&last) = self.milestones.last() {
            if last >= epochs {
                return Err(Error::invalid(format!("milestone {last} is not below {epochs} epochs")));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.initial * self.factor.powi(passed as i32)
    }
}

/// Heavy-ball SGD: `v = mu * v + (g + wd * p)`, `p -= lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: Vec::new() }
    }

    /// Applies one update to the trainable parameters visited in a fixed order.
    pub fn step(&mut self, lr: f64, visit: impl FnOnce(&mut dyn FnMut(&mut Param))) {
        let mut slot = 0;
        let (mu, wd) = (self.momentum, self.weight_decay);
        let velocity = &mut self.velocity;
        visit(&mut |p: &mut Param| {
            if !p.trainable {
                return;
            }
            if velocity.len() <= slot {
                velocity.push(vec![0.0; p.len()]);
            }
            let v = &mut velocity[slot];
            for ((w, g), vi) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                let d = g + wd * *w;
                *vi = mu * *vi + d;
                *w -= lr * *vi;
            }
            slot += 1;
        });
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Vec<f64>>) {
        self.velocity = velocity;
    }
}
