use crate::error::{CelpError, Result};
use crate::numeric::{Real, Tensor};

pub const POLY_POWER: f64 = 0.9;

/// `base · (1 − step/total)^0.9`.
pub fn poly_lr(base_lr: f64, step: usize, total_steps: usize) -> f64 {
    base_lr * (1.0 - step as f64 / total_steps as f64).powf(POLY_POWER)
}

/// Plain SGD with poly decay. Owns the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySgd {
    pub base_lr: f64,
    pub total_steps: usize,
    pub step: usize,
}

impl PolySgd {
    pub fn new(base_lr: f64, total_steps: usize) -> Self {
        PolySgd {
            base_lr,
            total_steps,
            step: 0,
        }
    }

    pub fn current_lr(&self) -> f64 {
        poly_lr(self.base_lr, self.step, self.total_steps)
    }

    /// `p ← p − lr(step)·g` for every parameter, then advances the step.
    /// Returns the learning rate used.
    pub fn step<T: Real>(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<f64> {
        if self.step >= self.total_steps {
            return Err(CelpError::OutOfRange(format!(
                "step {} exceeds the schedule of {} steps",
                self.step, self.total_steps
            )));
        }
        if params.len() != grads.len() {
            return Err(CelpError::dim(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        let lr = self.current_lr();
        let lr_t = T::of(lr);
        for (p, g) in params.iter_mut().zip(grads) {
            if p.shape() != g.shape() {
                return Err(CelpError::dim(format!(
                    "parameter {:?} with gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            for (v, &d) in p.data_mut().iter_mut().zip(g.data()) {
                *v -= lr_t * d;
            }
        }
        self.step += 1;
        Ok(lr)
    }
}
