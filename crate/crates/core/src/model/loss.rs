use crate::error::{CelpError, Result};
use crate::mask::{LabelMask, FOREGROUND, IGNORE};
use crate::numeric::{Real, Tensor};

use super::kernels::softmax_channels;

/// Lower clamp for probabilities inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `classes×h×w` per-position class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap<T> {
    probs: Tensor<T>,
}

impl<T: Real> ProbabilityMap<T> {
    pub fn from_logits(logits: &Tensor<T>) -> Self {
        ProbabilityMap {
            probs: softmax_channels(logits),
        }
    }

    /// Wraps explicit probabilities; each position must sum to 1 within 1e-6.
    pub fn new(probs: Tensor<T>) -> Result<Self> {
        if probs.shape().len() != 3 || probs.shape()[0] < 2 {
            return Err(CelpError::dim(format!(
                "probability map needs shape classes×h×w with ≥2 classes, got {:?}",
                probs.shape()
            )));
        }
        let map = ProbabilityMap { probs };
        for i in 0..map.positions() {
            let s: f64 = (0..map.classes()).map(|k| map.prob(k, i).as_f64()).sum();
            if (s - 1.0).abs() > 1e-6 || (0..map.classes()).any(|k| map.prob(k, i) < T::zero()) {
                return Err(CelpError::OutOfRange(format!(
                    "probabilities at position {i} sum to {s}"
                )));
            }
        }
        Ok(map)
    }

    pub fn classes(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.probs.shape()[2]
    }

    pub fn positions(&self) -> usize {
        self.height() * self.width()
    }

    pub fn prob(&self, class: usize, position: usize) -> T {
        self.probs.data()[class * self.positions() + position]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.probs
    }

    /// Foreground wherever class 1 is strictly more probable than class 0.
    pub fn argmax_mask(&self) -> LabelMask {
        LabelMask::from_fn(self.height(), self.width(), |i| {
            self.prob(FOREGROUND as usize, i) > self.prob(0, i)
        })
    }
}

/// Mean of `-ln P(M(i))` over non-ignored positions, in the map's precision.
pub(crate) fn cross_entropy_value<T: Real>(probs: &ProbabilityMap<T>, mask: &LabelMask) -> Result<T> {
    mask.check_grid(probs.height(), probs.width(), "cross entropy")?;
    let floor = T::of(PROB_FLOOR);
    let mut sum = T::zero();
    let mut count = 0usize;
    for (i, &label) in mask.labels().iter().enumerate() {
        if label == IGNORE {
            continue;
        }
        let p = probs.prob(label as usize, i).max(floor);
        sum -= p.ln();
        count += 1;
    }
    Ok(if count == 0 {
        T::zero()
    } else {
        sum / T::of(count as f64)
    })
}

/// Cross-entropy with ignore label 255; 0 when every position is ignored.
pub fn cross_entropy_ignore<T: Real>(probs: &ProbabilityMap<T>, mask: &LabelMask) -> Result<f64> {
    cross_entropy_value(probs, mask).map(Real::as_f64)
}
