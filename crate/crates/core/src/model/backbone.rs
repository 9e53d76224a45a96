//! Frozen toy backbone.
//!
//! Layer plan for a `3×64×64` input:
//!
//! | layer | kernel | stride | channels | output grid |
//! |-------|--------|--------|----------|-------------|
//! | stem  | 3×3    | 2      | 3 → 16   | 32×32       |
//! | mid   | 3×3    | 2      | 16 → 32  | 16×16 (F^m) |
//! | high  | 3×3    | 1      | 32 → 64  | 16×16 (F^h) |
//!
//! Every layer is conv → ReLU with padding 1. Weights are He-normal draws
//! from the backbone seed. [`Backbone::new`] additionally folds a frozen
//! per-channel normalisation into each conv (mean/std of the pre-activation
//! over a fixed set of synthetic calibration scenes), the analogue of frozen
//! batch-norm statistics. Nothing here is ever updated by training.

use crate::episodes::{generate_scene, NUM_CLASSES};
use crate::error::{CelpError, Result};
use crate::numeric::{FeatureMap, Real, Tensor};
use crate::rng::{SplitMix64, Stream};

use super::kernels::{conv2d, ConvGeometry};

pub const STEM_CHANNELS: usize = 16;
pub const MID_CHANNELS: usize = 32;
pub const HIGH_CHANNELS: usize = 64;
/// Seed of the shared frozen backbone; independent of the run seed so every
/// run sees the same features.
pub const BACKBONE_SEED: u64 = 0x5EED_BAC0;
const CALIBRATION_SCENES: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geom: ConvGeometry,
}

impl<T: Real> ConvLayer<T> {
    fn he_normal(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut SplitMix64) -> Self {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        ConvLayer {
            weight: Tensor::from_fn(vec![cout, cin, k, k], |_| T::of(rng.normal() * std)),
            bias: Tensor::zeros(vec![cout]),
            geom: ConvGeometry { stride, pad: k / 2 },
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        conv2d(x, &self.weight, &self.bias, self.geom)
    }

    /// Rescales so the layer output is `(conv(x) - mean) / std` per channel.
    fn fold_normalization(&mut self, mean: &[f64], std: &[f64]) {
        let cout = self.weight.shape()[0];
        let per_out = self.weight.len() / cout;
        for co in 0..cout {
            let s = std[co].max(1e-6);
            for v in &mut self.weight.data_mut()[co * per_out..(co + 1) * per_out] {
                *v = T::of(v.as_f64() / s);
            }
            let b = &mut self.bias.data_mut()[co];
            *b = T::of((b.as_f64() - mean[co]) / s);
        }
    }
}

fn relu<T: Real>(x: Tensor<T>) -> Tensor<T> {
    let mut x = x;
    x.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
    x
}

fn channel_stats<T: Real>(outputs: &[Tensor<T>]) -> (Vec<f64>, Vec<f64>) {
    let c = outputs[0].shape()[0];
    let plane = outputs[0].len() / c;
    let mut mean = vec![0.0; c];
    let mut sq = vec![0.0; c];
    let n = (outputs.len() * plane) as f64;
    for t in outputs {
        for ch in 0..c {
            for &v in &t.data()[ch * plane..(ch + 1) * plane] {
                mean[ch] += v.as_f64();
                sq[ch] += v.as_f64() * v.as_f64();
            }
        }
    }
    let std = (0..c)
        .map(|ch| {
            let m = mean[ch] / n;
            (sq[ch] / n - m * m).max(0.0).sqrt()
        })
        .collect();
    (mean.iter().map(|m| m / n).collect(), std)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    stem: ConvLayer<T>,
    mid: ConvLayer<T>,
    high: ConvLayer<T>,
}

impl<T: Real> Backbone<T> {
    /// Random zero-bias stack without normalisation.
    pub fn uncalibrated(seed: u64) -> Self {
        let mut rng = SplitMix64::derive(seed, Stream::Backbone);
        Backbone {
            stem: ConvLayer::he_normal(3, STEM_CHANNELS, 3, 2, &mut rng),
            mid: ConvLayer::he_normal(STEM_CHANNELS, MID_CHANNELS, 3, 2, &mut rng),
            high: ConvLayer::he_normal(MID_CHANNELS, HIGH_CHANNELS, 3, 1, &mut rng),
        }
    }

    /// Random stack with frozen per-channel normalisation calibrated on
    /// synthetic scenes drawn from `seed`.
    pub fn new(seed: u64) -> Self {
        let mut net = Self::uncalibrated(seed);
        let mut rng = SplitMix64::derive(seed, Stream::Backbone).split(1);
        let images: Vec<Tensor<T>> = (0..CALIBRATION_SCENES)
            .map(|i| {
                let a = i % NUM_CLASSES;
                let b = (i * 5 + 3) % NUM_CLASSES;
                let ids = if a == b { vec![a] } else { vec![a, b] };
                generate_scene(&ids, &mut rng)
                    .expect("calibration scene")
                    .image
                    .cast()
            })
            .collect();

        let pre: Vec<Tensor<T>> = images.iter().map(|x| net.stem.forward(x)).collect();
        let (m, s) = channel_stats(&pre);
        net.stem.fold_normalization(&m, &s);
        let act: Vec<Tensor<T>> = images.iter().map(|x| relu(net.stem.forward(x))).collect();

        let pre: Vec<Tensor<T>> = act.iter().map(|x| net.mid.forward(x)).collect();
        let (m, s) = channel_stats(&pre);
        net.mid.fold_normalization(&m, &s);
        let act: Vec<Tensor<T>> = act.iter().map(|x| relu(net.mid.forward(x))).collect();

        let pre: Vec<Tensor<T>> = act.iter().map(|x| net.high.forward(x)).collect();
        let (m, s) = channel_stats(&pre);
        net.high.fold_normalization(&m, &s);
        net
    }

    pub fn standard() -> Self {
        Self::new(BACKBONE_SEED)
    }

    /// Feature grid for an `H×W` input: both extents divided by 4 (rounded up).
    pub fn output_grid(height: usize, width: usize) -> (usize, usize) {
        let half = |n: usize| (n - 1) / 2 + 1;
        (half(half(height)), half(half(width)))
    }

    pub fn mid_channels(&self) -> usize {
        self.mid.weight.shape()[0]
    }

    pub fn high_channels(&self) -> usize {
        self.high.weight.shape()[0]
    }

    pub fn layers(&self) -> [&ConvLayer<T>; 3] {
        [&self.stem, &self.mid, &self.high]
    }

    /// Mid- and high-level features of a `3×H×W` image.
    pub fn extract_features(&self, image: &Tensor<T>) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
        if image.shape().len() != 3 || image.shape()[0] != 3 {
            return Err(CelpError::dim(format!(
                "backbone expects a 3×H×W image, got {:?}",
                image.shape()
            )));
        }
        let stem = relu(self.stem.forward(image));
        let mid = relu(self.mid.forward(&stem));
        let high = relu(self.high.forward(&mid));
        Ok((FeatureMap::new(mid)?, FeatureMap::new(high)?))
    }

    /// Bytes of every weight and bias, for frozenness checks.
    pub fn fingerprint(&self) -> Vec<u8> {
        self.layers()
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data()))
            .flat_map(|v| v.as_f64().to_le_bytes())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_grid_for_64_is_16() {
        assert_eq!(Backbone::<f64>::output_grid(64, 64), (16, 16));
        let net = Backbone::<f64>::uncalibrated(1);
        let img = Tensor::from_fn(vec![3, 64, 64], |i| (i % 7) as f64 / 7.0);
        let (m, h) = net.extract_features(&img).unwrap();
        assert_eq!((m.channels(), m.height(), m.width()), (MID_CHANNELS, 16, 16));
        assert_eq!((h.channels(), h.height(), h.width()), (HIGH_CHANNELS, 16, 16));
        let odd = Tensor::from_fn(vec![3, 30, 22], |_| 0.5);
        let (m, _) = net.extract_features(&odd).unwrap();
        assert_eq!((m.height(), m.width()), Backbone::<f64>::output_grid(30, 22));
    }

    #[test]
    fn repeated_calls_are_identical() {
        let net = Backbone::<f64>::new(3);
        let mut rng = SplitMix64::new(2);
        let img = generate_scene(&[1, 5], &mut rng).unwrap().image;
        let a = net.extract_features(&img).unwrap();
        let b = net.extract_features(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!(Backbone::<f64>::new(3), net);
    }

    #[test]
    fn zero_image_through_zero_bias_stack_is_zero() {
        let net = Backbone::<f64>::uncalibrated(9);
        let (m, h) = net.extract_features(&Tensor::zeros(vec![3, 64, 64])).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_wrong_channels() {
        let net = Backbone::<f64>::uncalibrated(1);
        assert!(net.extract_features(&Tensor::zeros(vec![1, 8, 8])).is_err());
        assert!(net.extract_features(&Tensor::zeros(vec![8, 8])).is_err());
    }
}
