//! Two-scale segmentation decoder shared by the main and auxiliary paths.
//!
//! ```text
//! x (2C+1, h, w)
//!   └ in: 1×1 conv → ReLU ─────────────── a (H, h, w) ── aux_fine: 1×1 → scale 0 logits
//!        ├ 2×2 avg pool → coarse: 3×3 conv → ReLU ── c (H, h/2, w/2) ── aux_coarse: 1×1 → scale 1 logits
//!        └ a + upsample(c) → fine: 3×3 conv → ReLU ── f (H, h, w) ── head: 1×1 → final logits
//! ```
//!
//! The final logits give the prediction scored by the main (or auxiliary
//! path) loss; the two per-scale heads supply the multi-scale auxiliary loss.

use crate::ce::DecoderInput;
use crate::error::{CelpError, Result};
use crate::numeric::{Real, Tensor};
use crate::rng::SplitMix64;

use super::kernels::{pooled_size, ConvGeometry};
use super::loss::ProbabilityMap;
use super::tape::{Tape, Var};

pub const DEFAULT_HIDDEN: usize = 32;
pub const NUM_SCALES: usize = 2;
const CLASSES: usize = 2;

const POINTWISE: ConvGeometry = ConvGeometry { stride: 1, pad: 0 };
const SAME3: ConvGeometry = ConvGeometry { stride: 1, pad: 1 };

/// Layer names in parameter order; each layer owns a weight and a bias.
pub const LAYERS: [&str; 6] = ["in", "coarse", "fine", "head", "aux_fine", "aux_coarse"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderShape {
    pub in_channels: usize,
    pub hidden: usize,
}

impl DecoderShape {
    pub fn for_features(feature_channels: usize) -> Self {
        DecoderShape {
            in_channels: 2 * feature_channels + 1,
            hidden: DEFAULT_HIDDEN,
        }
    }

    /// `(weight shape, bias length)` of every layer, in [`LAYERS`] order.
    pub fn layer_shapes(&self) -> [(Vec<usize>, usize); 6] {
        let (c, h) = (self.in_channels, self.hidden);
        [
            (vec![h, c, 1, 1], h),
            (vec![h, h, 3, 3], h),
            (vec![h, h, 3, 3], h),
            (vec![CLASSES, h, 1, 1], CLASSES),
            (vec![CLASSES, h, 1, 1], CLASSES),
            (vec![CLASSES, h, 1, 1], CLASSES),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(w, b)| w.iter().product::<usize>() + b)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    shape: DecoderShape,
    /// Weight, bias, weight, bias, ... in [`LAYERS`] order.
    params: Vec<Tensor<T>>,
}

/// Decoder parameters registered as leaves on one tape. Binding once and
/// running several forwards makes every path share the same leaves.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn layer(&self, i: usize) -> (Var, Var) {
        (self.vars[2 * i], self.vars[2 * i + 1])
    }
}

/// Logit nodes produced by one decoder forward.
#[derive(Debug, Clone)]
pub struct DecoderVars {
    pub prediction: Var,
    pub scales: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput<T> {
    pub prediction: ProbabilityMap<T>,
    /// Per-scale maps: full grid, then the 2× coarser grid.
    pub scales: Vec<ProbabilityMap<T>>,
}

impl<T: Real> Decoder<T> {
    /// He-normal weights, zero biases.
    pub fn init(shape: DecoderShape, rng: &mut SplitMix64) -> Self {
        let mut params = Vec::with_capacity(12);
        for (w, b) in shape.layer_shapes() {
            let fan_in: usize = w[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            params.push(Tensor::from_fn(w, |_| T::of(rng.normal() * std)));
            params.push(Tensor::zeros(vec![b]));
        }
        Decoder { shape, params }
    }

    pub fn from_params(shape: DecoderShape, params: Vec<Tensor<T>>) -> Result<Self> {
        let layers = shape.layer_shapes();
        if params.len() != 2 * layers.len() {
            return Err(CelpError::dim(format!(
                "decoder needs {} parameter tensors, got {}",
                2 * layers.len(),
                params.len()
            )));
        }
        for (i, (w, b)) in layers.iter().enumerate() {
            if params[2 * i].shape() != w.as_slice() || params[2 * i + 1].shape() != [*b] {
                return Err(CelpError::dim(format!(
                    "layer `{}` expects weight {:?} and bias [{}], got {:?} and {:?}",
                    LAYERS[i],
                    w,
                    b,
                    params[2 * i].shape(),
                    params[2 * i + 1].shape()
                )));
            }
        }
        Ok(Decoder { shape, params })
    }

    /// Rebuilds from a flat parameter vector in [`Decoder::flat_params`] order.
    pub fn from_flat(shape: DecoderShape, flat: &[f64]) -> Result<Self> {
        if flat.len() != shape.parameter_count() {
            return Err(CelpError::dim(format!(
                "decoder {}→{} holds {} parameters, got {}",
                shape.in_channels,
                shape.hidden,
                shape.parameter_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        let mut params = Vec::with_capacity(12);
        for (w, b) in shape.layer_shapes() {
            for dims in [w, vec![b]] {
                let n: usize = dims.iter().product();
                params.push(Tensor::from_f64(dims, &flat[offset..offset + n])?);
                offset += n;
            }
        }
        Ok(Decoder { shape, params })
    }

    pub fn shape(&self) -> DecoderShape {
        self.shape
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.as_f64()))
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.params.iter().map(|p| tape.leaf(p.clone())).collect(),
        }
    }

    /// Records one forward pass on `tape` using already-bound parameters.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        input: Var,
    ) -> Result<DecoderVars> {
        let shape = tape.value(input).shape().to_vec();
        if shape.len() != 3 || shape[0] != self.shape.in_channels {
            return Err(CelpError::dim(format!(
                "decoder expects {} input channels, got shape {:?}",
                self.shape.in_channels, shape
            )));
        }
        let (h, w) = (shape[1], shape[2]);
        let conv = |tape: &mut Tape<T>, x: Var, layer: usize, geom: ConvGeometry| {
            let (wv, bv) = params.layer(layer);
            tape.conv2d(x, wv, bv, geom)
        };

        let a = conv(tape, input, 0, POINTWISE);
        let a = tape.relu(a);
        let pooled = tape.avg_pool2(a);
        let c = conv(tape, pooled, 1, SAME3);
        let c = tape.relu(c);
        let up = tape.upsample2(c, h, w);
        let merged = tape.add(a, up);
        let f = conv(tape, merged, 2, SAME3);
        let f = tape.relu(f);
        let prediction = conv(tape, f, 3, POINTWISE);
        let fine = conv(tape, a, 4, POINTWISE);
        let coarse = conv(tape, c, 5, POINTWISE);
        debug_assert_eq!(tape.value(coarse).shape()[1], pooled_size(h));
        Ok(DecoderVars {
            prediction,
            scales: vec![fine, coarse],
        })
    }

    /// Stand-alone forward: softmax maps for the final prediction and each
    /// scale.
    pub fn forward(&self, input: &DecoderInput<T>) -> Result<DecoderOutput<T>> {
        let (out, _) = self.forward_logits(input)?;
        Ok(out)
    }

    /// Forward returning the probability maps and the final logits.
    pub fn forward_logits(&self, input: &DecoderInput<T>) -> Result<(DecoderOutput<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let x = tape.leaf(input.tensor().clone());
        let vars = self.forward_on_tape(&mut tape, &params, x)?;
        let logits = tape.value(vars.prediction).clone();
        Ok((
            DecoderOutput {
                prediction: ProbabilityMap::from_logits(&logits),
                scales: vars
                    .scales
                    .iter()
                    .map(|&v| ProbabilityMap::from_logits(tape.value(v)))
                    .collect(),
            },
            logits,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ce::{assemble_decoder_input, PriorMask};
    use crate::numeric::{FeatureMap, Prototype};

    fn random_input(rng: &mut SplitMix64, c: usize, h: usize, w: usize) -> DecoderInput<f64> {
        let mid = FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| rng.normal()).collect()).unwrap();
        let proto = Prototype((0..c).map(|_| rng.normal()).collect());
        let prior = PriorMask::normalized(&Tensor::from_fn(vec![h, w], |_| rng.next_f64()), 1e-7).unwrap();
        assemble_decoder_input(&mid, &proto, &prior).unwrap()
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = SplitMix64::new(1);
        let dec = Decoder::<f64>::init(DecoderShape::for_features(4), &mut rng);
        let x = random_input(&mut rng, 4, 6, 5);
        let out = dec.forward(&x).unwrap();
        assert_eq!(out.scales.len(), NUM_SCALES);
        assert_eq!((out.scales[1].height(), out.scales[1].width()), (3, 3));
        for map in std::iter::once(&out.prediction).chain(&out.scales) {
            for i in 0..map.positions() {
                assert!((map.prob(0, i) + map.prob(1, i) - 1.0).abs() < 1e-6);
            }
        }
        assert_eq!(dec.forward(&x).unwrap(), out);
    }

    #[test]
    fn hand_set_decoder_on_single_cell() {
        // in: 2 hidden units from a 5-channel input; coarse path zeroed; fine
        // layer passes `a` through its centre tap; head is a 2×2 matrix.
        let shape = DecoderShape {
            in_channels: 5,
            hidden: 2,
        };
        let w_in = [[0.5, -1.0, 0.25, 0.0, 2.0], [1.0, 1.0, 0.0, -0.5, 0.0]];
        let b_in = [0.1, -0.2];
        let w_head = [[1.5, -0.5], [-2.0, 0.75]];
        let b_head = [0.3, -0.1];
        let mut fine = vec![0.0; 2 * 2 * 9];
        fine[(0 * 2) * 9 + 4] = 1.0;
        fine[(1 * 2 + 1) * 9 + 4] = 1.0;
        let t = |s: Vec<usize>, d: Vec<f64>| Tensor::new(s, d).unwrap();
        let params = vec![
            t(vec![2, 5, 1, 1], w_in.concat()),
            t(vec![2], b_in.to_vec()),
            t(vec![2, 2, 3, 3], vec![0.0; 36]),
            t(vec![2], vec![0.0; 2]),
            t(vec![2, 2, 3, 3], fine),
            t(vec![2], vec![0.0; 2]),
            t(vec![2, 2, 1, 1], w_head.concat()),
            t(vec![2], b_head.to_vec()),
            t(vec![2, 2, 1, 1], vec![0.0; 4]),
            t(vec![2], vec![0.0; 2]),
            t(vec![2, 2, 1, 1], vec![0.0; 4]),
            t(vec![2], vec![0.0; 2]),
        ];
        let dec = Decoder::from_params(shape, params).unwrap();
        let mid = FeatureMap::from_vec(2, 1, 1, vec![1.0, 2.0]).unwrap();
        let prior = PriorMask::from_tensor(t(vec![1, 1], vec![0.5])).unwrap();
        let x = assemble_decoder_input(&mid, &Prototype(vec![-1.0, 3.0]), &prior).unwrap();
        let (_, logits) = dec.forward_logits(&x).unwrap();

        // x = (1, 2, -1, 3, 0.5)
        // a0 = relu(0.5 - 2 - 0.25 + 0 + 1 + 0.1) = relu(-0.65) = 0
        // a1 = relu(1 + 2 + 0 - 1.5 + 0 - 0.2) = 1.3
        // logits = W_head·(0, 1.3) + b_head = (-0.65 + 0.3, 0.975 - 0.1)
        let want = [-0.35, 0.875];
        for (got, want) in logits.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn flat_round_trip_and_shape_errors() {
        let mut rng = SplitMix64::new(2);
        let shape = DecoderShape::for_features(3);
        let dec = Decoder::<f64>::init(shape, &mut rng);
        let back = Decoder::from_flat(shape, &dec.flat_params()).unwrap();
        assert_eq!(back, dec);
        assert_eq!(dec.parameter_count(), shape.parameter_count());
        assert!(Decoder::<f64>::from_flat(shape, &[0.0; 3]).is_err());
        let x = random_input(&mut rng, 4, 2, 2);
        assert!(dec.forward(&x).is_err());
    }
}
