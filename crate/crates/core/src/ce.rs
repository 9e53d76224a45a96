//! Contrastive enhancement: prior masks, decoder-input assembly and the
//! three-term objective.
//!
//! The main path conditions the decoder on the support prototype and the
//! support/query prior. The auxiliary path reuses the same decoder with the
//! latent prototype mined from the query background and asks it to segment
//! the mined region.

use crate::error::{CelpError, Result};
use crate::mask::{LabelMask, FOREGROUND};
use crate::model::{cross_entropy_ignore, ProbabilityMap};
use crate::numeric::{cosine_unchecked, minmax_normalize, FeatureMap, Prototype, Real, Tensor};

/// Normalised similarity map on the feature grid, values in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMask<T> {
    values: Tensor<T>,
}

impl<T: Real> PriorMask<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        PriorMask {
            values: Tensor::zeros(vec![height, width]),
        }
    }

    /// Wraps an already-normalised `h×w` tensor.
    pub fn from_tensor(values: Tensor<T>) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(CelpError::dim(format!(
                "prior mask needs shape h×w, got {:?}",
                values.shape()
            )));
        }
        Ok(PriorMask { values })
    }

    /// Min-max normalises a raw similarity map.
    pub fn normalized(raw: &Tensor<T>, eps: T) -> Result<Self> {
        Self::from_tensor(minmax_normalize(raw, eps))
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &[T] {
        self.values.data()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.values
    }
}

/// Decoder input: query features (C), expanded prototype (C), prior (1),
/// stacked along the channel axis in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderInput<T> {
    tensor: Tensor<T>,
    feature_channels: usize,
}

impl<T: Real> DecoderInput<T> {
    pub fn feature_channels(&self) -> usize {
        self.feature_channels
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    /// Splits back into (features, expanded prototype, prior) planes.
    pub fn slices(&self) -> (&[T], &[T], &[T]) {
        let plane = self.height() * self.width();
        let c = self.feature_channels;
        let data = self.tensor.data();
        (
            &data[..c * plane],
            &data[c * plane..2 * c * plane],
            &data[2 * c * plane..],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight on the contrastive-enhancement (auxiliary path) loss.
    pub w_ce: f64,
    /// Weight on the decoder's multi-scale auxiliary loss.
    pub w_aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_ce: 0.1,
            w_aux: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [("w_ce", self.w_ce), ("w_aux", self.w_aux)] {
            if !value.is_finite() || value < 0.0 {
                return Err(CelpError::config(field, format!("{value} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn check_proto<T: Real>(proto: &Prototype<T>, features: &FeatureMap<T>) -> Result<()> {
    if proto.len() != features.channels() {
        return Err(CelpError::dim(format!(
            "prototype has {} channels, features have {}",
            proto.len(),
            features.channels()
        )));
    }
    Ok(())
}

/// Cosine between the latent prototype and the query features restricted to
/// pseudo-foreground (other positions zeroed, hence cosine 0), min-max
/// normalised.
pub fn latent_prior_mask<T: Real>(
    latent: &Prototype<T>,
    mid: &FeatureMap<T>,
    pseudo_mask: &LabelMask,
    eps: T,
) -> Result<PriorMask<T>> {
    check_proto(latent, mid)?;
    pseudo_mask.check_grid(mid.height(), mid.width(), "latent prior")?;
    let zero = vec![T::zero(); mid.channels()];
    let raw = Tensor::from_fn(vec![mid.height(), mid.width()], |i| {
        let v = if pseudo_mask.get(i) == FOREGROUND {
            mid.vector(i)
        } else {
            zero.clone()
        };
        cosine_unchecked(latent.values(), &v)
    });
    PriorMask::normalized(&raw, eps)
}

/// Raw support/query similarity: for each query position, the maximum cosine
/// to any support foreground position. `None` when the support foreground is
/// empty.
pub fn support_similarity<T: Real>(
    query_high: &FeatureMap<T>,
    support_high: &FeatureMap<T>,
    support_mask: &LabelMask,
) -> Result<Option<Tensor<T>>> {
    if query_high.channels() != support_high.channels() {
        return Err(CelpError::dim(format!(
            "query has {} high-level channels, support has {}",
            query_high.channels(),
            support_high.channels()
        )));
    }
    support_mask.check_grid(support_high.height(), support_high.width(), "support prior")?;
    let support_rows: Vec<Vec<T>> = support_mask
        .positions_of(FOREGROUND)
        .map(|j| support_high.vector(j))
        .collect();
    if support_rows.is_empty() {
        return Ok(None);
    }
    let raw = Tensor::from_fn(vec![query_high.height(), query_high.width()], |i| {
        let q = query_high.vector(i);
        support_rows
            .iter()
            .map(|s| cosine_unchecked(&q, s))
            .fold(T::neg_infinity(), T::max)
    });
    Ok(Some(raw))
}

/// Support/query prior: max-over-support-foreground cosine, min-max
/// normalised. An empty support foreground yields the all-zero prior.
pub fn support_prior_mask<T: Real>(
    query_high: &FeatureMap<T>,
    support_high: &FeatureMap<T>,
    support_mask: &LabelMask,
    eps: T,
) -> Result<PriorMask<T>> {
    match support_similarity(query_high, support_high, support_mask)? {
        Some(raw) => PriorMask::normalized(&raw, eps),
        None => Ok(PriorMask::zeros(query_high.height(), query_high.width())),
    }
}

pub fn assemble_decoder_input<T: Real>(
    mid: &FeatureMap<T>,
    proto: &Prototype<T>,
    prior: &PriorMask<T>,
) -> Result<DecoderInput<T>> {
    check_proto(proto, mid)?;
    if prior.height() != mid.height() || prior.width() != mid.width() {
        return Err(CelpError::dim(format!(
            "prior grid {}×{} differs from feature grid {}×{}",
            prior.height(),
            prior.width(),
            mid.height(),
            mid.width()
        )));
    }
    let c = mid.channels();
    let plane = mid.positions();
    let mut data = Vec::with_capacity((2 * c + 1) * plane);
    data.extend_from_slice(mid.data());
    for &p in proto.values() {
        data.extend(std::iter::repeat(p).take(plane));
    }
    data.extend_from_slice(prior.values());
    Ok(DecoderInput {
        tensor: Tensor::new(vec![2 * c + 1, mid.height(), mid.width()], data)?,
        feature_channels: c,
    })
}

/// `main + w_ce·ce + w_aux·aux`.
pub fn total_loss(main: f64, ce: f64, aux: f64, weights: &LossWeights) -> f64 {
    main + weights.w_ce * ce + weights.w_aux * aux
}

/// Sum of ignore-aware cross-entropies over scales.
pub fn multiscale_aux_loss<T: Real>(preds: &[ProbabilityMap<T>], masks: &[LabelMask]) -> Result<f64> {
    if preds.len() != masks.len() {
        return Err(CelpError::dim(format!(
            "{} predictions for {} masks",
            preds.len(),
            masks.len()
        )));
    }
    if preds.is_empty() {
        return Err(CelpError::dim("multi-scale loss needs at least one scale"));
    }
    preds
        .iter()
        .zip(masks)
        .map(|(p, m)| cross_entropy_ignore(p, m))
        .sum()
}
