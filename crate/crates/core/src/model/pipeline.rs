//! Episode-level plumbing shared by training and evaluation: feature
//! extraction, decoder inputs for both paths, and the weighted objective.

use crate::ce::{
    assemble_decoder_input, latent_prior_mask, support_prior_mask, DecoderInput, LossWeights,
    PriorMask,
};
use crate::episodes::{kshot_average, kshot_vote, Episode, Fusion};
use crate::error::{CelpError, Result};
use crate::lps::{sample_latent_prototype, LatentSample, LpsConfig};
use crate::mask::{LabelMask, FOREGROUND};
use crate::numeric::{masked_gap, FeatureMap, Prototype, Real, Tensor};
use crate::rng::SplitMix64;

use super::backbone::Backbone;
use super::decoder::{Decoder, DecoderShape};
use super::kernels::pooled_size;
use super::tape::Tape;

/// Features and feature-resolution mask of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotFeatures<T> {
    pub mid: FeatureMap<T>,
    pub high: FeatureMap<T>,
    pub mask: LabelMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedEpisode<T> {
    pub class_id: usize,
    pub supports: Vec<ShotFeatures<T>>,
    pub query: ShotFeatures<T>,
}

impl<T: Real> PreparedEpisode<T> {
    /// Runs the frozen backbone on every image and reduces the masks to the
    /// feature grid by nearest-neighbour sampling.
    pub fn new(backbone: &Backbone<T>, episode: &Episode) -> Result<Self> {
        let shot = |image: &Tensor<f64>, mask: &LabelMask| -> Result<ShotFeatures<T>> {
            let (mid, high) = backbone.extract_features(&image.cast())?;
            let mask = mask.resize_nearest(mid.height(), mid.width());
            Ok(ShotFeatures { mid, high, mask })
        };
        Ok(PreparedEpisode {
            class_id: episode.class_id,
            supports: episode
                .supports
                .iter()
                .map(|s| shot(&s.image, &s.mask))
                .collect::<Result<_>>()?,
            query: shot(&episode.query.image, &episode.query.mask)?,
        })
    }

    /// True when some support lost all its foreground on the feature grid.
    pub fn has_empty_support(&self) -> bool {
        self.supports.iter().any(|s| s.mask.count(FOREGROUND) == 0)
    }

    /// Prototype and prior of one support against the query.
    pub fn support_condition(&self, index: usize, eps: T) -> Result<(Prototype<T>, PriorMask<T>)> {
        let s = &self.supports[index];
        let proto = masked_gap(&s.mid, &s.mask, FOREGROUND)?;
        let prior = support_prior_mask(&self.query.high, &s.high, &s.mask, eps)?;
        Ok((proto, prior))
    }

    /// Main-path decoder input with K-shot averaging of prototypes and priors.
    pub fn main_input(&self, eps: T) -> Result<DecoderInput<T>> {
        let (protos, priors): (Vec<_>, Vec<_>) = (0..self.supports.len())
            .map(|i| self.support_condition(i, eps))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let (proto, prior) = kshot_average(&protos, &priors)?;
        assemble_decoder_input(&self.query.mid, &proto, &prior)
    }

    /// Auxiliary-path input from a latent sample on the query.
    pub fn latent_input(&self, sample: &LatentSample<T>, eps: T) -> Result<DecoderInput<T>> {
        let prior = latent_prior_mask(&sample.prototype, &self.query.mid, &sample.pseudo_mask, eps)?;
        assemble_decoder_input(&self.query.mid, &sample.prototype, &prior)
    }

    pub fn sample_latent(&self, cfg: &LpsConfig, rng: &mut SplitMix64) -> Result<Option<LatentSample<T>>> {
        sample_latent_prototype(&self.query.mid, &self.query.high, &self.query.mask, cfg, rng)
    }
}

/// Masks for the decoder's per-scale heads: the feature grid and its 2×
/// coarser grid, both by nearest-neighbour reduction.
pub fn scale_masks(mask: &LabelMask) -> Vec<LabelMask> {
    vec![
        mask.clone(),
        mask.resize_nearest(pooled_size(mask.height()), pooled_size(mask.width())),
    ]
}

/// Everything the objective needs for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveInputs<T> {
    pub main: DecoderInput<T>,
    pub query_mask: LabelMask,
    /// Auxiliary-path input and pseudo-mask, when latent sampling fired.
    pub latent: Option<(DecoderInput<T>, LabelMask)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue<T> {
    pub total: f64,
    pub main: f64,
    pub ce: f64,
    pub aux: f64,
    /// Gradient per decoder parameter tensor, in parameter order.
    pub grads: Vec<Tensor<T>>,
}

/// `L_main + w_ce·L_ce + w_aux·L_aux` with reverse-mode gradients for every
/// decoder parameter. Both paths run through the same bound parameters.
pub fn objective<T: Real>(
    decoder: &Decoder<T>,
    inputs: &ObjectiveInputs<T>,
    weights: &LossWeights,
) -> Result<ObjectiveValue<T>> {
    let mut tape = Tape::new();
    let params = decoder.bind(&mut tape);

    let x = tape.leaf(inputs.main.tensor().clone());
    let main = decoder.forward_on_tape(&mut tape, &params, x)?;
    let l_main = tape.cross_entropy(main.prediction, &inputs.query_mask)?;
    let scale_terms = main
        .scales
        .iter()
        .zip(scale_masks(&inputs.query_mask))
        .map(|(&v, m)| Ok((tape.cross_entropy(v, &m)?, 1.0)))
        .collect::<Result<Vec<_>>>()?;
    let l_aux = tape.weighted_sum(&scale_terms);

    let mut terms = vec![(l_main, 1.0)];
    let mut l_ce = None;
    if let Some((input, pseudo)) = &inputs.latent {
        let xl = tape.leaf(input.tensor().clone());
        let latent = decoder.forward_on_tape(&mut tape, &params, xl)?;
        let l = tape.cross_entropy(latent.prediction, pseudo)?;
        terms.push((l, weights.w_ce));
        l_ce = Some(l);
    }
    terms.push((l_aux, weights.w_aux));
    let total = tape.weighted_sum(&terms);

    let mut grads = tape.backward(total);
    let grads = params
        .vars()
        .iter()
        .zip(decoder.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();
    Ok(ObjectiveValue {
        total: tape.scalar(total).as_f64(),
        main: tape.scalar(l_main).as_f64(),
        ce: l_ce.map_or(0.0, |v| tape.scalar(v).as_f64()),
        aux: tape.scalar(l_aux).as_f64(),
        grads,
    })
}

/// Frozen backbone plus decoder: the inference-time model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub backbone: Backbone<T>,
    pub decoder: Decoder<T>,
}

impl<T: Real> Model<T> {
    pub fn new(backbone: Backbone<T>, decoder: Decoder<T>) -> Result<Self> {
        let want = DecoderShape::for_features(backbone.mid_channels()).in_channels;
        if decoder.shape().in_channels != want {
            return Err(CelpError::dim(format!(
                "decoder takes {} channels, backbone produces inputs of {}",
                decoder.shape().in_channels,
                want
            )));
        }
        Ok(Model { backbone, decoder })
    }

    fn segment(&self, input: &DecoderInput<T>) -> Result<LabelMask> {
        Ok(self.decoder.forward(input)?.prediction.argmax_mask())
    }

    /// Binary query prediction on the feature grid, or `None` when a support
    /// has no foreground at feature resolution.
    pub fn predict(&self, prepared: &PreparedEpisode<T>, fusion: Fusion, eps: T) -> Result<Option<LabelMask>> {
        fusion.check(prepared.supports.len())?;
        if prepared.has_empty_support() {
            return Ok(None);
        }
        match fusion {
            Fusion::Average => self.segment(&prepared.main_input(eps)?).map(Some),
            Fusion::Vote(k) => {
                let preds = (0..prepared.supports.len())
                    .map(|i| {
                        let (proto, prior) = prepared.support_condition(i, eps)?;
                        self.segment(&assemble_decoder_input(&prepared.query.mid, &proto, &prior)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                kshot_vote(&preds, k).map(Some)
            }
        }
    }
}
