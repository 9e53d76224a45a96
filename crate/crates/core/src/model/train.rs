//! Episodic training driver.

use log::warn;

use crate::ce::LossWeights;
use crate::episodes::{sample_episode, Episode, FoldSplit, Phase};
use crate::error::Result;
use crate::lps::LpsConfig;
use crate::numeric::{Real, Tensor};
use crate::rng::{SplitMix64, Stream};

use super::backbone::Backbone;
use super::decoder::{Decoder, DecoderShape, DEFAULT_HIDDEN};
use super::optim::PolySgd;
use super::pipeline::{objective, ObjectiveInputs, PreparedEpisode};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub seed: u64,
    pub base_lr: f64,
    pub total_steps: usize,
    pub batch: usize,
    pub weights: LossWeights,
    pub lps: LpsConfig,
    pub eps: f64,
    /// When false the auxiliary path is never built, whatever `w_ce` says.
    pub ce_enabled: bool,
    pub hidden: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            seed: 0,
            base_lr: 0.05,
            total_steps: 2000,
            batch: 1,
            weights: LossWeights::default(),
            lps: LpsConfig::default(),
            eps: 1e-7,
            ce_enabled: true,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

/// One optimizer step's losses, averaged over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub lr: f64,
    pub l_main: f64,
    pub l_ce: f64,
    pub l_aux: f64,
    pub total: f64,
    /// Number of batch episodes in which latent sampling produced a region.
    pub ce_fired: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeOutcome<T> {
    Used(ObjectiveValueSummary<T>),
    /// A support mask had no foreground on the feature grid.
    Skipped,
}

/// Losses and gradients of a single episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValueSummary<T> {
    pub main: f64,
    pub ce: f64,
    pub aux: f64,
    pub total: f64,
    pub ce_fired: bool,
    pub grads: Vec<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub decoder: Decoder<T>,
    pub optimizer: PolySgd,
    pub settings: TrainSettings,
    lps_rng: SplitMix64,
    data_rng: SplitMix64,
    pub skipped: usize,
}

impl<T: Real> TrainState<T> {
    pub fn new(settings: TrainSettings, feature_channels: usize) -> Result<Self> {
        settings.weights.validate()?;
        settings.lps.validate()?;
        let shape = DecoderShape {
            hidden: settings.hidden,
            ..DecoderShape::for_features(feature_channels)
        };
        let mut init = SplitMix64::derive(settings.seed, Stream::Init);
        Ok(TrainState {
            decoder: Decoder::init(shape, &mut init),
            optimizer: PolySgd::new(settings.base_lr, settings.total_steps),
            lps_rng: SplitMix64::derive(settings.seed, Stream::Lps),
            data_rng: SplitMix64::derive(settings.seed, Stream::Data),
            skipped: 0,
            settings,
        })
    }

    /// True when the auxiliary path contributes to the objective.
    pub fn ce_active(&self) -> bool {
        self.settings.ce_enabled && self.settings.weights.w_ce > 0.0
    }

    pub fn step(&self) -> usize {
        self.optimizer.step
    }

    pub fn finished(&self) -> bool {
        self.optimizer.step >= self.optimizer.total_steps
    }

    /// Losses and gradients for one episode at the current parameters.
    pub fn episode_objective(&mut self, prepared: &PreparedEpisode<T>) -> Result<EpisodeOutcome<T>> {
        if prepared.has_empty_support() {
            return Ok(EpisodeOutcome::Skipped);
        }
        let eps = T::of(self.settings.eps);
        let main = prepared.main_input(eps)?;
        let latent = if self.ce_active() {
            match prepared.sample_latent(&self.settings.lps, &mut self.lps_rng)? {
                Some(sample) => Some((prepared.latent_input(&sample, eps)?, sample.pseudo_mask)),
                None => None,
            }
        } else {
            None
        };
        let inputs = ObjectiveInputs {
            main,
            query_mask: prepared.query.mask.clone(),
            latent,
        };
        let value = objective(&self.decoder, &inputs, &self.settings.weights)?;
        Ok(EpisodeOutcome::Used(ObjectiveValueSummary {
            main: value.main,
            ce: value.ce,
            aux: value.aux,
            total: value.total,
            ce_fired: inputs.latent.is_some(),
            grads: value.grads,
        }))
    }

    /// Draws training episodes until one is usable. Skips are counted.
    fn next_usable(&mut self, backbone: &Backbone<T>, split: &FoldSplit) -> Result<ObjectiveValueSummary<T>> {
        loop {
            let episode = sample_episode(split, Phase::Train, 1, &mut self.data_rng)?;
            let prepared = PreparedEpisode::new(backbone, &episode)?;
            match self.episode_objective(&prepared)? {
                EpisodeOutcome::Used(v) => return Ok(v),
                EpisodeOutcome::Skipped => {
                    self.skipped += 1;
                    warn!(
                        "skipping episode of class {}: support foreground vanished at feature scale ({} so far)",
                        episode.class_id, self.skipped
                    );
                }
            }
        }
    }

    /// One optimizer step over `batch` freshly sampled training episodes.
    pub fn train_step(&mut self, backbone: &Backbone<T>, split: &FoldSplit) -> Result<LossReport> {
        let batch = self.settings.batch.max(1);
        let mut parts = Vec::with_capacity(batch);
        for _ in 0..batch {
            parts.push(self.next_usable(backbone, split)?);
        }
        self.apply(parts)
    }

    /// One optimizer step on a fixed episode; `None` when it must be skipped.
    pub fn train_episode(&mut self, backbone: &Backbone<T>, episode: &Episode) -> Result<Option<LossReport>> {
        let prepared = PreparedEpisode::new(backbone, episode)?;
        match self.episode_objective(&prepared)? {
            EpisodeOutcome::Used(v) => self.apply(vec![v]).map(Some),
            EpisodeOutcome::Skipped => {
                self.skipped += 1;
                warn!("skipping episode of class {}: empty support foreground", episode.class_id);
                Ok(None)
            }
        }
    }

    fn apply(&mut self, parts: Vec<ObjectiveValueSummary<T>>) -> Result<LossReport> {
        let n = parts.len();
        let scale = 1.0 / n as f64;
        let mut grads = parts[0].grads.clone();
        for p in &parts[1..] {
            for (acc, g) in grads.iter_mut().zip(&p.grads) {
                acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b);
            }
        }
        if n > 1 {
            let s = T::of(scale);
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
        }
        let mean = |f: fn(&ObjectiveValueSummary<T>) -> f64| parts.iter().map(f).sum::<f64>() * scale;
        let step = self.optimizer.step;
        let lr = self.optimizer.step(self.decoder.params_mut(), &grads)?;
        Ok(LossReport {
            step,
            lr,
            l_main: mean(|p| p.main),
            l_ce: mean(|p| p.ce),
            l_aux: mean(|p| p.aux),
            total: mean(|p| p.total),
            ce_fired: parts.iter().filter(|p| p.ce_fired).count(),
        })
    }
}

/// Trains for the full schedule on the split's training classes, calling
/// `on_step` after every optimizer step.
pub fn train<T: Real>(
    settings: TrainSettings,
    backbone: &Backbone<T>,
    split: &FoldSplit,
    mut on_step: impl FnMut(&LossReport),
) -> Result<TrainState<T>> {
    let mut state = TrainState::new(settings, backbone.mid_channels())?;
    while !state.finished() {
        let report = state.train_step(backbone, split)?;
        on_step(&report);
    }
    Ok(state)
}
