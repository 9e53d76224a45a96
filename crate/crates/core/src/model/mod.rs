//! Frozen backbone, shared decoder, hand-written reverse-mode tape and the
//! episodic training loop.

mod backbone;
mod checkpoint;
mod decoder;
pub mod kernels;
mod loss;
mod optim;
mod pipeline;
mod tape;
mod train;

pub use backbone::{Backbone, ConvLayer, BACKBONE_SEED, HIGH_CHANNELS, MID_CHANNELS, STEM_CHANNELS};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use decoder::{
    BoundParams, Decoder, DecoderOutput, DecoderShape, DecoderVars, DEFAULT_HIDDEN, LAYERS,
    NUM_SCALES,
};
pub use loss::{cross_entropy_ignore, ProbabilityMap, PROB_FLOOR};
pub use optim::{poly_lr, PolySgd, POLY_POWER};
pub use pipeline::{
    objective, scale_masks, Model, ObjectiveInputs, ObjectiveValue, PreparedEpisode, ShotFeatures,
};
pub use tape::{Gradients, Tape, Var};
pub use train::{
    train, EpisodeOutcome, LossReport, ObjectiveValueSummary, TrainSettings, TrainState,
};
