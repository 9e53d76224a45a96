//! Contrastive enhancement with latent prototypes for few-shot segmentation,
//! at desk scale.

pub mod ce;
pub mod commands;
pub mod config;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod lps;
pub mod mask;
pub mod model;
pub mod numeric;
pub mod rng;

pub use error::{CelpError, Result};
