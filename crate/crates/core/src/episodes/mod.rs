//! Synthetic episodic benchmark: class splits, support/query sampling,
//! K-shot fusion and tensor-file ingestion.

mod fusion;
mod sampler;
mod synth;
mod tensor_file;

pub use fusion::{kshot_average, kshot_vote, Fusion};
pub use sampler::{
    sample_episode, sample_episode_for_class, Episode, FoldSplit, Phase, Shot, NUM_FOLDS,
};
pub use synth::{
    generate_scene, Pattern, Placement, Scene, Shape, SyntheticClass, Texture, IMAGE_SIZE,
    NUM_CLASSES,
};
pub use tensor_file::{
    read_tensor_file, write_tensor_file, Dtype, TensorData, TensorFile, MAGIC, VERSION,
};
