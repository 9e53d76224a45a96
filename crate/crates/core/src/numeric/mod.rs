//! Dense tensors and the similarity/pooling primitives shared by every
//! other module.

mod similarity;
mod tensor;

pub use similarity::{
    cosine, masked_gap, minmax_normalize, pairwise_cosine, SimilarityMatrix, DEFAULT_EPS,
    ZERO_NORM,
};
pub(crate) use similarity::cosine_unchecked;
pub use tensor::{FeatureMap, Prototype, Real, Tensor};
