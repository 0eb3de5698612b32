//! Adaptive affinity field losses for semantic segmentation.
//!
//! Pairwise KL-Bernoulli affinity losses over k×k label neighborhoods, with
//! per-class kernel-size weights chosen adversarially (the weights ascend the
//! loss while the segmenter descends it), plus a tiny hand-differentiated
//! convolutional segmenter, a synthetic scene generator and the usual
//! segmentation metrics.

pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod minimax;
mod par;
pub mod rng;
pub mod seggrid;
pub mod segmenter;
pub mod synthdata;

pub use error::{Error, Result};
pub use grid::{
    make_pairs, one_hot, smoothed_one_hot, EmbedGrid, FeatureMap, KernelSpec, LabelGrid, PairSet,
    ProbGrid,
};
pub use losses::{HyperParams, LossGrad, LossValue, Term};
pub use minimax::{ascend_weights, effective_kernel_size, MinimaxConfig, SimplexWeights};
pub use segmenter::{forward, predict, train, LossMode, ToySegmenter, TrainConfig};
pub use synthdata::{SceneSpec, SynthScene};
