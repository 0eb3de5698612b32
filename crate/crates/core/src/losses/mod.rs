//! Forward values and analytic gradients of the segmentation losses: unary
//! cross-entropy, the KL-Bernoulli affinity field loss, its multiscale
//! weighted aggregate, the combined training objective, and a contrastive
//! pixel-embedding loss used as a comparator.

mod affinity;
mod combined;
mod contrastive;
mod kl;
mod unary;

pub use affinity::{affinity_loss, affinity_pixel_map, multiscale_aaf, AafOutput};
pub use combined::{combined_objective, CombinedOutput};
pub use contrastive::contrastive_loss;
pub use kl::{kl_bernoulli, kl_bernoulli_grad};
pub use unary::unary_ce;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Lower-level entry points on raw per-class score buffers.
///
/// The affinity loss reads each class channel independently, so it is well
/// defined on any H×W×C buffer of values in `[0, 1]`, normalized or not.
/// These functions let callers (finite-difference checks in particular)
/// evaluate it off the simplex.
pub mod raw {
    pub use super::affinity::{affinity_loss_scores, multiscale_aaf_scores};
}

/// Which branch of the affinity loss a pair falls in for a class channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    /// Both pixels agree on membership of the class: grouping force.
    NonEdge = 0,
    /// Exactly one pixel belongs to the class: separating force.
    Edge = 1,
}

impl Term {
    pub const ALL: [Term; 2] = [Term::NonEdge, Term::Edge];

    pub fn name(self) -> &'static str {
        match self {
            Term::NonEdge => "nonedge",
            Term::Edge => "edge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Weight of the region loss relative to the unary loss.
    pub lambda: f64,
    /// Hinge margin of the affinity edge term, in nats.
    pub margin: f64,
    /// Hinge margin of the contrastive comparator (squared distance units).
    pub contrastive_margin: f64,
    /// Probabilities are clamped to `[kl_eps, 1 - kl_eps]` inside the KL.
    pub kl_eps: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            margin: 3.0,
            contrastive_margin: 0.2,
            kl_eps: 1e-6,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            errs.push(format!("loss.lambda must be >= 0 (got {})", self.lambda));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            errs.push(format!("loss.margin must be > 0 (got {})", self.margin));
        }
        if !(self.contrastive_margin.is_finite() && self.contrastive_margin > 0.0) {
            errs.push(format!(
                "loss.contrastive_margin must be > 0 (got {})",
                self.contrastive_margin
            ));
        }
        if !(self.kl_eps > 0.0 && self.kl_eps <= 1e-3) {
            errs.push(format!(
                "loss.kl_eps must be in (0, 1e-3] (got {})",
                self.kl_eps
            ));
        }
        errs
    }

    pub(crate) fn check(&self) -> Result<(), Error> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidValue(errs.join("; ")))
        }
    }
}

/// A loss value with its per-(class, kernel, term) breakdown.
///
/// `term_means` and `pair_counts` are indexed `(class, kernel, term)` via
/// [`LossValue::index`]. Losses without a class or kernel axis use a single
/// row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub num_classes: usize,
    pub kernel_sizes: Vec<usize>,
    pub term_means: Vec<f64>,
    pub pair_counts: Vec<u64>,
}

impl LossValue {
    pub(crate) fn scalar(total: f64) -> Self {
        Self {
            total,
            num_classes: 0,
            kernel_sizes: Vec::new(),
            term_means: Vec::new(),
            pair_counts: Vec::new(),
        }
    }

    #[inline]
    pub fn index(&self, class: usize, kernel: usize, term: Term) -> usize {
        (class * self.kernel_sizes.len() + kernel) * 2 + term as usize
    }

    pub fn mean(&self, class: usize, kernel: usize, term: Term) -> f64 {
        self.term_means[self.index(class, kernel, term)]
    }

    pub fn count(&self, class: usize, kernel: usize, term: Term) -> u64 {
        self.pair_counts[self.index(class, kernel, term)]
    }
}

/// A gradient laid out like the differentiated H×W×channels input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl LossGrad {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
