use super::{multiscale_aaf, unary_ce, HyperParams, LossGrad, LossValue};
use crate::error::Result;
use crate::grid::{softmax_backward, KernelSpec, LabelGrid, ProbGrid};
use crate::minimax::SimplexWeights;

#[derive(Debug, Clone)]
pub struct CombinedOutput {
    /// `total = unary + lambda * region`; the table is the multiscale one.
    pub value: LossValue,
    pub unary: f64,
    pub region: f64,
    /// Gradient over the pre-softmax logits (segmenter player).
    pub grad_logits: LossGrad,
    /// `dL/dw` for the weighting player (already scaled by lambda).
    pub grad_weights: Vec<f64>,
    pub grad_weight_logits: Vec<f64>,
}

/// Unary cross-entropy plus `lambda` times the multiscale affinity loss.
/// Only the region term depends on the weights.
pub fn combined_objective(
    pred: &ProbGrid,
    gt: &LabelGrid,
    ks: &KernelSpec,
    w: &SimplexWeights,
    hp: &HyperParams,
) -> Result<CombinedOutput> {
    let (unary, mut grad_logits) = unary_ce(pred, gt, hp)?;
    let aaf = multiscale_aaf(pred, gt, ks, w, hp)?;
    let chained = softmax_backward(pred, &aaf.grad_probs.values);
    for (g, a) in grad_logits.values.iter_mut().zip(&chained) {
        *g += hp.lambda * a;
    }
    let mut value = aaf.value;
    let region = value.total;
    value.total = unary.total + hp.lambda * region;
    Ok(CombinedOutput {
        value,
        unary: unary.total,
        region,
        grad_logits,
        grad_weights: aaf.grad_weights.iter().map(|g| hp.lambda * g).collect(),
        grad_weight_logits: aaf
            .grad_weight_logits
            .iter()
            .map(|g| hp.lambda * g)
            .collect(),
    })
}
