use super::{HyperParams, LossGrad, LossValue};
use crate::error::Result;
use crate::grid::{LabelGrid, ProbGrid};

/// Mean pixel-wise cross-entropy `-(1/n) Σ_i ln ŷ_i(l_i)` (probabilities
/// floored at `kl_eps`), with its gradient over the pre-softmax logits,
/// `(ŷ - onehot) / n`.
pub fn unary_ce(
    pred: &ProbGrid,
    gt: &LabelGrid,
    hp: &HyperParams,
) -> Result<(LossValue, LossGrad)> {
    pred.matches(gt)?;
    let c = pred.num_classes();
    let n = gt.len();
    let mut grad = LossGrad::zeros(gt.height(), gt.width(), c);
    if n == 0 {
        return Ok((LossValue::scalar(0.0), grad));
    }
    let inv_n = 1.0 / n as f64;
    let mut sum = 0.0;
    for (i, &l) in gt.labels().iter().enumerate() {
        let px = pred.pixel(i);
        let l = l as usize;
        sum -= px[l].max(hp.kl_eps).ln();
        let g = &mut grad.values[i * c..(i + 1) * c];
        for k in 0..c {
            g[k] = px[k] * inv_n;
        }
        g[l] -= inv_n;
    }
    Ok((LossValue::scalar(sum * inv_n), grad))
}
