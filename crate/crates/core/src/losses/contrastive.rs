use super::{HyperParams, LossGrad, LossValue, Term};
use crate::error::{shape_err, Result};
use crate::grid::{make_pairs, EmbedGrid, LabelGrid};

/// Contrastive pixel-embedding loss over the k×k window pairs.
///
/// Same-label pairs contribute `|f_j - f_i|²`, different-label pairs
/// `max(0, m - |f_j - f_i|²)` with `m = hp.contrastive_margin`. The two terms
/// are averaged over their own pair counts and summed. The table has a single
/// class row (index 0). The gradient is with respect to the vectors before
/// L2 normalization.
pub fn contrastive_loss(
    emb: &EmbedGrid,
    gt: &LabelGrid,
    k: usize,
    hp: &HyperParams,
) -> Result<(LossValue, LossGrad)> {
    if emb.height() != gt.height() || emb.width() != gt.width() {
        return Err(shape_err(format!(
            "embedding {}x{} vs ground truth {}x{}",
            emb.height(),
            emb.width(),
            gt.height(),
            gt.width()
        )));
    }
    hp.check()?;
    let ps = make_pairs(gt.height(), gt.width(), k)?;
    let d = emb.dim();
    let mut cnt = [0u64; 2];
    for &(i, j) in ps.pairs() {
        cnt[(gt.at(i as usize) != gt.at(j as usize)) as usize] += 1;
    }
    let scale = cnt.map(|c| if c > 0 { 1.0 / c as f64 } else { 0.0 });

    let mut sums = [0.0f64; 2];
    let mut grad_unit = vec![0.0; emb.vectors().len()];
    let mut diff = vec![0.0; d];
    for &(i, j) in ps.pairs() {
        let (i, j) = (i as usize, j as usize);
        let (fi, fj) = (emb.vector(i), emb.vector(j));
        let mut d2 = 0.0;
        for k in 0..d {
            diff[k] = fj[k] - fi[k];
            d2 += diff[k] * diff[k];
        }
        let coef = if gt.at(i) == gt.at(j) {
            sums[0] += d2;
            scale[0]
        } else {
            let v = hp.contrastive_margin - d2;
            if v > 0.0 {
                sums[1] += v;
                -scale[1]
            } else {
                0.0
            }
        };
        if coef != 0.0 {
            for k in 0..d {
                let g = 2.0 * coef * diff[k];
                grad_unit[j * d + k] += g;
                grad_unit[i * d + k] -= g;
            }
        }
    }
    let means = [sums[0] * scale[0], sums[1] * scale[1]];
    let grad = LossGrad {
        height: gt.height(),
        width: gt.width(),
        channels: d,
        values: emb.backward(&grad_unit),
    };
    let mut term_means = vec![0.0; 2];
    let mut pair_counts = vec![0; 2];
    for t in Term::ALL {
        term_means[t as usize] = means[t as usize];
        pair_counts[t as usize] = cnt[t as usize];
    }
    Ok((
        LossValue {
            total: means[0] + means[1],
            num_classes: 1,
            kernel_sizes: vec![k],
            term_means,
            pair_counts,
        },
        grad,
    ))
}
