use super::{HyperParams, LossGrad, LossValue, Term};
use crate::error::{shape_err, Error, Result};
use crate::grid::{make_pairs, KernelSpec, LabelGrid, PairSet, ProbGrid};
use crate::minimax::SimplexWeights;
use crate::par;

/// Result of the multiscale affinity loss.
#[derive(Debug, Clone)]
pub struct AafOutput {
    /// `total` is the weighted loss; the table holds the unweighted
    /// per-(class, kernel, term) means.
    pub value: LossValue,
    /// Gradient with respect to the class probabilities.
    pub grad_probs: LossGrad,
    /// `dL/dw`, laid out like [`SimplexWeights::weights`].
    pub grad_weights: Vec<f64>,
    /// `dL/dz` for the softmax logits behind the weights.
    pub grad_weight_logits: Vec<f64>,
}

/// Affinity field loss for a single kernel size.
///
/// For every class channel `c` and every ordered in-bounds pair `(i, j)` of
/// the k×k window, a pair whose ground-truth indicators `[l_i = c]` and
/// `[l_j = c]` agree adds `KL(ŷ_j(c) ‖ ŷ_i(c))` to the non-edge term;
/// otherwise it adds `max(0, m - KL(ŷ_j(c) ‖ ŷ_i(c)))` to the edge term.
/// Each (class, term) is averaged over its own pair count, and `total` is
/// the mean over classes of `edge + non-edge`.
///
/// The gradient is with respect to `pred`'s probabilities (both pixels of a
/// pair are differentiated; the hinge has zero subgradient at its kink).
pub fn affinity_loss(
    pred: &ProbGrid,
    gt: &LabelGrid,
    k: usize,
    hp: &HyperParams,
) -> Result<(LossValue, LossGrad)> {
    pred.matches(gt)?;
    affinity_loss_scores(pred.probs(), gt, k, hp)
}

/// [`affinity_loss`] on a raw H×W×C score buffer.
pub fn affinity_loss_scores(
    scores: &[f64],
    gt: &LabelGrid,
    k: usize,
    hp: &HyperParams,
) -> Result<(LossValue, LossGrad)> {
    let ks = KernelSpec::single(k)?;
    let ones = SimplexWeights::uniform(gt.num_classes(), 1);
    let (value, grad) = weighted_affinity(scores, gt, &ks, &ones, hp)?;
    Ok((value, grad))
}

/// Multiscale affinity loss with per-class, per-term simplex weights over
/// kernel sizes:
///
/// `L = (1/C) Σ_c Σ_k (w[c, nonedge, k] · N[c, k] + w[c, edge, k] · E[c, k])`
///
/// where `N` and `E` are the single-kernel term means of [`affinity_loss`].
/// With one-hot weights on a kernel this equals that kernel's
/// `affinity_loss` exactly.
pub fn multiscale_aaf(
    pred: &ProbGrid,
    gt: &LabelGrid,
    ks: &KernelSpec,
    w: &SimplexWeights,
    hp: &HyperParams,
) -> Result<AafOutput> {
    pred.matches(gt)?;
    multiscale_aaf_scores(pred.probs(), gt, ks, w, hp)
}

/// [`multiscale_aaf`] on a raw H×W×C score buffer.
pub fn multiscale_aaf_scores(
    scores: &[f64],
    gt: &LabelGrid,
    ks: &KernelSpec,
    w: &SimplexWeights,
    hp: &HyperParams,
) -> Result<AafOutput> {
    let (value, grad_probs) = weighted_affinity(scores, gt, ks, w, hp)?;
    let c = gt.num_classes();
    let nk = ks.len();
    let mut grad_weights = vec![0.0; c * 2 * nk];
    for class in 0..c {
        for (ki, _) in ks.sizes().iter().enumerate() {
            for term in Term::ALL {
                grad_weights[w.index(class, term, ki)] = value.mean(class, ki, term) / c as f64;
            }
        }
    }
    let grad_weight_logits = w.chain_to_logits(&grad_weights);
    Ok(AafOutput {
        value,
        grad_probs,
        grad_weights,
        grad_weight_logits,
    })
}

struct ClassBlock {
    means: Vec<f64>,
    counts: Vec<u64>,
    grad: Vec<f64>,
}

fn weighted_affinity(
    scores: &[f64],
    gt: &LabelGrid,
    ks: &KernelSpec,
    w: &SimplexWeights,
    hp: &HyperParams,
) -> Result<(LossValue, LossGrad)> {
    hp.check()?;
    let nc = gt.num_classes();
    let n = gt.len();
    if scores.len() != n * nc {
        return Err(shape_err(format!(
            "{} scores for a {}x{}x{nc} grid",
            scores.len(),
            gt.height(),
            gt.width()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("class scores".into()));
    }
    if w.num_classes() != nc || w.num_kernels() != ks.len() {
        return Err(shape_err(format!(
            "weights cover {} classes x {} kernels, loss needs {nc} x {}",
            w.num_classes(),
            w.num_kernels(),
            ks.len()
        )));
    }
    for row in w.weights().chunks_exact(ks.len()) {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidValue(format!(
                "weights off the simplex: {row:?}"
            )));
        }
    }

    let pair_sets = ks
        .sizes()
        .iter()
        .map(|&k| make_pairs(gt.height(), gt.width(), k))
        .collect::<Result<Vec<_>>>()?;

    let blocks = par::map_indexed(nc, |c| class_block(scores, nc, gt, c, &pair_sets, w, hp));

    let nk = ks.len();
    let mut term_means = Vec::with_capacity(nc * nk * 2);
    let mut pair_counts = Vec::with_capacity(nc * nk * 2);
    let mut total = 0.0;
    let mut grad = LossGrad::zeros(gt.height(), gt.width(), nc);
    for (c, block) in blocks.iter().enumerate() {
        term_means.extend_from_slice(&block.means);
        pair_counts.extend_from_slice(&block.counts);
        let mut class_total = 0.0;
        for ki in 0..nk {
            for term in Term::ALL {
                class_total += w.get(c, term, ki) * block.means[ki * 2 + term as usize];
            }
        }
        total += class_total;
        for (i, g) in block.grad.iter().enumerate() {
            grad.values[i * nc + c] = *g;
        }
    }
    total /= nc as f64;
    Ok((
        LossValue {
            total,
            num_classes: nc,
            kernel_sizes: ks.sizes().to_vec(),
            term_means,
            pair_counts,
        },
        grad,
    ))
}

fn class_block(
    scores: &[f64],
    nc: usize,
    gt: &LabelGrid,
    c: usize,
    pair_sets: &[PairSet],
    w: &SimplexWeights,
    hp: &HyperParams,
) -> ClassBlock {
    let n = gt.len();
    let eps = hp.kl_eps;
    let mut p = Vec::with_capacity(n);
    let mut unclamped = Vec::with_capacity(n);
    for i in 0..n {
        let s = scores[i * nc + c];
        let pc = s.clamp(eps, 1.0 - eps);
        p.push(pc);
        unclamped.push(pc == s);
    }
    let lp: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    let l1p: Vec<f64> = p.iter().map(|v| (1.0 - v).ln()).collect();
    let member: Vec<bool> = gt.labels().iter().map(|&l| l as usize == c).collect();

    let inv_classes = 1.0 / nc as f64;
    let mut means = Vec::with_capacity(pair_sets.len() * 2);
    let mut counts = Vec::with_capacity(pair_sets.len() * 2);
    let mut grad = vec![0.0; n];
    for (ki, ps) in pair_sets.iter().enumerate() {
        let mut cnt = [0u64; 2];
        for &(i, j) in ps.pairs() {
            let same = member[i as usize] == member[j as usize];
            cnt[!same as usize] += 1;
        }
        // d total / d term-sum for each term
        let mut scale = [0.0; 2];
        for term in Term::ALL {
            let t = term as usize;
            if cnt[t] > 0 {
                scale[t] = w.get(c, term, ki) * inv_classes / cnt[t] as f64;
            }
        }
        let mut sums = [0.0f64; 2];
        for &(i, j) in ps.pairs() {
            let (i, j) = (i as usize, j as usize);
            let kl = p[j] * (lp[j] - lp[i]) + (1.0 - p[j]) * (l1p[j] - l1p[i]);
            let (t, dscale) = if member[i] == member[j] {
                sums[0] += kl;
                (0, 1.0)
            } else {
                let v = hp.margin - kl;
                if v > 0.0 {
                    sums[1] += v;
                    (1, -1.0)
                } else {
                    (1, 0.0)
                }
            };
            let s = scale[t] * dscale;
            if s != 0.0 {
                let d_pj = (lp[j] - lp[i]) - (l1p[j] - l1p[i]);
                let d_pi = -p[j] / p[i] + (1.0 - p[j]) / (1.0 - p[i]);
                grad[j] += s * d_pj;
                grad[i] += s * d_pi;
            }
        }
        for t in 0..2 {
            means.push(if cnt[t] > 0 {
                sums[t] / cnt[t] as f64
            } else {
                0.0
            });
            counts.push(cnt[t]);
        }
    }
    for (g, &ok) in grad.iter_mut().zip(&unclamped) {
        if !ok {
            *g = 0.0;
        }
    }
    ClassBlock {
        means,
        counts,
        grad,
    }
}

/// Per-pixel view of the single-kernel affinity loss: for each center pixel,
/// the mean over its window pairs and over classes of the pair terms
/// (KL for agreeing pairs, hinge for disagreeing ones).
pub fn affinity_pixel_map(
    pred: &ProbGrid,
    gt: &LabelGrid,
    k: usize,
    hp: &HyperParams,
) -> Result<Vec<f64>> {
    pred.matches(gt)?;
    hp.check()?;
    let ps = make_pairs(gt.height(), gt.width(), k)?;
    let nc = gt.num_classes();
    let eps = hp.kl_eps;
    let mut sum = vec![0.0; gt.len()];
    let mut cnt = vec![0u32; gt.len()];
    for &(i, j) in ps.pairs() {
        let (i, j) = (i as usize, j as usize);
        cnt[i] += 1;
        for c in 0..nc {
            let kl = super::kl_bernoulli(pred.get(j, c), pred.get(i, c), eps);
            let same = (gt.at(i) == c) == (gt.at(j) == c);
            sum[i] += if same { kl } else { (hp.margin - kl).max(0.0) };
        }
    }
    Ok(sum
        .iter()
        .zip(&cnt)
        .map(|(s, &n)| {
            if n > 0 {
                s / (n as f64 * nc as f64)
            } else {
                0.0
            }
        })
        .collect())
}
