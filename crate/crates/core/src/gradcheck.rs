//! Central finite-difference checks of every analytic gradient in the crate.
//!
//! Instances are drawn so that no hinge or ReLU sits within a small margin of
//! its kink; an instance that violates the margin is redrawn.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{make_pairs, EmbedGrid, FeatureMap, KernelSpec, LabelGrid, ProbGrid};
use crate::losses::raw::{affinity_loss_scores, multiscale_aaf_scores};
use crate::losses::{combined_objective, contrastive_loss, kl_bernoulli, unary_ce, HyperParams};
use crate::minimax::SimplexWeights;
use crate::rng::{substream, Stream};
use crate::segmenter::{backward, forward, ToySegmenter};

pub const DEFAULT_STEP: f64 = 1e-5;
/// Minimum distance of every hinge argument from its kink.
pub const HINGE_MARGIN: f64 = 1e-3;
/// Minimum |pre-activation| for ReLU inputs in the model check.
pub const RELU_MARGIN: f64 = 1e-4;
const SIDE: usize = 8;
const CLASSES: usize = 3;
const EMBED_DIM: usize = 4;
const MAX_REDRAWS: usize = 200;

/// Denominator floor of [`rel_err`]. Central differences of an O(1) loss at
/// step 1e-5 carry roundoff near `eps_mach * |f| / step`, about 1e-10, so
/// gradient entries much below 1e-6 cannot be resolved relatively; entries
/// under the floor are compared in absolute terms (`1e-4 * floor`) instead.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn central_difference<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut xp = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        xp[i] = x[i] + step;
        let fp = f(&xp)?;
        xp[i] = x[i] - step;
        let fm = f(&xp)?;
        xp[i] = x[i];
        out.push((fp - fm) / (2.0 * step));
    }
    Ok(out)
}

/// Largest [`rel_err`] between two gradient vectors.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub instances: usize,
    pub step: f64,
    /// Worst case per check over all instances.
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.checks.iter().all(|c| c.max_rel_err < tol)
    }
}

/// Checks on `instances` random 8×8, 3-class problems.
pub fn run_suite(seed: u64, instances: usize) -> Result<GradcheckReport> {
    let mut checks: Vec<CheckResult> = Vec::new();
    for i in 0..instances {
        for r in check_instance(seed, i as u64)? {
            match checks.iter_mut().find(|c| c.name == r.name) {
                Some(c) => {
                    c.coords += r.coords;
                    c.max_rel_err = c.max_rel_err.max(r.max_rel_err);
                }
                None => checks.push(r),
            }
        }
    }
    Ok(GradcheckReport {
        seed,
        instances,
        step: DEFAULT_STEP,
        checks,
    })
}

fn result(name: &str, analytic: &[f64], numeric: &[f64]) -> CheckResult {
    CheckResult {
        name: name.into(),
        coords: analytic.len(),
        max_rel_err: max_rel_err(analytic, numeric),
    }
}

/// All edge-pair KL values of every class channel for window `k`.
fn edge_kls(scores: &[f64], gt: &LabelGrid, k: usize, eps: f64) -> Result<Vec<f64>> {
    let c = gt.num_classes();
    let ps = make_pairs(gt.height(), gt.width(), k)?;
    let mut out = Vec::new();
    for &(i, j) in ps.pairs() {
        let (i, j) = (i as usize, j as usize);
        for class in 0..c {
            if (gt.at(i) == class) != (gt.at(j) == class) {
                out.push(kl_bernoulli(
                    scores[j * c + class],
                    scores[i * c + class],
                    eps,
                ));
            }
        }
    }
    Ok(out)
}

fn clear_of_hinge(scores: &[f64], gt: &LabelGrid, k: usize, hp: &HyperParams) -> Result<bool> {
    Ok(edge_kls(scores, gt, k, hp.kl_eps)?
        .iter()
        .all(|v| (v - hp.margin).abs() >= HINGE_MARGIN))
}

fn redraw<T, R: Rng, F: FnMut(&mut R) -> Result<Option<T>>>(
    rng: &mut R,
    what: &str,
    mut f: F,
) -> Result<T> {
    for _ in 0..MAX_REDRAWS {
        if let Some(v) = f(rng)? {
            return Ok(v);
        }
    }
    Err(Error::InvalidValue(format!(
        "could not draw a kink-free {what} instance"
    )))
}

fn normals<R: Rng>(rng: &mut R, n: usize, sigma: f64) -> Vec<f64> {
    let d = Normal::new(0.0, sigma).expect("valid sigma");
    (0..n).map(|_| d.sample(rng)).collect()
}

/// All checks on instance `index` of `seed`.
pub fn check_instance(seed: u64, index: u64) -> Result<Vec<CheckResult>> {
    let hp = HyperParams::default();
    let h = DEFAULT_STEP;
    let (hh, ww, c) = (SIDE, SIDE, CLASSES);
    let n = hh * ww;
    let mut rng = substream(seed, Stream::Check, index);
    let labels = (0..n).map(|_| rng.random_range(0..c as u16)).collect();
    let gt = LabelGrid::new(hh, ww, c, labels)?;
    let ks = KernelSpec::new(vec![3, 5])?;
    let mut out = Vec::new();

    // unary, through softmax
    let logits = normals(&mut rng, n * c, 1.0);
    let (_, g) = unary_ce(&ProbGrid::softmax(hh, ww, c, &logits)?, &gt, &hp)?;
    let num = central_difference(
        |x| {
            Ok(unary_ce(&ProbGrid::softmax(hh, ww, c, x)?, &gt, &hp)?
                .0
                .total)
        },
        &logits,
        h,
    )?;
    out.push(result("unary_ce/logits", &g.values, &num));

    // single-kernel affinity and multiscale, on raw scores
    let scores = redraw(&mut rng, "affinity", |r| {
        let s: Vec<f64> = (0..n * c).map(|_| r.random_range(0.05..0.95)).collect();
        Ok(clear_of_hinge(&s, &gt, 5, &hp)?.then_some(s))
    })?;
    for k in [3, 5] {
        let (_, g) = affinity_loss_scores(&scores, &gt, k, &hp)?;
        let num = central_difference(
            |x| Ok(affinity_loss_scores(x, &gt, k, &hp)?.0.total),
            &scores,
            h,
        )?;
        out.push(result(&format!("affinity_k{k}/probs"), &g.values, &num));
    }
    let wlog = normals(&mut rng, c * 2 * ks.len(), 1.0);
    let w = SimplexWeights::from_logits(c, ks.len(), wlog.clone())?;
    let aaf = multiscale_aaf_scores(&scores, &gt, &ks, &w, &hp)?;
    let num = central_difference(
        |x| Ok(multiscale_aaf_scores(x, &gt, &ks, &w, &hp)?.value.total),
        &scores,
        h,
    )?;
    out.push(result("multiscale_aaf/probs", &aaf.grad_probs.values, &num));
    let num = central_difference(
        |x| {
            let wx = SimplexWeights::from_logits(c, ks.len(), x.to_vec())?;
            Ok(multiscale_aaf_scores(&scores, &gt, &ks, &wx, &hp)?
                .value
                .total)
        },
        &wlog,
        h,
    )?;
    out.push(result(
        "multiscale_aaf/weight_logits",
        &aaf.grad_weight_logits,
        &num,
    ));

    // contrastive, on pre-normalization vectors
    let raw = redraw(&mut rng, "contrastive", |r| {
        let v = normals(r, n * EMBED_DIM, 1.0);
        let e = EmbedGrid::from_raw(hh, ww, EMBED_DIM, &v)?;
        if e.norms().iter().any(|&z| z < 0.1) {
            return Ok(None);
        }
        let ps = make_pairs(hh, ww, 3)?;
        let clear = ps.pairs().iter().all(|&(i, j)| {
            let (i, j) = (i as usize, j as usize);
            if gt.at(i) == gt.at(j) {
                return true;
            }
            let d2: f64 = e
                .vector(i)
                .iter()
                .zip(e.vector(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d2 - hp.contrastive_margin).abs() >= HINGE_MARGIN
        });
        Ok(clear.then_some(v))
    })?;
    let emb = EmbedGrid::from_raw(hh, ww, EMBED_DIM, &raw)?;
    let (_, g) = contrastive_loss(&emb, &gt, 3, &hp)?;
    let num = central_difference(
        |x| {
            Ok(
                contrastive_loss(&EmbedGrid::from_raw(hh, ww, EMBED_DIM, x)?, &gt, 3, &hp)?
                    .0
                    .total,
            )
        },
        &raw,
        h,
    )?;
    out.push(result("contrastive_k3/raw_embedding", &g.values, &num));

    // combined objective, through softmax
    let logits = redraw(&mut rng, "combined", |r| {
        let l = normals(r, n * c, 1.5);
        let p = ProbGrid::softmax(hh, ww, c, &l)?;
        Ok(clear_of_hinge(p.probs(), &gt, ks.max(), &hp)?.then_some(l))
    })?;
    let co = combined_objective(&ProbGrid::softmax(hh, ww, c, &logits)?, &gt, &ks, &w, &hp)?;
    let num = central_difference(
        |x| {
            Ok(
                combined_objective(&ProbGrid::softmax(hh, ww, c, x)?, &gt, &ks, &w, &hp)?
                    .value
                    .total,
            )
        },
        &logits,
        h,
    )?;
    out.push(result("combined/logits", &co.grad_logits.values, &num));

    // combined objective, through the segmenter's parameters
    let (model, x) = redraw(&mut rng, "segmenter", |r| {
        let model = ToySegmenter::new(3, c, r);
        let feats: Vec<f64> = (0..n * 3).map(|_| r.random_range(-1.0..1.0)).collect();
        let x = FeatureMap::new(hh, ww, 3, feats)?;
        let pass = forward(&model, &x)?;
        let relu_ok = pass.pre_activations().all(|z| z.abs() >= RELU_MARGIN);
        Ok(
            (relu_ok && clear_of_hinge(pass.probs.probs(), &gt, ks.max(), &hp)?)
                .then_some((model, x)),
        )
    })?;
    let pass = forward(&model, &x)?;
    let co = combined_objective(&pass.probs, &gt, &ks, &w, &hp)?;
    let grads = backward(&model, &pass, &co.grad_logits, None)?;
    let params = model.flat_params();
    let mut probe = model.clone();
    let num = central_difference(
        |p| {
            probe.set_flat_params(p)?;
            Ok(
                combined_objective(&forward(&probe, &x)?.probs, &gt, &ks, &w, &hp)?
                    .value
                    .total,
            )
        },
        &params,
        h,
    )?;
    out.push(result("combined/model_params", &grads.flat_params(), &num));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_central_difference() {
        let g = central_difference(|x| Ok(x[0] * x[0] + 3.0 * x[1]), &[2.0, -1.0], 1e-5).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert_eq!(rel_err(1e-9, 0.0), 1e-9 / REL_ERR_FLOOR);
        assert_eq!(rel_err(2.0, 1.0), 0.5);
    }

    #[test]
    fn one_instance_passes() {
        let r = check_instance(0, 0).unwrap();
        assert_eq!(r.len(), 8);
        for c in r {
            assert!(c.max_rel_err < 1e-4, "{}: {}", c.name, c.max_rel_err);
        }
    }
}
