//! The weighting player of the segmentation minimax game: per-class,
//! per-term weight vectors over kernel sizes, kept on the probability simplex
//! and updated by gradient ascent on the multiscale affinity loss.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::grid::KernelSpec;
use crate::losses::Term;

/// Softmax logits are re-centered so the largest is 0 and floored here, which
/// keeps every weight ≥ e^-50 > 0.
const LOGIT_FLOOR: f64 = -50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    #[default]
    SoftmaxLogits,
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum UpdateScheme {
    /// One weight step per segmenter step, both from the same forward pass.
    #[default]
    Simultaneous,
    /// One weight step every `n` segmenter steps.
    Alternating(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Ascent,
    /// Minimizes the loss over the weights; only used to exhibit the
    /// degenerate weightings that plain minimization converges to.
    Descent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimaxConfig {
    pub w_lr: f64,
    pub update_scheme: UpdateScheme,
    pub parametrization: Parametrization,
    pub direction: Direction,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        Self {
            w_lr: 0.01,
            update_scheme: UpdateScheme::Simultaneous,
            parametrization: Parametrization::SoftmaxLogits,
            direction: Direction::Ascent,
        }
    }
}

impl MinimaxConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.w_lr.is_finite() && self.w_lr > 0.0) {
            errs.push(format!(
                "minimax.w_lr must be finite and > 0 (got {})",
                self.w_lr
            ));
        }
        if let UpdateScheme::Alternating(0) = self.update_scheme {
            errs.push("minimax.update_scheme: alternating n must be >= 1".into());
        }
        errs
    }

    /// Whether the weights are stepped after segmenter iteration `iter`.
    pub fn updates_at(&self, iter: usize) -> bool {
        match self.update_scheme {
            UpdateScheme::Simultaneous => true,
            UpdateScheme::Alternating(n) => (iter + 1) % n.max(1) == 0,
        }
    }
}

/// Weight tables indexed `(class, term, kernel)`; each `(class, term)` row is
/// a point on the simplex over kernel sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexWeights {
    num_classes: usize,
    num_kernels: usize,
    logits: Vec<f64>,
    weights: Vec<f64>,
}

impl SimplexWeights {
    /// Zero logits: every row uniform.
    pub fn uniform(num_classes: usize, num_kernels: usize) -> Self {
        Self::from_logits(
            num_classes,
            num_kernels,
            vec![0.0; num_classes * 2 * num_kernels],
        )
        .expect("zero logits are valid")
    }

    pub fn from_logits(num_classes: usize, num_kernels: usize, logits: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || num_kernels == 0 || logits.len() != num_classes * 2 * num_kernels {
            return Err(shape_err(format!(
                "{} logits for {num_classes} classes x 2 terms x {num_kernels} kernels",
                logits.len()
            )));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("weight logits".into()));
        }
        let mut w = Self {
            num_classes,
            num_kernels,
            weights: vec![0.0; logits.len()],
            logits,
        };
        w.refresh_softmax();
        Ok(w)
    }

    /// Takes weights directly; every row must lie on the simplex within 1e-6.
    pub fn from_weights(num_classes: usize, num_kernels: usize, weights: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || num_kernels == 0 || weights.len() != num_classes * 2 * num_kernels {
            return Err(shape_err(format!(
                "{} weights for {num_classes} classes x 2 terms x {num_kernels} kernels",
                weights.len()
            )));
        }
        for (r, row) in weights.chunks_exact(num_kernels).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidValue(format!(
                    "weight row {r} is off the simplex: {row:?}"
                )));
            }
        }
        let logits = weights
            .iter()
            .map(|&v| v.max(f64::MIN_POSITIVE).ln())
            .collect();
        Ok(Self {
            num_classes,
            num_kernels,
            logits,
            weights,
        })
    }

    fn refresh_softmax(&mut self) {
        for (z, w) in self
            .logits
            .chunks_exact(self.num_kernels)
            .zip(self.weights.chunks_exact_mut(self.num_kernels))
        {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (wk, &zk) in w.iter_mut().zip(z) {
                *wk = (zk - max).exp();
                sum += *wk;
            }
            for wk in w.iter_mut() {
                *wk /= sum;
            }
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_kernels(&self) -> usize {
        self.num_kernels
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn index(&self, class: usize, term: Term, kernel: usize) -> usize {
        (class * 2 + term as usize) * self.num_kernels + kernel
    }

    #[inline]
    pub fn get(&self, class: usize, term: Term, kernel: usize) -> f64 {
        self.weights[self.index(class, term, kernel)]
    }

    pub fn row(&self, class: usize, term: Term) -> &[f64] {
        let start = self.index(class, term, 0);
        &self.weights[start..start + self.num_kernels]
    }

    /// Chains `dL/dw` through the per-row softmax: `dL/dz = w * (g - <w, g>)`.
    pub fn chain_to_logits(&self, grad_w: &[f64]) -> Vec<f64> {
        let k = self.num_kernels;
        let mut out = vec![0.0; grad_w.len()];
        for ((o, w), g) in out
            .chunks_exact_mut(k)
            .zip(self.weights.chunks_exact(k))
            .zip(grad_w.chunks_exact(k))
        {
            let dot: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
            for i in 0..k {
                o[i] = w[i] * (g[i] - dot);
            }
        }
        out
    }
}

/// Euclidean projection of `v` onto the probability simplex (sort-based).
pub fn project_to_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// One step of the weighting player on `grad_w = dL/dw`.
///
/// Under [`Parametrization::SoftmaxLogits`] the logits move by `w_lr * dL/dw`
/// (equivalently, the softmax-chained gradient preconditioned by the inverse
/// Fisher metric of the softmax), i.e. a multiplicative-weights step
/// `w ∝ w * exp(w_lr * g)`. Under [`Parametrization::Projected`] the weights
/// take a plain gradient step and are projected back onto the simplex.
pub fn ascend_weights(
    w: &SimplexWeights,
    grad_w: &[f64],
    cfg: &MinimaxConfig,
) -> Result<SimplexWeights> {
    if grad_w.len() != w.weights.len() {
        return Err(shape_err(format!(
            "weight gradient of length {} for {} weights",
            grad_w.len(),
            w.weights.len()
        )));
    }
    if grad_w.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("weight gradient".into()));
    }
    let step = match cfg.direction {
        Direction::Ascent => cfg.w_lr,
        Direction::Descent => -cfg.w_lr,
    };
    let k = w.num_kernels;
    let mut next = w.clone();
    match cfg.parametrization {
        Parametrization::SoftmaxLogits => {
            for (z, g) in next.logits.chunks_exact_mut(k).zip(grad_w.chunks_exact(k)) {
                for (zi, gi) in z.iter_mut().zip(g) {
                    *zi += step * gi;
                }
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for zi in z.iter_mut() {
                    *zi = (*zi - max).max(LOGIT_FLOOR);
                }
            }
            next.refresh_softmax();
        }
        Parametrization::Projected => {
            for (row, g) in next.weights.chunks_exact_mut(k).zip(grad_w.chunks_exact(k)) {
                for (wi, gi) in row.iter_mut().zip(g) {
                    *wi += step * gi;
                }
                project_to_simplex(row);
            }
            for (z, &v) in next.logits.iter_mut().zip(&next.weights) {
                *z = v.max(f64::MIN_POSITIVE).ln();
            }
        }
    }
    Ok(next)
}

/// Weighted mean kernel size `Σ_k w[c, term, k] · k`.
pub fn effective_kernel_size(
    w: &SimplexWeights,
    ks: &KernelSpec,
    class: usize,
    term: Term,
) -> Result<f64> {
    if class >= w.num_classes {
        return Err(Error::ClassOutOfRange {
            label: class,
            num_classes: w.num_classes,
        });
    }
    if ks.len() != w.num_kernels {
        return Err(shape_err(format!(
            "{} kernel sizes for weights over {} kernels",
            ks.len(),
            w.num_kernels
        )));
    }
    Ok(w.row(class, term)
        .iter()
        .zip(ks.sizes())
        .map(|(wk, &k)| wk * k as f64)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks(v: &[usize]) -> KernelSpec {
        KernelSpec::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let w = SimplexWeights::from_logits(
            2,
            3,
            vec![0.1, -0.4, 0.3, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -2.0, 2.0, 0.5],
        )
        .unwrap();
        for p in [Parametrization::SoftmaxLogits, Parametrization::Projected] {
            let cfg = MinimaxConfig {
                parametrization: p,
                ..Default::default()
            };
            let next = ascend_weights(&w, &[0.0; 12], &cfg).unwrap();
            for (a, b) in next.weights().iter().zip(w.weights()) {
                assert!((a - b).abs() < 1e-15, "{p:?}");
            }
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let w = SimplexWeights::uniform(1, 2);
        let cfg = MinimaxConfig::default();
        assert!(ascend_weights(&w, &[0.0, 0.0, f64::NAN, 0.0], &cfg).is_err());
        assert!(ascend_weights(&w, &[0.0; 3], &cfg).is_err());
    }

    #[test]
    fn effective_size_examples() {
        let w = SimplexWeights::from_weights(1, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(
            effective_kernel_size(&w, &ks(&[3, 5]), 0, Term::Edge).unwrap(),
            4.0
        );
        let w = SimplexWeights::from_weights(1, 3, vec![0.0, 0.0, 1.0, 0.2, 0.3, 0.5]).unwrap();
        assert_eq!(
            effective_kernel_size(&w, &ks(&[3, 5, 7]), 0, Term::NonEdge).unwrap(),
            7.0
        );
        let e = effective_kernel_size(&w, &ks(&[3, 5, 7]), 0, Term::Edge).unwrap();
        // 0.2*3 + 0.3*5 + 0.5*7
        assert!((e - 5.6).abs() < 1e-12);
        assert!(effective_kernel_size(&w, &ks(&[3, 5, 7]), 1, Term::Edge).is_err());
    }

    #[test]
    fn projection_examples() {
        let mut v = [0.5, 0.5];
        project_to_simplex(&mut v);
        assert_eq!(v, [0.5, 0.5]);
        let mut v = [2.0, 0.0, 0.0];
        project_to_simplex(&mut v);
        assert_eq!(v, [1.0, 0.0, 0.0]);
        let mut v = [0.6, 0.6];
        project_to_simplex(&mut v);
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn alternating_schedule() {
        let cfg = MinimaxConfig {
            update_scheme: UpdateScheme::Alternating(3),
            ..Default::default()
        };
        let hits: Vec<usize> = (0..9).filter(|&i| cfg.updates_at(i)).collect();
        assert_eq!(hits, vec![2, 5, 8]);
        assert!(
            MinimaxConfig {
                update_scheme: UpdateScheme::Alternating(0),
                ..Default::default()
            }
            .validate()
            .len()
                == 1
        );
    }
}
