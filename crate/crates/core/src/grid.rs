//! Grid types shared by every other module: label maps, per-pixel class
//! probabilities, pixel embeddings, input features and the k×k neighborhood
//! geometry used by the pairwise losses.
//!
//! All grids are stored row-major with channels last, so pixel `i = y * width + x`
//! owns the slice `[i * channels, (i + 1) * channels)`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

const PROB_SUM_TOL: f64 = 1e-6;

/// An H×W map of class ids in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u16>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(shape_err(format!(
                "{} labels for a {height}x{width} grid",
                labels.len()
            )));
        }
        if num_classes == 0 || num_classes > u16::MAX as usize + 1 {
            return Err(Error::InvalidValue(format!("num_classes = {num_classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::ClassOutOfRange {
                label: bad as usize,
                num_classes,
            });
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    /// A grid filled with a single class.
    pub fn filled(height: usize, width: usize, num_classes: usize, label: u16) -> Result<Self> {
        Self::new(height, width, num_classes, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    #[inline]
    pub fn at(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn same_shape(&self, other: &LabelGrid) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(shape_err(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        if self.num_classes != other.num_classes {
            return Err(shape_err(format!(
                "{} classes vs {} classes",
                self.num_classes, other.num_classes
            )));
        }
        Ok(())
    }

    /// Relabels every pixel through `perm` (class `c` becomes `perm[c]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_classes)?;
        let labels = self
            .labels
            .iter()
            .map(|&l| perm[l as usize] as u16)
            .collect();
        Self::new(self.height, self.width, self.num_classes, labels)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(shape_err(format!(
            "permutation of length {} for {n} classes",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidValue(format!(
                "{perm:?} is not a permutation"
            )));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Per-pixel categorical distributions over `num_classes` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbGrid {
    height: usize,
    width: usize,
    num_classes: usize,
    probs: Vec<f64>,
}

impl ProbGrid {
    pub fn new(height: usize, width: usize, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(height, width, num_classes, probs, PROB_SUM_TOL)
    }

    pub(crate) fn with_tolerance(
        height: usize,
        width: usize,
        num_classes: usize,
        probs: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidValue("num_classes = 0".into()));
        }
        if probs.len() != height * width * num_classes {
            return Err(shape_err(format!(
                "{} probabilities for a {height}x{width}x{num_classes} grid",
                probs.len()
            )));
        }
        for (i, px) in probs.chunks_exact(num_classes).enumerate() {
            if px.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidValue(format!(
                    "pixel {i}: probability outside [0, 1]"
                )));
            }
            let s: f64 = px.iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::InvalidValue(format!(
                    "pixel {i}: probabilities sum to {s}"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            num_classes,
            probs,
        })
    }

    /// Row-wise softmax of H×W×C logits.
    pub fn softmax(
        height: usize,
        width: usize,
        num_classes: usize,
        logits: &[f64],
    ) -> Result<Self> {
        if logits.len() != height * width * num_classes || num_classes == 0 {
            return Err(shape_err(format!(
                "{} logits for a {height}x{width}x{num_classes} grid",
                logits.len()
            )));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        let mut probs = Vec::with_capacity(logits.len());
        for px in logits.chunks_exact(num_classes) {
            let max = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = probs.len();
            let mut sum = 0.0;
            for &z in px {
                let e = (z - max).exp();
                sum += e;
                probs.push(e);
            }
            for p in &mut probs[start..] {
                *p /= sum;
            }
        }
        Ok(Self {
            height,
            width,
            num_classes,
            probs,
        })
    }

    /// The same categorical distribution at every pixel.
    pub fn constant(height: usize, width: usize, dist: &[f64]) -> Result<Self> {
        let mut probs = Vec::with_capacity(height * width * dist.len());
        for _ in 0..height * width {
            probs.extend_from_slice(dist);
        }
        Self::new(height, width, dist.len(), probs)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn get(&self, pixel: usize, class: usize) -> f64 {
        self.probs[pixel * self.num_classes + class]
    }

    pub fn pixel(&self, pixel: usize) -> &[f64] {
        &self.probs[pixel * self.num_classes..(pixel + 1) * self.num_classes]
    }

    /// Per-pixel argmax; ties resolve to the lowest class id.
    pub fn argmax(&self) -> LabelGrid {
        let labels = self
            .probs
            .chunks_exact(self.num_classes)
            .map(|px| {
                let mut best = 0;
                for (c, &p) in px.iter().enumerate() {
                    if p > px[best] {
                        best = c;
                    }
                }
                best as u16
            })
            .collect();
        LabelGrid {
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            labels,
        }
    }

    pub fn matches(&self, gt: &LabelGrid) -> Result<()> {
        if self.height != gt.height() || self.width != gt.width() {
            return Err(shape_err(format!(
                "prediction {}x{} vs ground truth {}x{}",
                self.height,
                self.width,
                gt.height(),
                gt.width()
            )));
        }
        if self.num_classes != gt.num_classes() {
            return Err(shape_err(format!(
                "prediction has {} classes, ground truth {}",
                self.num_classes,
                gt.num_classes()
            )));
        }
        Ok(())
    }

    /// Swaps class channels so channel `c` moves to `perm[c]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_classes)?;
        let mut probs = vec![0.0; self.probs.len()];
        for (dst, src) in probs
            .chunks_exact_mut(self.num_classes)
            .zip(self.probs.chunks_exact(self.num_classes))
        {
            for (c, &p) in src.iter().enumerate() {
                dst[perm[c]] = p;
            }
        }
        Ok(Self {
            probs,
            ..self.clone()
        })
    }
}

/// Indicator encoding of a label map: `probs[i, c] = 1` iff `labels[i] = c`.
pub fn one_hot(g: &LabelGrid) -> ProbGrid {
    smoothed_one_hot(g, 0.0)
}

/// One-hot encoding pulled off the simplex corners: the true class gets
/// `1 - (C - 1) * eps` and every other class `eps`.
pub fn smoothed_one_hot(g: &LabelGrid, eps: f64) -> ProbGrid {
    let c = g.num_classes();
    let mut probs = vec![eps; g.len() * c];
    for (i, &l) in g.labels().iter().enumerate() {
        probs[i * c + l as usize] = 1.0 - (c - 1) as f64 * eps;
    }
    ProbGrid {
        height: g.height(),
        width: g.width(),
        num_classes: c,
        probs,
    }
}

/// Chains a gradient with respect to softmax outputs back to the logits:
/// `dz = p * (dp - <p, dp>)` per pixel.
pub fn softmax_backward(pred: &ProbGrid, grad_probs: &[f64]) -> Vec<f64> {
    let c = pred.num_classes();
    let mut out = vec![0.0; grad_probs.len()];
    for ((o, p), g) in out
        .chunks_exact_mut(c)
        .zip(pred.probs().chunks_exact(c))
        .zip(grad_probs.chunks_exact(c))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for k in 0..c {
            o[k] = p[k] * (g[k] - dot);
        }
    }
    out
}

/// Per-pixel L2-normalized feature vectors.
///
/// The pre-normalization norms are retained so gradients can be chained back
/// through the normalization. An all-zero input vector stays zero (its norm is
/// recorded as 0 and it receives no gradient).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedGrid {
    height: usize,
    width: usize,
    dim: usize,
    vectors: Vec<f64>,
    norms: Vec<f64>,
}

impl EmbedGrid {
    pub fn from_raw(height: usize, width: usize, dim: usize, raw: &[f64]) -> Result<Self> {
        if dim == 0 || raw.len() != height * width * dim {
            return Err(shape_err(format!(
                "{} values for a {height}x{width}x{dim} embedding",
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding".into()));
        }
        let mut vectors = Vec::with_capacity(raw.len());
        let mut norms = Vec::with_capacity(height * width);
        for v in raw.chunks_exact(dim) {
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            norms.push(n);
            if n > 0.0 {
                vectors.extend(v.iter().map(|a| a / n));
            } else {
                vectors.extend(std::iter::repeat_n(0.0, dim));
            }
        }
        Ok(Self {
            height,
            width,
            dim,
            vectors,
            norms,
        })
    }

    /// Builds a grid from vectors that are already unit length (within `tol`).
    pub(crate) fn from_unit(
        height: usize,
        width: usize,
        dim: usize,
        vectors: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        if dim == 0 || vectors.len() != height * width * dim {
            return Err(shape_err(format!(
                "{} values for a {height}x{width}x{dim} embedding",
                vectors.len()
            )));
        }
        let mut norms = Vec::with_capacity(height * width);
        for (i, v) in vectors.chunks_exact(dim).enumerate() {
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n != 0.0 && (n - 1.0).abs() > tol {
                return Err(Error::InvalidValue(format!(
                    "pixel {i}: embedding norm {n}"
                )));
            }
            norms.push(if n == 0.0 { 0.0 } else { 1.0 });
        }
        Ok(Self {
            height,
            width,
            dim,
            vectors,
            norms,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn vector(&self, pixel: usize) -> &[f64] {
        &self.vectors[pixel * self.dim..(pixel + 1) * self.dim]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Chains a gradient with respect to the unit vectors back to the raw
    /// vectors: `dv = (g - f <f, g>) / |v|`.
    pub fn backward(&self, grad_unit: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; grad_unit.len()];
        for (i, (o, g)) in out
            .chunks_exact_mut(d)
            .zip(grad_unit.chunks_exact(d))
            .enumerate()
        {
            let n = self.norms[i];
            if n == 0.0 {
                continue;
            }
            let f = self.vector(i);
            let dot: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
            for k in 0..d {
                o[k] = (g[k] - f[k] * dot) / n;
            }
        }
        out
    }
}

/// H×W×F input features for the segmenter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || values.len() != height * width * channels {
            return Err(shape_err(format!(
                "{} values for a {height}x{width}x{channels} feature map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, pixel: usize) -> &[f64] {
        &self.values[pixel * self.channels..(pixel + 1) * self.channels]
    }
}

/// Sorted, distinct, odd neighborhood sizes (each ≥ 3).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct KernelSpec {
    sizes: Vec<usize>,
}

impl KernelSpec {
    pub fn new(mut sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidValue("empty kernel set".into()));
        }
        for &k in &sizes {
            check_kernel(k)?;
        }
        sizes.sort_unstable();
        if sizes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidValue(format!(
                "duplicate kernel sizes in {sizes:?}"
            )));
        }
        Ok(Self { sizes })
    }

    pub fn single(k: usize) -> Result<Self> {
        Self::new(vec![k])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn min(&self) -> usize {
        self.sizes[0]
    }

    pub fn max(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }
}

impl TryFrom<Vec<usize>> for KernelSpec {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<KernelSpec> for Vec<usize> {
    fn from(k: KernelSpec) -> Self {
        k.sizes
    }
}

pub(crate) fn check_kernel(k: usize) -> Result<()> {
    if k < 3 || k % 2 == 0 {
        return Err(Error::InvalidKernel(k));
    }
    Ok(())
}

/// Ordered (center, neighbor) pixel pairs of a k×k window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pairs: Vec<(u32, u32)>,
}

impl PairSet {
    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Enumerates every in-bounds (i, j) with j in the k×k window centered at i
/// and j ≠ i. Centers are visited row-major, and offsets row-major within
/// each window. Out-of-bounds neighbors are dropped.
pub fn make_pairs(height: usize, width: usize, k: usize) -> Result<PairSet> {
    check_kernel(k)?;
    let r = (k / 2) as isize;
    let (h, w) = (height as isize, width as isize);
    let mut pairs = Vec::with_capacity(height * width * (k * k - 1));
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as u32;
            for dy in -r..=r {
                let ny = y + dy;
                if ny < 0 || ny >= h {
                    continue;
                }
                for dx in -r..=r {
                    let nx = x + dx;
                    if (dy == 0 && dx == 0) || nx < 0 || nx >= w {
                        continue;
                    }
                    pairs.push((i, (ny * w + nx) as u32));
                }
            }
        }
    }
    Ok(PairSet {
        height,
        width,
        k,
        pairs,
    })
}
