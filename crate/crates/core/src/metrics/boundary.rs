use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::LabelGrid;

/// One-pixel-thick label transitions: a pixel is on the boundary when its
/// right or lower neighbor has a different label, so each transition between
/// two regions is marked once, on its upper / left side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMap {
    height: usize,
    width: usize,
    mask: Vec<bool>,
}

/// Labels across the transitions at pixel `i` (right and lower neighbors).
fn transitions(g: &LabelGrid, i: usize) -> [Option<usize>; 2] {
    let (h, w) = (g.height(), g.width());
    let c = g.at(i);
    let right = (i % w + 1 < w && g.at(i + 1) != c).then(|| g.at(i + 1));
    let down = (i / w + 1 < h && g.at(i + w) != c).then(|| g.at(i + w));
    [right, down]
}

impl BoundaryMap {
    pub fn from_labels(g: &LabelGrid) -> Self {
        let mask = (0..g.len())
            .map(|i| transitions(g, i).iter().any(Option::is_some))
            .collect();
        Self {
            height: g.height(),
            width: g.width(),
            mask,
        }
    }

    /// Keeps only the transitions that have `class` on one side.
    pub fn restricted_to(&self, g: &LabelGrid, class: usize) -> Self {
        let mask = self
            .mask
            .iter()
            .enumerate()
            .map(|(i, &m)| m && (g.at(i) == class || transitions(g, i).contains(&Some(class))))
            .collect();
        Self {
            height: self.height,
            width: self.width,
            mask,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    fn indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }
}

/// Raw matching counts; sum these across images before computing P/R/F.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryCounts {
    pub pred_total: u64,
    pub pred_matched: u64,
    pub gt_total: u64,
    pub gt_matched: u64,
}

impl AddAssign for BoundaryCounts {
    fn add_assign(&mut self, o: Self) {
        self.pred_total += o.pred_total;
        self.pred_matched += o.pred_matched;
        self.gt_total += o.gt_total;
        self.gt_matched += o.gt_matched;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl BoundaryCounts {
    /// Both sets empty gives P = R = F = 1; otherwise an empty set scores 0.
    pub fn prf(&self) -> Prf {
        if self.pred_total == 0 && self.gt_total == 0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f_measure: 1.0,
            };
        }
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.pred_matched, self.pred_total);
        let recall = ratio(self.gt_matched, self.gt_total);
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f_measure,
        }
    }
}

/// One-to-one greedy matching: candidate pairs within Chebyshev distance
/// `tol` are taken in order of (distance, pred index, gt index). Raising
/// `tol` only appends candidates, so matches never decrease.
fn match_maps(pred: &BoundaryMap, gt: &BoundaryMap, tol: usize) -> BoundaryCounts {
    let w = pred.width as isize;
    let h = pred.height as isize;
    let t = tol as isize;
    let mut cands: Vec<(usize, usize, usize)> = Vec::new();
    for p in pred.indices() {
        let (py, px) = ((p as isize) / w, (p as isize) % w);
        for y in (py - t).max(0)..=(py + t).min(h - 1) {
            for x in (px - t).max(0)..=(px + t).min(w - 1) {
                let g = (y * w + x) as usize;
                if gt.mask[g] {
                    let d = (y - py).abs().max((x - px).abs()) as usize;
                    cands.push((d, p, g));
                }
            }
        }
    }
    cands.sort_unstable();
    let mut pred_used = vec![false; pred.mask.len()];
    let mut gt_used = vec![false; gt.mask.len()];
    let mut matched = 0u64;
    for (_, p, g) in cands {
        if !pred_used[p] && !gt_used[g] {
            pred_used[p] = true;
            gt_used[g] = true;
            matched += 1;
        }
    }
    BoundaryCounts {
        pred_total: pred.count() as u64,
        pred_matched: matched,
        gt_total: gt.count() as u64,
        gt_matched: matched,
    }
}

/// Matching counts for one image; see [`boundary_prf`].
pub fn boundary_counts(pred: &LabelGrid, gt: &LabelGrid, tol: usize) -> Result<BoundaryCounts> {
    pred.same_shape(gt)?;
    Ok(match_maps(
        &BoundaryMap::from_labels(pred),
        &BoundaryMap::from_labels(gt),
        tol,
    ))
}

/// Boundary precision, recall and F-measure with Chebyshev tolerance `tol`.
pub fn boundary_prf(pred: &LabelGrid, gt: &LabelGrid, tol: usize) -> Result<Prf> {
    Ok(boundary_counts(pred, gt, tol)?.prf())
}

/// Per-class counts: both maps restricted to boundary pixels adjacent to
/// class `c` (in their own label map).
pub fn boundary_prf_per_class(
    pred: &LabelGrid,
    gt: &LabelGrid,
    tol: usize,
) -> Result<Vec<BoundaryCounts>> {
    pred.same_shape(gt)?;
    let (bp, bg) = (BoundaryMap::from_labels(pred), BoundaryMap::from_labels(gt));
    Ok((0..gt.num_classes())
        .map(|c| match_maps(&bp.restricted_to(pred, c), &bg.restricted_to(gt, c), tol))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halves(h: usize, w: usize, split: usize) -> LabelGrid {
        let labels = (0..h * w).map(|i| u16::from(i % w >= split)).collect();
        LabelGrid::new(h, w, 2, labels).unwrap()
    }

    #[test]
    fn constant_grid_has_no_boundary() {
        let g = LabelGrid::filled(4, 4, 3, 2).unwrap();
        assert!(BoundaryMap::from_labels(&g).is_empty());
        let prf = boundary_prf(&g, &g, 0).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f_measure), (1.0, 1.0, 1.0));
    }

    #[test]
    fn identity_is_perfect() {
        let g = halves(6, 6, 3);
        let prf = boundary_prf(&g, &g, 0).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f_measure), (1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_prediction_has_zero_recall() {
        let g = halves(6, 6, 3);
        let p = LabelGrid::filled(6, 6, 2, 0).unwrap();
        let prf = boundary_prf(&p, &g, 2).unwrap();
        assert_eq!(prf.recall, 0.0);
        assert_eq!(prf.f_measure, 0.0);
    }

    #[test]
    fn one_pixel_shift() {
        let g = halves(6, 8, 4);
        let p = halves(6, 8, 5);
        assert_eq!(boundary_prf(&p, &g, 0).unwrap().recall, 0.0);
        assert_eq!(boundary_prf(&p, &g, 1).unwrap().recall, 1.0);
    }

    #[test]
    fn per_class_restriction() {
        let g = LabelGrid::new(1, 4, 3, vec![0, 0, 1, 1]).unwrap();
        let counts = boundary_prf_per_class(&g, &g, 0).unwrap();
        assert_eq!(counts[0].gt_total, 1);
        assert_eq!(counts[1].gt_total, 1);
        assert_eq!(counts[2].gt_total, 0);
    }
}
