//! Segmentation metrics: pixel-wise mIoU, instance-weighted mIoU and
//! boundary precision / recall / F-measure.

mod boundary;
mod instances;

pub use boundary::{
    boundary_counts, boundary_prf, boundary_prf_per_class, BoundaryCounts, BoundaryMap, Prf,
};
pub use instances::{connected_components, instance_miou, InstanceAccumulator, InstanceSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::LabelGrid;

/// `counts[gt * C + pred]` = number of pixels with that (gt, pred) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_grids(pred: &LabelGrid, gt: &LabelGrid) -> Result<Self> {
        let mut m = Self::new(gt.num_classes());
        m.add(pred, gt)?;
        Ok(m)
    }

    pub fn add(&mut self, pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
        pred.same_shape(gt)?;
        let c = self.num_classes;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// IoU of class `c`, `None` if it appears in neither gt nor prediction.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let n = self.num_classes;
        let tp = self.get(c, c);
        let fn_: u64 = (0..n).filter(|&p| p != c).map(|p| self.get(c, p)).sum();
        let fp: u64 = (0..n).filter(|&g| g != c).map(|g| self.get(g, c)).sum();
        let denom = tp + fp + fn_;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let correct: u64 = (0..self.num_classes).map(|c| self.get(c, c)).sum();
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }

    /// Per-class IoU and their mean over present classes, skipping `ignore`.
    pub fn miou(&self, ignore: Option<usize>) -> MiouReport {
        let per_class: Vec<Option<f64>> = (0..self.num_classes)
            .map(|c| if Some(c) == ignore { None } else { self.iou(c) })
            .collect();
        MiouReport::from_per_class(per_class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    /// `None` for classes excluded from the mean.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

impl MiouReport {
    pub(crate) fn from_per_class(per_class: Vec<Option<f64>>) -> Self {
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        Self { per_class, mean }
    }
}

/// Pixel-wise IoU per class and its mean; classes absent from both grids are
/// excluded.
pub fn miou(pred: &LabelGrid, gt: &LabelGrid) -> Result<MiouReport> {
    Ok(ConfusionMatrix::from_grids(pred, gt)?.miou(None))
}
