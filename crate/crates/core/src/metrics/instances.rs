use std::collections::VecDeque;

use super::{ConfusionMatrix, MiouReport};
use crate::error::Result;
use crate::grid::LabelGrid;

/// 4-connected components of each class mask of a label map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSet {
    /// `instances[c]` lists the components of class `c`, each as sorted
    /// pixel indices.
    pub instances: Vec<Vec<Vec<u32>>>,
}

impl InstanceSet {
    pub fn count(&self, class: usize) -> usize {
        self.instances[class].len()
    }
}

/// Breadth-first 4-connected labelling of every class mask. Components are
/// discovered in row-major order of their first pixel.
pub fn connected_components(g: &LabelGrid) -> InstanceSet {
    let (h, w) = (g.height(), g.width());
    let mut seen = vec![false; g.len()];
    let mut instances = vec![Vec::new(); g.num_classes()];
    let mut queue = VecDeque::new();
    for start in 0..g.len() {
        if seen[start] {
            continue;
        }
        let c = g.at(start);
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i as u32);
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && g.at(j) == c {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        comp.sort_unstable();
        instances[c].push(comp);
    }
    InstanceSet { instances }
}

/// Accumulates `Σ_x n_{c,x} · U_{c,x}` and `Σ_x n_{c,x}` over images, where
/// `n_{c,x}` is the number of ground-truth components of class `c` in image
/// `x` and `U_{c,x}` that image's IoU for `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAccumulator {
    weighted_iou: Vec<f64>,
    instances: Vec<u64>,
}

impl InstanceAccumulator {
    pub fn new(num_classes: usize) -> Self {
        Self {
            weighted_iou: vec![0.0; num_classes],
            instances: vec![0; num_classes],
        }
    }

    pub fn add(&mut self, pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
        let cm = ConfusionMatrix::from_grids(pred, gt)?;
        let inst = connected_components(gt);
        for c in 0..self.instances.len() {
            let n = inst.count(c) as u64;
            if n > 0 {
                // gt contains c, so the IoU is defined
                self.weighted_iou[c] += n as f64 * cm.iou(c).unwrap_or(0.0);
                self.instances[c] += n;
            }
        }
        Ok(())
    }

    pub fn instance_counts(&self) -> &[u64] {
        &self.instances
    }

    /// Per-class `Û_c`; classes with no instances anywhere are `None`.
    pub fn report(&self, ignore: Option<usize>) -> MiouReport {
        let per_class = self
            .weighted_iou
            .iter()
            .zip(&self.instances)
            .enumerate()
            .map(|(c, (&s, &n))| (n > 0 && Some(c) != ignore).then(|| s / n as f64))
            .collect();
        MiouReport::from_per_class(per_class)
    }
}

/// Instance-weighted mIoU over a set of `(pred, gt)` image pairs.
pub fn instance_miou<'a, I>(pairs: I) -> Result<MiouReport>
where
    I: IntoIterator<Item = (&'a LabelGrid, &'a LabelGrid)>,
{
    let mut acc: Option<InstanceAccumulator> = None;
    for (pred, gt) in pairs {
        acc.get_or_insert_with(|| InstanceAccumulator::new(gt.num_classes()))
            .add(pred, gt)?;
    }
    Ok(acc.map_or_else(
        || MiouReport::from_per_class(Vec::new()),
        |a| a.report(None),
    ))
}
