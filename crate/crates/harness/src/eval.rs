use affield::metrics::{
    boundary_counts, boundary_prf_per_class, BoundaryCounts, ConfusionMatrix, InstanceAccumulator,
    MiouReport, Prf,
};
use affield::segmenter::predict;
use affield::synthdata::SynthScene;
use affield::{LabelGrid, ToySegmenter};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub miou: MiouReport,
    pub instance_miou: MiouReport,
    pub pixel_accuracy: f64,
    pub boundary_tol: usize,
    pub boundary: Prf,
    pub boundary_counts: BoundaryCounts,
    pub boundary_per_class: Vec<Prf>,
}

/// Scores `(pred, gt)` pairs; counts are pooled over all images before
/// ratios are taken.
pub fn evaluate_pairs<'a, I>(pairs: I, tol: usize, ignore: Option<usize>) -> Result<FinalMetrics>
where
    I: IntoIterator<Item = (&'a LabelGrid, &'a LabelGrid)>,
{
    let mut state: Option<(ConfusionMatrix, InstanceAccumulator, Vec<BoundaryCounts>)> = None;
    let mut total = BoundaryCounts::default();
    for (pred, gt) in pairs {
        let c = gt.num_classes();
        let (cm, inst, per_class) = state.get_or_insert_with(|| {
            (
                ConfusionMatrix::new(c),
                InstanceAccumulator::new(c),
                vec![BoundaryCounts::default(); c],
            )
        });
        if pred.num_classes() != c || per_class.len() != c {
            return Err(HarnessError::validation(format!(
                "class count mismatch: {} vs {c}",
                pred.num_classes()
            )));
        }
        cm.add(pred, gt)?;
        inst.add(pred, gt)?;
        total += boundary_counts(pred, gt, tol)?;
        for (acc, b) in per_class.iter_mut().zip(boundary_prf_per_class(pred, gt, tol)?) {
            *acc += b;
        }
    }
    let (cm, inst, per_class) =
        state.ok_or_else(|| HarnessError::validation("nothing to evaluate"))?;
    Ok(FinalMetrics {
        miou: cm.miou(ignore),
        instance_miou: inst.report(ignore),
        pixel_accuracy: cm.pixel_accuracy(),
        boundary_tol: tol,
        boundary: total.prf(),
        boundary_counts: total,
        boundary_per_class: per_class.iter().map(BoundaryCounts::prf).collect(),
    })
}

/// Predicts every scene and scores the predictions.
pub fn evaluate_model(
    model: &ToySegmenter,
    scenes: &[SynthScene],
    tol: usize,
    ignore: Option<usize>,
) -> Result<(FinalMetrics, Vec<LabelGrid>)> {
    let preds = scenes
        .iter()
        .map(|s| predict(model, &s.features))
        .collect::<affield::Result<Vec<_>>>()?;
    let metrics = evaluate_pairs(preds.iter().zip(scenes.iter().map(|s| &s.gt)), tol, ignore)?;
    Ok((metrics, preds))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScores {
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "F")]
    pub f: f64,
}

impl From<Prf> for BoundaryScores {
    fn from(v: Prf) -> Self {
        Self {
            p: v.precision,
            r: v.recall,
            f: v.f_measure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: usize,
    pub name: Option<String>,
    pub iou: Option<f64>,
    pub instance_iou: Option<f64>,
    pub boundary: BoundaryScores,
}

/// The `eval` command's JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub miou: f64,
    pub instance_miou: f64,
    pub pixel_accuracy: f64,
    pub tol: usize,
    pub boundary: BoundaryScores,
    pub per_class: Vec<ClassRow>,
}

impl EvalReport {
    pub fn new(m: &FinalMetrics, names: Option<&[String]>) -> Self {
        let per_class = m
            .boundary_per_class
            .iter()
            .enumerate()
            .map(|(c, b)| ClassRow {
                class: c,
                name: names.and_then(|n| n.get(c).cloned()),
                iou: m.miou.per_class.get(c).copied().flatten(),
                instance_iou: m.instance_miou.per_class.get(c).copied().flatten(),
                boundary: (*b).into(),
            })
            .collect();
        Self {
            miou: m.miou.mean,
            instance_miou: m.instance_miou.mean,
            pixel_accuracy: m.pixel_accuracy,
            tol: m.boundary_tol,
            boundary: m.boundary.into(),
            per_class,
        }
    }
}
