use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{backward, forward, ToySegmenter};
use crate::error::{Error, Result};
use crate::grid::{softmax_backward, FeatureMap, KernelSpec, LabelGrid};
use crate::losses::{
    affinity_loss, combined_objective, contrastive_loss, unary_ce, HyperParams, LossGrad,
};
use crate::minimax::{ascend_weights, MinimaxConfig, SimplexWeights};
use crate::rng::{substream, Stream};
use crate::synthdata::SynthScene;

/// Training objective. Written in configs as `unary`, `unary+aaf`,
/// `unary+affinity:<k>` or `unary+contrastive:<k>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossMode {
    Unary,
    Affinity { k: usize },
    Aaf,
    Contrastive { k: usize },
}

impl LossMode {
    pub fn is_aaf(self) -> bool {
        matches!(self, LossMode::Aaf)
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossMode::Unary => write!(f, "unary"),
            LossMode::Affinity { k } => write!(f, "unary+affinity:{k}"),
            LossMode::Aaf => write!(f, "unary+aaf"),
            LossMode::Contrastive { k } => write!(f, "unary+contrastive:{k}"),
        }
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidValue(format!("unknown loss mode {s:?}"));
        let parse_k = |k: &str| -> Result<usize> {
            let k = k.parse().map_err(|_| bad())?;
            crate::grid::check_kernel(k)?;
            Ok(k)
        };
        match s.trim() {
            "unary" => Ok(LossMode::Unary),
            "unary+aaf" | "aaf" => Ok(LossMode::Aaf),
            other => {
                if let Some(k) = other.strip_prefix("unary+affinity:") {
                    Ok(LossMode::Affinity { k: parse_k(k)? })
                } else if let Some(k) = other.strip_prefix("unary+contrastive:") {
                    Ok(LossMode::Contrastive { k: parse_k(k)? })
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl TryFrom<String> for LossMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossMode> for String {
    fn from(m: LossMode) -> Self {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub iters: usize,
    pub poly_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss_mode: LossMode,
    /// Interval (in iterations) between recorded weight snapshots.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.001,
            iters: 1000,
            poly_power: 0.9,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            loss_mode: LossMode::Unary,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            errs.push(format!("train.base_lr must be > 0 (got {})", self.base_lr));
        }
        if !(self.poly_power.is_finite() && self.poly_power >= 0.0) {
            errs.push(format!(
                "train.poly_power must be >= 0 (got {})",
                self.poly_power
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errs.push(format!(
                "train.momentum must be in [0, 1) (got {})",
                self.momentum
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            errs.push(format!(
                "train.weight_decay must be >= 0 (got {})",
                self.weight_decay
            ));
        }
        if self.log_every == 0 {
            errs.push("train.log_every must be >= 1".into());
        }
        errs
    }
}

/// `base_lr * (1 - iter / max_iter)^power`.
pub fn poly_lr(base_lr: f64, iter: usize, max_iter: usize, power: f64) -> f64 {
    if max_iter == 0 {
        return base_lr;
    }
    base_lr * (1.0 - iter as f64 / max_iter as f64).max(0.0).powf(power)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub total: Vec<f64>,
    pub unary: Vec<f64>,
    pub region: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub iter: usize,
    pub weights: SimplexWeights,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ToySegmenter,
    /// Final kernel-size weights (aaf mode only).
    pub weights: Option<SimplexWeights>,
    pub trajectory: Vec<WeightSnapshot>,
    pub curves: LossCurves,
}

struct StepGrads {
    total: f64,
    unary: f64,
    region: f64,
    logits: LossGrad,
    embed: Option<LossGrad>,
    weights: Option<Vec<f64>>,
}

fn step_grads(
    mode: LossMode,
    pass: &super::ForwardPass,
    gt: &LabelGrid,
    ks: &KernelSpec,
    w: Option<&SimplexWeights>,
    hp: &HyperParams,
) -> Result<StepGrads> {
    let pred = &pass.probs;
    Ok(match mode {
        LossMode::Unary => {
            let (v, g) = unary_ce(pred, gt, hp)?;
            StepGrads {
                total: v.total,
                unary: v.total,
                region: 0.0,
                logits: g,
                embed: None,
                weights: None,
            }
        }
        LossMode::Affinity { k } => {
            let (u, mut g) = unary_ce(pred, gt, hp)?;
            let (a, ga) = affinity_loss(pred, gt, k, hp)?;
            for (x, y) in g.values.iter_mut().zip(softmax_backward(pred, &ga.values)) {
                *x += hp.lambda * y;
            }
            StepGrads {
                total: u.total + hp.lambda * a.total,
                unary: u.total,
                region: a.total,
                logits: g,
                embed: None,
                weights: None,
            }
        }
        LossMode::Aaf => {
            let w = w.expect("aaf mode carries weights");
            let out = combined_objective(pred, gt, ks, w, hp)?;
            StepGrads {
                total: out.value.total,
                unary: out.unary,
                region: out.region,
                logits: out.grad_logits,
                embed: None,
                weights: Some(out.grad_weights),
            }
        }
        LossMode::Contrastive { k } => {
            let (u, g) = unary_ce(pred, gt, hp)?;
            let (c, mut ge) = contrastive_loss(&pass.embed, gt, k, hp)?;
            for v in &mut ge.values {
                *v *= hp.lambda;
            }
            StepGrads {
                total: u.total + hp.lambda * c.total,
                unary: u.total,
                region: c.total,
                logits: g,
                embed: Some(ge),
                weights: None,
            }
        }
    })
}

/// SGD with momentum, weight decay and a poly learning-rate schedule on the
/// segmenter; in `unary+aaf` mode the kernel-size weights take one
/// [`ascend_weights`] step per scheduled iteration, computed from the same
/// forward pass as the segmenter step.
///
/// One scene per step, cycling the dataset in a freshly shuffled order each
/// epoch. Deterministic given `cfg.seed`.
pub fn train(
    model: &ToySegmenter,
    data: &[SynthScene],
    cfg: &TrainConfig,
    ks: &KernelSpec,
    hp: &HyperParams,
    mm: &MinimaxConfig,
) -> Result<TrainOutput> {
    if data.is_empty() {
        return Err(Error::InvalidValue("empty training set".into()));
    }
    let errs: Vec<String> = cfg
        .validate()
        .into_iter()
        .chain(hp.validate())
        .chain(mm.validate())
        .collect();
    if !errs.is_empty() {
        return Err(Error::InvalidValue(errs.join("; ")));
    }
    let nc = model.num_classes();
    for s in data {
        if s.gt.num_classes() != nc {
            return Err(Error::Shape(format!(
                "scene has {} classes, model {nc}",
                s.gt.num_classes()
            )));
        }
    }
    let mut model = model.clone();
    let mut weights = cfg
        .loss_mode
        .is_aaf()
        .then(|| SimplexWeights::uniform(nc, ks.len()));
    let mut trajectory = Vec::new();
    if let Some(w) = &weights {
        trajectory.push(WeightSnapshot {
            iter: 0,
            weights: w.clone(),
        });
    }
    let mut curves = LossCurves::default();
    let mut velocity = model.zeros_like();
    let mut shuffle_rng = substream(cfg.seed, Stream::Shuffle, 0);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for it in 0..cfg.iters {
        let pos = it % data.len();
        if pos == 0 {
            order.shuffle(&mut shuffle_rng);
        }
        let scene = &data[order[pos]];
        let pass = forward(&model, &scene.features).map_err(|e| match e {
            Error::NonFinite(detail) => Error::Divergence { iter: it, detail },
            e => e,
        })?;
        let g = step_grads(cfg.loss_mode, &pass, &scene.gt, ks, weights.as_ref(), hp)?;
        if !g.total.is_finite() || !g.logits.is_finite() {
            return Err(Error::Divergence {
                iter: it,
                detail: format!(
                    "{} loss = {} (unary {}, region {})",
                    cfg.loss_mode, g.total, g.unary, g.region
                ),
            });
        }
        let grads = backward(&model, &pass, &g.logits, g.embed.as_ref())?;
        let lr = poly_lr(cfg.base_lr, it, cfg.iters, cfg.poly_power);
        for ((p, v), gr) in model
            .tensors_mut()
            .into_iter()
            .zip(velocity.tensors_mut())
            .zip(grads.tensors())
        {
            for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(gr.iter()) {
                let gi = gi + cfg.weight_decay * *pi;
                *vi = cfg.momentum * *vi - lr * gi;
                *pi += *vi;
            }
        }
        if !model.is_finite() {
            return Err(Error::Divergence {
                iter: it,
                detail: "non-finite parameters after update".into(),
            });
        }
        if let (Some(w), Some(gw)) = (weights.as_mut(), g.weights.as_ref()) {
            if mm.updates_at(it) {
                *w = ascend_weights(w, gw, mm)?;
            }
            if (it + 1) % cfg.log_every == 0 || it + 1 == cfg.iters {
                trajectory.push(WeightSnapshot {
                    iter: it + 1,
                    weights: w.clone(),
                });
            }
        }
        curves.total.push(g.total);
        curves.unary.push(g.unary);
        curves.region.push(g.region);
    }
    Ok(TrainOutput {
        model,
        weights,
        trajectory,
        curves,
    })
}

/// Per-pixel argmax prediction.
pub fn predict(model: &ToySegmenter, x: &FeatureMap) -> Result<LabelGrid> {
    Ok(forward(model, x)?.probs.argmax())
}
