//! Seeded synthetic segmentation scenes: discs, rings and thin axis-aligned
//! bars on a background, with a noisy per-pixel appearance feature plus the
//! pixel's normalized coordinates as inputs.
//!
//! Class 0 is background; `classes[i]` is painted as class `i + 1`, in list
//! order (later shapes overwrite earlier ones).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FeatureMap, LabelGrid};
use crate::rng::{substream, Stream};

/// Input channels: appearance feature, row / H, column / W.
pub const FEATURE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ClassShape {
    /// One filled disc with integer radius drawn from the range.
    Blob {
        radius_min: usize,
        radius_max: usize,
    },
    /// One annulus: pixels with `radius - thickness < d <= radius`.
    Ring { radius: usize, thickness: usize },
    /// `count` horizontal or vertical bars of width and length drawn from the ranges.
    Bars {
        width_min: usize,
        width_max: usize,
        count: usize,
        length_min: usize,
        length_max: usize,
    },
}

impl ClassShape {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ClassShape::Blob { .. } => "blob",
            ClassShape::Ring { .. } => "ring",
            ClassShape::Bars { .. } => "bars",
        }
    }

    pub fn is_thin(&self) -> bool {
        match self {
            ClassShape::Bars { width_max, .. } => *width_max <= 2,
            ClassShape::Ring { thickness, .. } => *thickness <= 2,
            ClassShape::Blob { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<ClassShape>,
    /// Mean appearance feature per class, background first.
    pub class_means: Vec<f64>,
    pub feature_noise_sigma: f64,
    /// Probability that a pixel's appearance is drawn from a random
    /// 8-neighbor's class instead of its own.
    pub label_bleed: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// The default benchmark: 32×32, background + one disc (r in [6, 9]) +
    /// thin bars (width 1-2), sigma 0.5, bleed 0.1, seed 7.
    pub fn thinblob32() -> Self {
        Self {
            height: 32,
            width: 32,
            classes: vec![
                ClassShape::Blob {
                    radius_min: 6,
                    radius_max: 9,
                },
                ClassShape::Bars {
                    width_min: 1,
                    width_max: 2,
                    count: 3,
                    length_min: 10,
                    length_max: 24,
                },
            ],
            class_means: vec![0.0, 1.0, 2.0],
            feature_noise_sigma: 0.5,
            label_bleed: 0.1,
            seed: 7,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "thinblob-32" | "thinblob32" => Some(Self::thinblob32()),
            _ => None,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len() + 1
    }

    /// Class names: "background" then each shape's kind.
    pub fn class_names(&self) -> Vec<String> {
        std::iter::once("background".to_string())
            .chain(self.classes.iter().map(|c| c.kind_name().to_string()))
            .collect()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let (h, w) = (self.height, self.width);
        let side = h.min(w);
        if h == 0 || w == 0 {
            errs.push(format!("scene size {h}x{w} is empty"));
        }
        if self.class_means.len() != self.num_classes() {
            errs.push(format!(
                "class_means has {} entries for {} classes",
                self.class_means.len(),
                self.num_classes()
            ));
        }
        if self.class_means.iter().any(|m| !m.is_finite()) {
            errs.push("class_means must be finite".into());
        }
        if !(self.feature_noise_sigma.is_finite() && self.feature_noise_sigma >= 0.0) {
            errs.push(format!(
                "feature_noise_sigma must be >= 0 (got {})",
                self.feature_noise_sigma
            ));
        }
        if !(0.0..1.0).contains(&self.label_bleed) {
            errs.push(format!(
                "label_bleed must be in [0, 1) (got {})",
                self.label_bleed
            ));
        }
        for (i, shape) in self.classes.iter().enumerate() {
            let at = format!("classes[{i}]");
            match *shape {
                ClassShape::Blob {
                    radius_min,
                    radius_max,
                } => {
                    if radius_min == 0 || radius_min > radius_max {
                        errs.push(format!(
                            "{at}: radius range [{radius_min}, {radius_max}] is invalid"
                        ));
                    } else if 2 * radius_max + 1 > side {
                        errs.push(format!(
                            "{at}: disc of radius {radius_max} does not fit in {h}x{w}"
                        ));
                    }
                }
                ClassShape::Ring { radius, thickness } => {
                    if thickness == 0 || thickness > radius {
                        errs.push(format!(
                            "{at}: thickness {thickness} invalid for radius {radius}"
                        ));
                    } else if 2 * radius + 1 > side {
                        errs.push(format!(
                            "{at}: ring of radius {radius} does not fit in {h}x{w}"
                        ));
                    }
                }
                ClassShape::Bars {
                    width_min,
                    width_max,
                    count,
                    length_min,
                    length_max,
                } => {
                    if width_min == 0 || width_min > width_max || width_max > side {
                        errs.push(format!(
                            "{at}: bar width range [{width_min}, {width_max}] does not fit"
                        ));
                    }
                    if length_min == 0 || length_min > length_max || length_max > side {
                        errs.push(format!(
                            "{at}: bar length range [{length_min}, {length_max}] does not fit"
                        ));
                    }
                    if count == 0 {
                        errs.push(format!("{at}: bar count must be >= 1"));
                    }
                }
            }
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub gt: LabelGrid,
    pub features: FeatureMap,
}

/// `n` scenes with indices `0..n`.
pub fn generate(spec: &SceneSpec, n: usize) -> Result<Vec<SynthScene>> {
    if n == 0 {
        return Err(Error::InvalidValue("scene count must be >= 1".into()));
    }
    generate_range(spec, 0, n)
}

/// Scenes `start..start + n`; scene `i` depends only on `(spec, i)`.
pub fn generate_range(spec: &SceneSpec, start: usize, n: usize) -> Result<Vec<SynthScene>> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidValue(errs.join("; ")));
    }
    (start..start + n).map(|i| scene(spec, i)).collect()
}

/// Rasterizes the label map of scene `index`.
pub fn rasterize(spec: &SceneSpec, index: usize) -> Result<LabelGrid> {
    let mut rng = substream(spec.seed, Stream::Data, index as u64);
    rasterize_with(spec, &mut rng)
}

fn rasterize_with<R: Rng>(spec: &SceneSpec, rng: &mut R) -> Result<LabelGrid> {
    let (h, w) = (spec.height, spec.width);
    let mut labels = vec![0u16; h * w];
    for (ci, shape) in spec.classes.iter().enumerate() {
        let label = (ci + 1) as u16;
        match *shape {
            ClassShape::Blob {
                radius_min,
                radius_max,
            } => {
                let r = rng.random_range(radius_min..=radius_max);
                let cy = rng.random_range(r..h - r);
                let cx = rng.random_range(r..w - r);
                paint_disc(&mut labels, w, cy, cx, r, 0, label);
            }
            ClassShape::Ring { radius, thickness } => {
                let cy = rng.random_range(radius..h - radius);
                let cx = rng.random_range(radius..w - radius);
                paint_disc(&mut labels, w, cy, cx, radius, radius - thickness, label);
            }
            ClassShape::Bars {
                width_min,
                width_max,
                count,
                length_min,
                length_max,
            } => {
                for _ in 0..count {
                    let thick = rng.random_range(width_min..=width_max);
                    let len = rng.random_range(length_min..=length_max);
                    let vertical = rng.random_bool(0.5);
                    let (bh, bw) = if vertical { (len, thick) } else { (thick, len) };
                    let y0 = rng.random_range(0..=h - bh);
                    let x0 = rng.random_range(0..=w - bw);
                    for y in y0..y0 + bh {
                        for x in x0..x0 + bw {
                            labels[y * w + x] = label;
                        }
                    }
                }
            }
        }
    }
    LabelGrid::new(h, w, spec.num_classes(), labels)
}

/// Paints pixels with `inner² < d² <= outer²` (a full disc when `inner = 0`).
fn paint_disc(
    labels: &mut [u16],
    w: usize,
    cy: usize,
    cx: usize,
    outer: usize,
    inner: usize,
    label: u16,
) {
    let (o2, i2) = ((outer * outer) as isize, (inner * inner) as isize);
    let r = outer as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = dy * dy + dx * dx;
            if d2 <= o2 && (inner == 0 || d2 > i2) {
                let y = (cy as isize + dy) as usize;
                let x = (cx as isize + dx) as usize;
                labels[y * w + x] = label;
            }
        }
    }
}

/// Generates scene `index`.
pub fn scene(spec: &SceneSpec, index: usize) -> Result<SynthScene> {
    let mut rng = substream(spec.seed, Stream::Data, index as u64);
    let gt = rasterize_with(spec, &mut rng)?;
    let (h, w) = (spec.height, spec.width);
    let mut values = Vec::with_capacity(h * w * FEATURE_CHANNELS);
    for y in 0..h {
        for x in 0..w {
            let mut source = gt.get(y, x);
            if spec.label_bleed > 0.0 && rng.random_bool(spec.label_bleed) {
                let neighbors: Vec<(usize, usize)> = (-1isize..=1)
                    .flat_map(|dy| (-1isize..=1).map(move |dx| (dy, dx)))
                    .filter(|&(dy, dx)| (dy, dx) != (0, 0))
                    .filter_map(|(dy, dx)| {
                        let (ny, nx) = (y as isize + dy, x as isize + dx);
                        (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w)
                            .then_some((ny as usize, nx as usize))
                    })
                    .collect();
                if !neighbors.is_empty() {
                    let (ny, nx) = neighbors[rng.random_range(0..neighbors.len())];
                    source = gt.get(ny, nx);
                }
            }
            let noise: f64 = if spec.feature_noise_sigma > 0.0 {
                StandardNormal.sample(&mut rng)
            } else {
                0.0
            };
            values.push(spec.class_means[source] + spec.feature_noise_sigma * noise);
            values.push(y as f64 / h as f64);
            values.push(x as f64 / w as f64);
        }
    }
    Ok(SynthScene {
        gt,
        features: FeatureMap::new(h, w, FEATURE_CHANNELS, values)?,
    })
}
