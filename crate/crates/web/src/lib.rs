//! Browser bindings: generate a scene, look at where the affinity loss is
//! large, and train a small model to see which kernel sizes the adaptive
//! weights settle on for each class.

use affield::losses::{affinity_pixel_map, HyperParams, Term};
use affield::minimax::{effective_kernel_size, MinimaxConfig, SimplexWeights};
use affield::rng::{substream, Stream};
use affield::segmenter::{forward, predict, train, LossMode, ToySegmenter, TrainConfig};
use affield::synthdata::{generate_range, scene, SceneSpec, SynthScene};
use affield::{KernelSpec, LabelGrid, ProbGrid};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
struct ClassKernels {
    name: String,
    k_edge: f64,
    k_nonedge: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    mode: String,
    iters: usize,
    final_loss: f64,
    pixel_accuracy: f64,
    kernel_sizes: Vec<usize>,
    /// Empty unless the run used adaptive weights.
    classes: Vec<ClassKernels>,
}

/// One interactive session: a scene spec, the scene on display, and an
/// optional trained model.
#[wasm_bindgen]
pub struct Demo {
    spec: SceneSpec,
    index: usize,
    current: SynthScene,
    model: Option<ToySegmenter>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<Demo, JsError> {
        let mut spec = SceneSpec::thinblob32();
        spec.seed = seed;
        let current = scene(&spec, 0).map_err(js_err)?;
        Ok(Demo {
            spec,
            index: 0,
            current,
            model: None,
        })
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn class_names(&self) -> Vec<String> {
        self.spec.class_names()
    }

    /// Regenerates the displayed scene with new corruption settings. The
    /// trained model, if any, is kept.
    pub fn show_scene(&mut self, index: usize, sigma: f64, bleed: f64) -> Result<(), JsError> {
        let mut spec = self.spec.clone();
        spec.feature_noise_sigma = sigma;
        spec.label_bleed = bleed;
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(JsError::new(&errs.join("; ")));
        }
        self.current = scene(&spec, index).map_err(js_err)?;
        self.spec = spec;
        self.index = index;
        Ok(())
    }

    pub fn labels(&self) -> Vec<u16> {
        self.current.gt.labels().to_vec()
    }

    /// The appearance channel of the input features.
    pub fn appearance(&self) -> Vec<f64> {
        let f = &self.current.features;
        (0..f.height() * f.width()).map(|i| f.pixel(i)[0]).collect()
    }

    /// Model prediction, or the nearest-mean labeling before training.
    pub fn prediction(&self) -> Result<Vec<u16>, JsError> {
        Ok(self.probs()?.argmax().labels().to_vec())
    }

    /// Per-pixel affinity loss at window size `k` against the ground truth.
    pub fn affinity_map(&self, k: usize, margin: f64) -> Result<Vec<f64>, JsError> {
        let hp = HyperParams {
            margin,
            ..HyperParams::default()
        };
        affinity_pixel_map(&self.probs()?, &self.current.gt, k, &hp).map_err(js_err)
    }

    /// Trains a fresh model on `scenes` generated scenes and returns a JSON
    /// summary with per-class effective kernel sizes.
    pub fn train(
        &mut self,
        mode: &str,
        kernel_sizes: Vec<usize>,
        scenes: usize,
        iters: usize,
        lr: f64,
        w_lr: f64,
    ) -> Result<String, JsError> {
        let loss_mode: LossMode = mode.parse().map_err(js_err)?;
        let ks = KernelSpec::new(kernel_sizes).map_err(js_err)?;
        let data = generate_range(&self.spec, 1000, scenes.max(1)).map_err(js_err)?;
        let cfg = TrainConfig {
            base_lr: lr,
            iters,
            loss_mode,
            ..TrainConfig::default()
        };
        let mm = MinimaxConfig {
            w_lr,
            ..MinimaxConfig::default()
        };
        let init = ToySegmenter::new(
            data[0].features.channels(),
            self.spec.num_classes(),
            &mut substream(cfg.seed, Stream::Init, 0),
        );
        let out = train(&init, &data, &cfg, &ks, &HyperParams::default(), &mm).map_err(js_err)?;
        let classes = match &out.weights {
            Some(w) => kernel_table(w, &ks, &self.spec.class_names())?,
            None => Vec::new(),
        };
        let pixel_accuracy = accuracy(&out.model, &self.current)?;
        self.model = Some(out.model);
        let summary = TrainSummary {
            mode: loss_mode.to_string(),
            iters,
            final_loss: out.curves.total.last().copied().unwrap_or(f64::NAN),
            pixel_accuracy,
            kernel_sizes: ks.sizes().to_vec(),
            classes,
        };
        serde_json::to_string(&summary).map_err(js_err)
    }

    pub fn forget_model(&mut self) {
        self.model = None;
    }
}

impl Demo {
    fn probs(&self) -> Result<ProbGrid, JsError> {
        match &self.model {
            Some(m) => Ok(forward(m, &self.current.features).map_err(js_err)?.probs),
            None => nearest_mean_probs(&self.spec, &self.current),
        }
    }
}

/// Gaussian class posteriors of the appearance channel under the scene's
/// noise level (equal priors).
fn nearest_mean_probs(spec: &SceneSpec, s: &SynthScene) -> Result<ProbGrid, JsError> {
    let f = &s.features;
    let var = spec.feature_noise_sigma.max(0.05).powi(2);
    let logits: Vec<f64> = (0..f.height() * f.width())
        .flat_map(|i| {
            let v = f.pixel(i)[0];
            spec.class_means.iter().map(move |m| -(v - m) * (v - m) / (2.0 * var))
        })
        .collect();
    ProbGrid::softmax(f.height(), f.width(), spec.num_classes(), &logits).map_err(js_err)
}

fn kernel_table(w: &SimplexWeights, ks: &KernelSpec, names: &[String]) -> Result<Vec<ClassKernels>, JsError> {
    (0..w.num_classes())
        .map(|c| {
            Ok(ClassKernels {
                name: names[c].clone(),
                k_edge: effective_kernel_size(w, ks, c, Term::Edge).map_err(js_err)?,
                k_nonedge: effective_kernel_size(w, ks, c, Term::NonEdge).map_err(js_err)?,
            })
        })
        .collect()
}

fn accuracy(model: &ToySegmenter, s: &SynthScene) -> Result<f64, JsError> {
    let p: LabelGrid = predict(model, &s.features).map_err(js_err)?;
    let ok = p.labels().iter().zip(s.gt.labels()).filter(|(a, b)| a == b).count();
    Ok(ok as f64 / s.gt.len() as f64)
}
