//! Experiment configuration, read from TOML.
//!
//! ```toml
//! ks = [3, 5]                  # kernel sizes of the affinity field
//! output_dir = "runs/aaf-s0"   # optional; relative to the config file
//!
//! [data]                       # one of: preset, [data.spec], manifest
//! preset = "thinblob-32"
//! train_scenes = 200
//! test_scenes = 50
//!
//! [train]                      # base_lr, iters, poly_power, momentum,
//! loss_mode = "unary+aaf"      # weight_decay, seed, loss_mode, log_every
//!
//! [loss]                       # lambda, margin, contrastive_margin, kl_eps
//! [minimax]                    # w_lr, parametrization, direction,
//!                              # update_scheme = { kind = "alternating", n = 2 }
//! [eval]                       # tol, ignore_class
//! ```
//!
//! Every key is optional; omitted keys take their defaults. Unknown keys are
//! validation errors.

use std::fs;
use std::path::{Path, PathBuf};

use affield::losses::HyperParams;
use affield::minimax::MinimaxConfig;
use affield::segmenter::TrainConfig;
use affield::synthdata::SceneSpec;
use affield::KernelSpec;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const DEFAULT_PRESET: &str = "thinblob-32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub preset: Option<String>,
    pub spec: Option<SceneSpec>,
    /// Scene manifest written by `affield gen-data`.
    pub manifest: Option<PathBuf>,
    /// Generated scenes `0..train_scenes` train, the next `test_scenes` test.
    pub train_scenes: usize,
    pub test_scenes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            preset: None,
            spec: None,
            manifest: None,
            train_scenes: 200,
            test_scenes: 50,
        }
    }
}

/// Where scenes come from, after validation.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Generated(SceneSpec),
    Manifest(PathBuf),
}

impl DataConfig {
    pub fn source(&self) -> Result<DataSource> {
        match (&self.preset, &self.spec, &self.manifest) {
            (None, None, None) => Ok(DataSource::Generated(SceneSpec::thinblob32())),
            (Some(name), None, None) => SceneSpec::preset(name)
                .map(DataSource::Generated)
                .ok_or_else(|| HarnessError::validation(format!("data.preset: unknown preset {name:?}"))),
            (None, Some(spec), None) => Ok(DataSource::Generated(spec.clone())),
            (None, None, Some(path)) => Ok(DataSource::Manifest(path.clone())),
            _ => Err(HarnessError::validation(
                "data: set at most one of preset, spec, manifest",
            )),
        }
    }

    fn validate(&self, errs: &mut Vec<String>) {
        match self.source() {
            Err(HarnessError::Validation(e)) => errs.extend(e),
            Err(e) => errs.push(e.to_string()),
            Ok(DataSource::Generated(spec)) => {
                errs.extend(spec.validate().into_iter().map(|e| format!("data.spec: {e}")));
                if self.train_scenes == 0 {
                    errs.push("data.train_scenes must be >= 1".into());
                }
                if self.test_scenes == 0 {
                    errs.push("data.test_scenes must be >= 1".into());
                }
            }
            Ok(DataSource::Manifest(path)) => {
                if !path.is_file() {
                    errs.push(format!("data.manifest: {} does not exist", path.display()));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Chebyshev tolerance of boundary matching, in pixels.
    pub tol: usize,
    /// Class left out of the mIoU means (boundaries always use every class).
    pub ignore_class: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tol: 1,
            ignore_class: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub ks: Vec<usize>,
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub loss: HyperParams,
    pub minimax: MinimaxConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            ks: vec![3, 5],
            output_dir: None,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            loss: HyperParams::default(),
            minimax: MinimaxConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document. Relative paths resolve against
    /// `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path, origin: &Path) -> Result<Self> {
        let parse_err = |detail: String| HarnessError::Parse {
            path: origin.into(),
            detail,
        };
        let raw: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let mut cfg: ExperimentConfig = toml::Value::Table(raw.clone())
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let mut errs = Vec::new();
        let known = toml::Value::try_from(&cfg).expect("config serializes to toml");
        if let Some(known) = known.as_table() {
            unknown_keys(&raw, known, "", &mut errs);
        }
        cfg.resolve_paths(base_dir);
        errs.extend(cfg.validate_all());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(HarnessError::Validation(errs))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.manifest, &mut self.output_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Every violated constraint, one message per problem.
    pub fn validate_all(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.ks.is_empty() {
            errs.push("ks must be nonempty".into());
        }
        for &k in &self.ks {
            if k < 3 || k % 2 == 0 {
                errs.push(format!("ks: kernel size {k} must be odd and >= 3"));
            }
        }
        let mut sorted = self.ks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.ks.len() {
            errs.push(format!("ks: duplicate kernel sizes in {:?}", self.ks));
        }
        self.data.validate(&mut errs);
        errs.extend(self.train.validate());
        errs.extend(self.loss.validate());
        errs.extend(self.minimax.validate());
        if let (Some(c), Ok(DataSource::Generated(spec))) = (self.eval.ignore_class, self.data.source()) {
            if c >= spec.num_classes() {
                errs.push(format!(
                    "eval.ignore_class {c} out of range for {} classes",
                    spec.num_classes()
                ));
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.validate_all();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Validation(errs))
        }
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        Ok(KernelSpec::new(self.ks.clone())?)
    }
}

/// Keys present in `raw` but absent from the re-serialized config.
fn unknown_keys(raw: &toml::Table, known: &toml::Table, prefix: &str, errs: &mut Vec<String>) {
    for (key, value) in raw {
        let path = format!("{prefix}{key}");
        match (value, known.get(key)) {
            (toml::Value::Table(r), Some(toml::Value::Table(k))) => {
                unknown_keys(r, k, &format!("{path}."), errs)
            }
            (_, Some(_)) => {}
            (_, None) => errs.push(format!("unknown key {path}")),
        }
    }
}
