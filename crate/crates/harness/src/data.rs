//! Scene datasets: generated on the fly from a spec, or read back from a
//! `gen-data` manifest (SEGGRID label + feature files listed in JSON).

use std::path::{Path, PathBuf};

use affield::seggrid::{self, Grid};
use affield::synthdata::{generate_range, SceneSpec, SynthScene};
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, DataSource};
use crate::error::{HarnessError, Result};
use crate::io::{read_json, write_atomic, write_json};

pub const MANIFEST_FORMAT: &str = "affield-scenes/1";
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub train: Vec<SynthScene>,
    pub test: Vec<SynthScene>,
}

impl Dataset {
    pub fn generated(spec: &SceneSpec, train: usize, test: usize) -> Result<Self> {
        Ok(Self {
            num_classes: spec.num_classes(),
            class_names: spec.class_names(),
            train: generate_range(spec, 0, train)?,
            test: generate_range(spec, train, test)?,
        })
    }

    pub fn load(cfg: &DataConfig) -> Result<Self> {
        match cfg.source()? {
            DataSource::Generated(spec) => Self::generated(&spec, cfg.train_scenes, cfg.test_scenes),
            DataSource::Manifest(path) => Self::from_manifest(&path),
        }
    }

    pub fn from_manifest(path: &Path) -> Result<Self> {
        let m: Manifest = read_json(path)?;
        if m.format != MANIFEST_FORMAT {
            return Err(HarnessError::validation(format!(
                "{}: unsupported manifest format {:?}",
                path.display(),
                m.format
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let load = |entries: &[SceneFiles]| -> Result<Vec<SynthScene>> {
            entries
                .iter()
                .map(|e| {
                    let gt = seggrid::read_grid(base.join(&e.label), Some(m.num_classes))?.into_label()?;
                    let features = seggrid::read_grid(base.join(&e.features), None)?.into_features()?;
                    if (gt.height(), gt.width()) != (features.height(), features.width()) {
                        return Err(HarnessError::validation(format!(
                            "{}: label and feature grids differ in size",
                            e.label.display()
                        )));
                    }
                    Ok(SynthScene { gt, features })
                })
                .collect()
        };
        Ok(Self {
            num_classes: m.num_classes,
            class_names: m.class_names.clone(),
            train: load(&m.train)?,
            test: load(&m.test)?,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.train
            .first()
            .or(self.test.first())
            .map_or(0, |s| s.features.channels())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFiles {
    pub label: PathBuf,
    pub features: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub spec: Option<SceneSpec>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// Paths relative to the manifest's directory.
    pub train: Vec<SceneFiles>,
    pub test: Vec<SceneFiles>,
}

/// Writes `train` + `test` generated scenes under `dir` and returns the
/// manifest path.
pub fn write_scenes(spec: &SceneSpec, train: usize, test: usize, dir: &Path) -> Result<PathBuf> {
    let data = Dataset::generated(spec, train, test)?;
    let write_split = |name: &str, scenes: &[SynthScene]| -> Result<Vec<SceneFiles>> {
        scenes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let files = SceneFiles {
                    label: PathBuf::from(format!("{name}/scene_{i:04}.label.sgrd")),
                    features: PathBuf::from(format!("{name}/scene_{i:04}.feat.sgrd")),
                };
                write_atomic(&dir.join(&files.label), &seggrid::encode(&Grid::Label(s.gt.clone())))?;
                write_atomic(
                    &dir.join(&files.features),
                    &seggrid::encode(&Grid::Features(s.features.clone())),
                )?;
                Ok(files)
            })
            .collect()
    };
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        spec: Some(spec.clone()),
        num_classes: data.num_classes,
        class_names: data.class_names.clone(),
        train: write_split("train", &data.train)?,
        test: write_split("test", &data.test)?,
    };
    let path = dir.join(MANIFEST_NAME);
    write_json(&path, &manifest)?;
    Ok(path)
}
