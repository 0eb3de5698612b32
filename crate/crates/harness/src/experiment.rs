use std::path::Path;
use std::time::Instant;

use affield::losses::Term;
use affield::minimax::{effective_kernel_size, Direction, SimplexWeights};
use affield::rng::{substream, Stream};
use affield::seggrid::{self, Grid};
use affield::segmenter::{encode_checkpoint, train, LossCurves, LossMode, WeightSnapshot};
use affield::{LabelGrid, ToySegmenter};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate_model, FinalMetrics};
use crate::io::{csv_string, write_atomic, write_json};
use crate::threads::with_env_threads;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub class_names: Vec<String>,
    pub curves: LossCurves,
    pub metrics: FinalMetrics,
    pub final_weights: Option<SimplexWeights>,
    /// Weight snapshots every `train.log_every` iterations (aaf runs only).
    pub trajectory: Vec<WeightSnapshot>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    /// Equality of everything except wall time.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        RunRecord {
            wall_time_secs: 0.0,
            ..self.clone()
        } == RunRecord {
            wall_time_secs: 0.0,
            ..other.clone()
        }
    }
}

/// A finished run with the artifacts that are not part of the record.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub model: ToySegmenter,
    pub predictions: Vec<LabelGrid>,
}

/// Trains and evaluates in the current thread pool; writes nothing.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let data = Dataset::load(&cfg.data)?;
    run_on(cfg, &data)
}

/// [`run`] on an already loaded dataset.
pub fn run_on(cfg: &ExperimentConfig, data: &Dataset) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let ks = cfg.kernel_spec()?;
    let init = ToySegmenter::new(
        data.in_channels(),
        data.num_classes,
        &mut substream(cfg.train.seed, Stream::Init, 0),
    );
    let out = train(&init, &data.train, &cfg.train, &ks, &cfg.loss, &cfg.minimax)?;
    let (metrics, predictions) = evaluate_model(&out.model, &data.test, cfg.eval.tol, cfg.eval.ignore_class)?;
    let record = RunRecord {
        config: cfg.clone(),
        seed: cfg.train.seed,
        class_names: data.class_names.clone(),
        curves: out.curves,
        metrics,
        final_weights: out.weights,
        trajectory: out.trajectory,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        record,
        model: out.model,
        predictions,
    })
}

/// Runs `cfg` (thread count from `AFFIELD_THREADS`) and, when
/// `cfg.output_dir` is set, persists its artifacts there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let out = with_env_threads(|| run(cfg))??;
    if let Some(dir) = &cfg.output_dir {
        persist(&out, dir)?;
    }
    Ok(out.record)
}

#[derive(Serialize)]
struct CurveRow {
    iter: usize,
    total: f64,
    unary: f64,
    region: f64,
}

pub fn curves_csv(c: &LossCurves) -> Result<String> {
    csv_string((0..c.total.len()).map(|i| CurveRow {
        iter: i,
        total: c.total[i],
        unary: c.unary[i],
        region: c.region[i],
    }))
}

#[derive(Serialize)]
struct TrajectoryRow {
    iter: usize,
    class: usize,
    term: &'static str,
    k: usize,
    weight: f64,
}

pub fn trajectory_csv(record: &RunRecord) -> Result<String> {
    let ks = &record.config.ks;
    let mut sorted = ks.clone();
    sorted.sort_unstable();
    let mut rows = Vec::new();
    for snap in &record.trajectory {
        for c in 0..snap.weights.num_classes() {
            for term in Term::ALL {
                for (ki, &k) in sorted.iter().enumerate() {
                    rows.push(TrajectoryRow {
                        iter: snap.iter,
                        class: c,
                        term: term.name(),
                        k,
                        weight: snap.weights.get(c, term, ki),
                    });
                }
            }
        }
    }
    csv_string(rows)
}

/// Writes `record.json`, `curves.csv`, `model.ckpt`, `predictions/*.sgrd`
/// and, for aaf runs, `weights.csv` and `kernel_report.csv`. Each file is
/// replaced atomically.
pub fn persist(out: &RunOutput, dir: &Path) -> Result<()> {
    for (i, p) in out.predictions.iter().enumerate() {
        let path = dir.join(format!("predictions/pred_{i:04}.sgrd"));
        write_atomic(&path, &seggrid::encode(&Grid::Label(p.clone())))?;
    }
    write_atomic(&dir.join("model.ckpt"), &encode_checkpoint(&out.model))?;
    write_atomic(&dir.join("curves.csv"), curves_csv(&out.record.curves)?.as_bytes())?;
    if out.record.final_weights.is_some() {
        write_atomic(&dir.join("weights.csv"), trajectory_csv(&out.record)?.as_bytes())?;
        write_atomic(
            &dir.join("kernel_report.csv"),
            kernel_report_csv(&kernel_report(&out.record)?)?.as_bytes(),
        )?;
    }
    // the record goes last: its presence marks a complete run directory
    write_json(&dir.join("record.json"), &out.record)
}

pub fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<RunRecord>> {
    seeds
        .iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.train.seed = seed;
            if let Some(dir) = &cfg.output_dir {
                c.output_dir = Some(dir.join(format!("seed{seed}")));
            }
            run_experiment(&c)
        })
        .collect()
}

pub fn mean_of(records: &[RunRecord], f: impl Fn(&RunRecord) -> f64) -> f64 {
    records.iter().map(f).sum::<f64>() / records.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    pub class: usize,
    pub name: String,
    /// Effective kernel size of the edge term.
    pub k_edge: f64,
    pub k_nonedge: f64,
}

/// Per-class effective kernel sizes of the final weights of an aaf run.
pub fn kernel_report(record: &RunRecord) -> Result<Vec<KernelRow>> {
    let w = record.final_weights.as_ref().ok_or_else(|| {
        HarnessError::validation(format!(
            "kernel report needs an aaf run (loss_mode is {})",
            record.config.train.loss_mode
        ))
    })?;
    kernel_rows(w, &record.config.ks, &record.class_names)
}

pub fn kernel_rows(w: &SimplexWeights, ks: &[usize], names: &[String]) -> Result<Vec<KernelRow>> {
    let ks = affield::KernelSpec::new(ks.to_vec())?;
    (0..w.num_classes())
        .map(|c| {
            Ok(KernelRow {
                class: c,
                name: names.get(c).cloned().unwrap_or_else(|| format!("class{c}")),
                k_edge: effective_kernel_size(w, &ks, c, Term::Edge)?,
                k_nonedge: effective_kernel_size(w, &ks, c, Term::NonEdge)?,
            })
        })
        .collect()
}

pub fn kernel_report_csv(rows: &[KernelRow]) -> Result<String> {
    csv_string(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeClass {
    pub class: usize,
    pub name: String,
    /// Final weights over ascending kernel sizes.
    pub nonedge: Vec<f64>,
    pub edge: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub direction: Direction,
    pub kernel_sizes: Vec<usize>,
    pub classes: Vec<ProbeClass>,
    /// Smallest, over classes, non-edge weight on the smallest kernel.
    pub min_nonedge_on_smallest: f64,
    /// Smallest, over classes, edge weight on the largest kernel.
    pub min_edge_on_largest: f64,
    pub record: RunRecord,
}

impl ProbeReport {
    /// Non-edge mass on the smallest kernel and edge mass on the largest,
    /// both above `threshold` for every class.
    pub fn collapsed(&self, threshold: f64) -> bool {
        self.min_nonedge_on_smallest > threshold && self.min_edge_on_largest > threshold
    }
}

/// Trains with the kernel weights *minimizing* the affinity loss, which
/// drives them to a degenerate weighting.
pub fn trivial_solution_probe(cfg: &ExperimentConfig) -> Result<ProbeReport> {
    weight_probe(cfg, Direction::Descent)
}

/// aaf training of `cfg` with the weights moving in `direction`.
pub fn weight_probe(cfg: &ExperimentConfig, direction: Direction) -> Result<ProbeReport> {
    if cfg.ks.len() < 2 {
        return Err(HarnessError::validation(
            "ks must hold at least two kernel sizes to probe the weights",
        ));
    }
    let mut c = cfg.clone();
    c.train.loss_mode = LossMode::Aaf;
    c.minimax.direction = direction;
    let record = run_experiment(&c)?;
    let w = record
        .final_weights
        .as_ref()
        .expect("aaf runs return weights");
    let last = w.num_kernels() - 1;
    let classes: Vec<ProbeClass> = (0..w.num_classes())
        .map(|k| ProbeClass {
            class: k,
            name: record.class_names.get(k).cloned().unwrap_or_default(),
            nonedge: w.row(k, Term::NonEdge).to_vec(),
            edge: w.row(k, Term::Edge).to_vec(),
        })
        .collect();
    let min = |f: &dyn Fn(&ProbeClass) -> f64| classes.iter().map(f).fold(f64::INFINITY, f64::min);
    let mut kernel_sizes = c.ks.clone();
    kernel_sizes.sort_unstable();
    Ok(ProbeReport {
        direction,
        kernel_sizes,
        min_nonedge_on_smallest: min(&|p| p.nonedge[0]),
        min_edge_on_largest: min(&|p| p.edge[last]),
        classes,
        record,
    })
}
