use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affield::gradcheck;
use affield::seggrid;
use affield::segmenter::load_checkpoint;
use affield::synthdata::SceneSpec;
use affield_harness::data::{write_scenes, Dataset};
use affield_harness::eval::{evaluate_model, evaluate_pairs, EvalReport};
use affield_harness::experiment::{kernel_report_csv, run_experiment, trivial_solution_probe};
use affield_harness::io::{read_json, write_atomic, write_json};
use affield_harness::threads::with_env_threads;
use affield_harness::{kernel_report, ExperimentConfig, HarnessError, Result, RunRecord};
use clap::{Parser, Subcommand};

/// Adaptive affinity field experiments on synthetic scenes.
#[derive(Parser)]
#[command(name = "affield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene dataset (SEGGRID files plus manifest.json).
    GenData {
        /// Preset name (thinblob-32) or a TOML/JSON scene spec file.
        spec: String,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        test: usize,
    },
    /// Train and evaluate one experiment.
    Train {
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory (overrides the config's output_dir).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Override train.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on a dataset, or prediction/ground-truth pairs.
    Eval {
        #[arg(long, requires = "data", conflicts_with_all = ["pred", "gt"])]
        ckpt: Option<PathBuf>,
        /// Scene manifest.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = ["test", "train"], default_value = "test")]
        split: String,
        /// Predicted label grids, paired in order with --gt.
        #[arg(long, num_args = 1.., requires = "gt")]
        pred: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        gt: Vec<PathBuf>,
        /// Class count for label files (default: inferred).
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long, default_value_t = 1)]
        tol: usize,
        #[arg(long)]
        ignore_class: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Per-class effective kernel sizes of an aaf run record, as CSV.
    WeightsReport {
        record: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train with the kernel weights minimizing instead of maximizing.
    ProbeTrivial {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Collapse threshold for the reported verdict.
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_spec(arg: &str) -> Result<SceneSpec> {
    if let Some(spec) = SceneSpec::preset(arg) {
        return Ok(spec);
    }
    let path = Path::new(arg);
    if !path.is_file() {
        return Err(HarnessError::validation(format!(
            "{arg:?} is neither a preset nor a spec file"
        )));
    }
    let spec: SceneSpec = if path.extension().is_some_and(|e| e == "json") {
        read_json(path)?
    } else {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.into(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.into(),
            detail: e.to_string(),
        })?
    };
    let errs = spec.validate();
    if errs.is_empty() {
        Ok(spec)
    } else {
        Err(HarnessError::Validation(errs))
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            spec,
            output,
            train,
            test,
        } => {
            let spec = load_spec(&spec)?;
            if train == 0 || test == 0 {
                return Err(HarnessError::validation("--train and --test must be >= 1"));
            }
            let manifest = write_scenes(&spec, train, test, &output)?;
            println!("{}", manifest.display());
        }
        Command::Train {
            config,
            output,
            seed,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if output.is_some() {
                cfg.output_dir = output;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let record = run_experiment(&cfg)?;
            let m = &record.metrics;
            println!(
                "miou {:.4}  instance_miou {:.4}  boundary P {:.4} R {:.4} F {:.4}  ({:.1}s)",
                m.miou.mean,
                m.instance_miou.mean,
                m.boundary.precision,
                m.boundary.recall,
                m.boundary.f_measure,
                record.wall_time_secs
            );
            if cfg.output_dir.is_none() {
                println!("{}", serde_json::to_string_pretty(&record)?);
            }
        }
        Command::Eval {
            ckpt,
            data,
            split,
            pred,
            gt,
            num_classes,
            tol,
            ignore_class,
            output,
        } => {
            let report = match (ckpt, data) {
                (Some(ckpt), Some(data)) => {
                    let model = load_checkpoint(&ckpt)?;
                    let ds = Dataset::from_manifest(&data)?;
                    let scenes = if split == "train" { &ds.train } else { &ds.test };
                    let (m, _) = with_env_threads(|| evaluate_model(&model, scenes, tol, ignore_class))??;
                    EvalReport::new(&m, Some(&ds.class_names))
                }
                (None, None) if !pred.is_empty() => {
                    if pred.len() != gt.len() {
                        return Err(HarnessError::validation(format!(
                            "{} --pred files but {} --gt files",
                            pred.len(),
                            gt.len()
                        )));
                    }
                    let read = |p: &PathBuf| -> Result<affield::LabelGrid> {
                        Ok(seggrid::read_grid(p, num_classes)?.into_label()?)
                    };
                    let mut preds = Vec::new();
                    let mut gts = Vec::new();
                    for (p, g) in pred.iter().zip(&gt) {
                        preds.push(read(p)?);
                        gts.push(read(g)?);
                    }
                    // without --num-classes, use the largest inferred count
                    let c = num_classes.unwrap_or_else(|| {
                        preds.iter().chain(&gts).map(|g| g.num_classes()).max().unwrap_or(1)
                    });
                    let widen = |g: affield::LabelGrid| -> Result<affield::LabelGrid> {
                        Ok(affield::LabelGrid::new(g.height(), g.width(), c, g.labels().to_vec())?)
                    };
                    let preds = preds.into_iter().map(widen).collect::<Result<Vec<_>>>()?;
                    let gts = gts.into_iter().map(widen).collect::<Result<Vec<_>>>()?;
                    let m = evaluate_pairs(preds.iter().zip(&gts), tol, ignore_class)?;
                    EvalReport::new(&m, None)
                }
                _ => {
                    return Err(HarnessError::validation(
                        "give either --ckpt with --data, or --pred with --gt",
                    ))
                }
            };
            match output {
                Some(p) => write_json(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::Gradcheck {
            seed,
            instances,
            tol,
        } => {
            if instances == 0 {
                return Err(HarnessError::validation("--instances must be >= 1"));
            }
            let report = with_env_threads(|| gradcheck::run_suite(seed, instances))??;
            for c in &report.checks {
                println!("{:<32} {:>6} coords  max rel err {:.3e}", c.name, c.coords, c.max_rel_err);
            }
            println!("worst {:.3e} (tol {tol:.0e})", report.worst());
            if !report.passed(tol) {
                return Err(HarnessError::Core(affield::Error::NonFinite(format!(
                    "gradient mismatch: worst relative error {:.3e} >= {tol:.0e}",
                    report.worst()
                ))));
            }
        }
        Command::WeightsReport { record, output } => {
            let record: RunRecord = read_json(&record)?;
            emit(&kernel_report_csv(&kernel_report(&record)?)?, output.as_deref())?;
        }
        Command::ProbeTrivial {
            config,
            output,
            threshold,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = trivial_solution_probe(&cfg)?;
            for c in &report.classes {
                println!("class {} ({}): nonedge {:.4?} edge {:.4?}", c.class, c.name, c.nonedge, c.edge);
            }
            println!(
                "min nonedge weight on k={}: {:.4}; min edge weight on k={}: {:.4}; collapsed(>{threshold}): {}",
                report.kernel_sizes[0],
                report.min_nonedge_on_smallest,
                report.kernel_sizes[report.kernel_sizes.len() - 1],
                report.min_edge_on_largest,
                report.collapsed(threshold)
            );
            if let Some(p) = output {
                write_json(&p, &report)?;
            }
        }
    }
    Ok(())
}
