use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use affield::minimax::SimplexWeights;
use affield::segmenter::LossMode;
use affield_harness::experiment::{kernel_rows, run_seeds};
use affield_harness::io::{read_json, write_atomic};
use affield_harness::{kernel_report, run_experiment, trivial_solution_probe, ExperimentConfig, HarnessError, RunRecord};
use tempfile::TempDir;

fn affield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affield"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(mode: &str, ks: &str, out: &Path) -> String {
    format!(
        "ks = {ks}\noutput_dir = \"{}\"\n[data]\ntrain_scenes = 6\ntest_scenes = 3\n[train]\nbase_lr = 0.01\niters = 40\nlog_every = 10\nloss_mode = \"{mode}\"\n",
        out.display()
    )
}

fn small(mode: LossMode, ks: &[usize]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.ks = ks.to_vec();
    cfg.data.train_scenes = 6;
    cfg.data.test_scenes = 3;
    cfg.train.base_lr = 0.01;
    cfg.train.iters = 40;
    cfg.train.log_every = 10;
    cfg.train.loss_mode = mode;
    cfg
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let o = affield(&["gen-data", "thinblob-32", "-o", data.to_str().unwrap(), "--train", "6", "--test", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = data.join("manifest.json");
    assert!(manifest.is_file());
    assert!(data.join("train/scene_0005.label.sgrd").is_file());
    assert!(data.join("test/scene_0002.feat.sgrd").is_file());

    let run = dir.path().join("run");
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        format!(
            "ks = [3, 5]\n[data]\nmanifest = \"data/manifest.json\"\n[train]\nbase_lr = 0.01\niters = 40\nlog_every = 10\nloss_mode = \"unary+aaf\"\n"
        ),
    )
    .unwrap();
    let o = affield(&["train", "-c", cfg.to_str().unwrap(), "-o", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["record.json", "curves.csv", "model.ckpt", "weights.csv", "kernel_report.csv", "predictions/pred_0002.sgrd"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let record: RunRecord = read_json(&run.join("record.json")).unwrap();
    assert_eq!(record.curves.total.len(), 40);
    assert_eq!(record.trajectory.len(), 5);
    let curves = fs::read_to_string(run.join("curves.csv")).unwrap();
    assert!(curves.starts_with("iter,total,unary,region\n"));
    assert_eq!(curves.lines().count(), 41);

    // checkpoint + manifest
    let report_path = dir.path().join("report.json");
    let o = affield(&[
        "eval",
        "--ckpt",
        run.join("model.ckpt").to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
        "-o",
        report_path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = read_json(&report_path).unwrap();
    for key in ["miou", "instance_miou", "boundary", "per_class"] {
        assert!(report.get(key).is_some(), "{key} missing");
    }
    for key in ["P", "R", "F"] {
        assert!(report["boundary"][key].is_f64());
    }
    assert_eq!(report["per_class"].as_array().unwrap().len(), 3);
    // the checkpoint stores f32 parameters, so scores match the run closely
    let recall = report["boundary"]["R"].as_f64().unwrap();
    assert!((recall - record.metrics.boundary.recall).abs() < 0.02);

    // prediction/ground-truth pairs reproduce the run's own metrics
    let preds: Vec<String> = (0..3).map(|i| run.join(format!("predictions/pred_{i:04}.sgrd")).display().to_string()).collect();
    let gts: Vec<String> = (0..3).map(|i| data.join(format!("test/scene_{i:04}.label.sgrd")).display().to_string()).collect();
    let mut args = vec!["eval", "--num-classes", "3", "--pred"];
    args.extend(preds.iter().map(String::as_str));
    args.push("--gt");
    args.extend(gts.iter().map(String::as_str));
    let o = affield(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["miou"].as_f64().unwrap(), record.metrics.miou.mean);
    assert_eq!(report["boundary"]["R"].as_f64().unwrap(), record.metrics.boundary.recall);

    let o = affield(&["weights-report", run.join("record.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = stdout(&o);
    assert!(csv.starts_with("class,name,k_edge,k_nonedge\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn invalid_config_lists_every_error_and_exits_1() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "ks = [2]\n[train]\nbase_lr = 0.0\n[minimax]\nw_lr = -1.0\n[data]\nmanifest = \"nope.json\"\n").unwrap();
    let o = affield(&["train", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for needle in ["ks", "base_lr", "w_lr", "manifest"] {
        assert!(err.contains(needle), "{needle} missing from {err}");
    }
}

#[test]
fn other_exit_codes() {
    let dir = TempDir::new().unwrap();
    let o = affield(&["gen-data", "no-such-preset", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let cfg = dir.path().join("probe.toml");
    fs::write(&cfg, small_config("unary+aaf", "[3]", &dir.path().join("p"))).unwrap();
    let o = affield(&["probe-trivial", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("at least two"));

    let o = affield(&["gradcheck", "--seed", "3", "--instances", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("combined/model_params"));

    let o = affield(&["eval", "--pred", "missing.sgrd", "--gt", "missing.sgrd"]);
    assert_eq!(o.status.code(), Some(2));

    // a training run that blows up is a runtime failure
    let cfg = dir.path().join("diverge.toml");
    fs::write(&cfg, "[data]\ntrain_scenes = 2\ntest_scenes = 1\n[train]\nbase_lr = 1e12\niters = 50\n").unwrap();
    let o = affield(&["train", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unary_runs_have_no_weights() {
    let record = run_experiment(&small(LossMode::Unary, &[3, 5])).unwrap();
    assert!(record.final_weights.is_none() && record.trajectory.is_empty());
    assert!(matches!(kernel_report(&record), Err(HarnessError::Validation(_))));
}

#[test]
fn records_round_trip_and_repeat() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small(LossMode::Aaf, &[3, 5]);
    cfg.output_dir = Some(dir.path().to_path_buf());
    let records = run_seeds(&cfg, &[1, 1]).unwrap();
    assert!(records[0].same_outcome(&records[1]));
    let back: RunRecord = read_json(&dir.path().join("seed1/record.json")).unwrap();
    assert_eq!(back, records[1]);
}

#[test]
fn kernel_report_of_fixed_weights() {
    let names: Vec<String> = ["background", "blob", "bars"].iter().map(|s| s.to_string()).collect();
    let uniform = kernel_rows(&SimplexWeights::uniform(3, 2), &[3, 5], &names).unwrap();
    assert!(uniform.iter().all(|r| r.k_edge == 4.0 && r.k_nonedge == 4.0));

    let mut w = vec![0.5; 3 * 2 * 2];
    // bars, edge term: all mass on k = 3
    w[2 * 4 + 2] = 1.0;
    w[2 * 4 + 3] = 0.0;
    let w = SimplexWeights::from_weights(3, 2, w).unwrap();
    let rows = kernel_rows(&w, &[3, 5], &names).unwrap();
    assert_eq!(rows[2].name, "bars");
    assert_eq!(rows[2].k_edge, 3.0);
    assert_eq!(rows[2].k_nonedge, 4.0);
}

#[test]
fn probe_refuses_single_kernel() {
    let err = trivial_solution_probe(&small(LossMode::Aaf, &[5])).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn atomic_write_leaves_no_partial_file() {
    let dir = TempDir::new().unwrap();
    let target = dir.path().join("record.json");
    write_atomic(&target, b"first").unwrap();
    write_atomic(&target, b"second").unwrap();
    assert_eq!(fs::read(&target).unwrap(), b"second");
    // the rename fails onto a directory: nothing else may be left behind
    let blocked = dir.path().join("blocked");
    fs::create_dir(&blocked).unwrap();
    fs::write(blocked.join("keep"), b"").unwrap();
    assert!(write_atomic(&blocked, b"x").is_err());
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["blocked", "record.json"]);
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert_eq!(n, 3);
}
