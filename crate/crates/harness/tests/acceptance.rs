//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`) so every
//! line is printed regardless of outcome.

use std::time::{Duration, Instant};

use affield::gradcheck;
use affield::losses::{affinity_loss, multiscale_aaf, HyperParams, Term};
use affield::metrics::{boundary_prf, instance_miou, miou};
use affield::minimax::{ascend_weights, Direction, MinimaxConfig};
use affield::rng::{substream, Stream};
use affield::segmenter::LossMode;
use affield::synthdata::SceneSpec;
use affield::{KernelSpec, LabelGrid, ProbGrid, SimplexWeights};
use affield_harness::data::Dataset;
use affield_harness::experiment::{kernel_report, mean_of, run_on, weight_probe};
use affield_harness::threads::with_threads;
use affield_harness::{ExperimentConfig, RunRecord};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
const BARS: usize = 2;
const BLOB: usize = 1;
/// Pinned from the first descent run (smallest observed weight 0.93).
const COLLAPSE_THRESHOLD: f64 = 0.9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn r(i: u64) -> ChaCha8Rng {
    substream(0xACCE97, Stream::Check, i)
}

fn random_labels(r: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> LabelGrid {
    let labels = (0..h * w).map(|_| r.random_range(0..c as u16)).collect();
    LabelGrid::new(h, w, c, labels).unwrap()
}

fn random_probs(r: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ProbGrid {
    let logits: Vec<f64> = (0..h * w * c).map(|_| r.random_range(-3.0..3.0)).collect();
    ProbGrid::softmax(h, w, c, &logits).unwrap()
}

fn grid(h: usize, w: usize, c: usize, labels: &[u16]) -> LabelGrid {
    LabelGrid::new(h, w, c, labels.to_vec()).unwrap()
}

/// Per-(class, term) means by enumerating every ordered pixel pair.
fn affinity_oracle(pred: &ProbGrid, gt: &LabelGrid, k: usize, m: f64, eps: f64) -> (f64, Vec<[f64; 2]>) {
    let kl = |p: f64, q: f64| {
        let (p, q) = (p.clamp(eps, 1.0 - eps), q.clamp(eps, 1.0 - eps));
        p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
    };
    let (h, w, c) = (gt.height(), gt.width(), gt.num_classes());
    let rad = (k / 2) as i64;
    let mut sums = vec![[0.0; 2]; c];
    let mut counts = vec![[0u64; 2]; c];
    for i in 0..h * w {
        for j in 0..h * w {
            let (yi, xi, yj, xj) = ((i / w) as i64, (i % w) as i64, (j / w) as i64, (j % w) as i64);
            if i == j || (yi - yj).abs() > rad || (xi - xj).abs() > rad {
                continue;
            }
            for cl in 0..c {
                let d = kl(pred.get(j, cl), pred.get(i, cl));
                if (gt.at(i) == cl) == (gt.at(j) == cl) {
                    sums[cl][0] += d;
                    counts[cl][0] += 1;
                } else {
                    sums[cl][1] += (m - d).max(0.0);
                    counts[cl][1] += 1;
                }
            }
        }
    }
    let means: Vec<[f64; 2]> = (0..c)
        .map(|cl| {
            let f = |t: usize| if counts[cl][t] == 0 { 0.0 } else { sums[cl][t] / counts[cl][t] as f64 };
            [f(0), f(1)]
        })
        .collect();
    let total = means.iter().map(|v| v[0] + v[1]).sum::<f64>() / c as f64;
    (total, means)
}

fn gradients() -> Outcome {
    let report = gradcheck::run_suite(0, 20).unwrap();
    let worst = report.worst();
    let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
    outcome(
        report.passed(1e-4),
        format!("worst rel err {worst:.2e} < 1e-4 over 20 instances; checks {names:?}"),
    )
}

fn oracles() -> Outcome {
    let hp = HyperParams::default();
    let mut worst_single = 0.0f64;
    let mut worst_multi = 0.0f64;
    for case in 0..30u64 {
        let mut g = r(case);
        let (h, w, c) = (g.random_range(1..=6), g.random_range(1..=6), g.random_range(1..=3));
        let k = [3, 5][case as usize % 2];
        let gt = random_labels(&mut g, h, w, c);
        let pred = random_probs(&mut g, h, w, c);
        let (v, _) = affinity_loss(&pred, &gt, k, &hp).unwrap();
        let (total, means) = affinity_oracle(&pred, &gt, k, hp.margin, hp.kl_eps);
        worst_single = worst_single.max((v.total - total).abs());
        for cl in 0..c {
            for t in Term::ALL {
                worst_single = worst_single.max((v.mean(cl, 0, t) - means[cl][t as usize]).abs());
            }
        }

        let ks = KernelSpec::new(vec![3, 5]).unwrap();
        let logits: Vec<f64> = (0..c * 4).map(|_| g.random_range(-2.0..2.0)).collect();
        let wts = SimplexWeights::from_logits(c, 2, logits).unwrap();
        let out = multiscale_aaf(&pred, &gt, &ks, &wts, &hp).unwrap();
        let singles: Vec<_> = [3, 5].iter().map(|&k| affinity_loss(&pred, &gt, k, &hp).unwrap().0).collect();
        let mut want = 0.0;
        for cl in 0..c {
            for (ki, s) in singles.iter().enumerate() {
                for t in Term::ALL {
                    want += wts.get(cl, t, ki) * s.mean(cl, 0, t);
                }
            }
        }
        want /= c as f64;
        worst_multi = worst_multi.max((out.value.total - want).abs());
    }
    outcome(
        worst_single <= 1e-10 && worst_multi <= 1e-12,
        format!("affinity vs pair enumeration {worst_single:.1e} (<= 1e-10); multiscale vs recombination {worst_multi:.1e} (<= 1e-12)"),
    )
}

fn simplex() -> Outcome {
    let mut g = r(1000);
    let (c, nk) = (3, 3);
    let mut w = SimplexWeights::uniform(c, nk);
    let mut worst_sum = 0.0f64;
    let mut min_entry = f64::INFINITY;
    let mm = MinimaxConfig { w_lr: 0.5, ..MinimaxConfig::default() };
    for _ in 0..1000 {
        let grad: Vec<f64> = (0..c * 2 * nk).map(|_| g.random_range(-20.0..20.0)).collect();
        w = ascend_weights(&w, &grad, &mm).unwrap();
        for cl in 0..c {
            for t in Term::ALL {
                let row = w.row(cl, t);
                worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
                min_entry = row.iter().copied().fold(min_entry, f64::min);
            }
        }
    }
    let mut decreases = 0;
    for _ in 0..50 {
        let (c, nk) = (g.random_range(1..4), g.random_range(2..5));
        let table: Vec<f64> = (0..c * 2 * nk).map(|_| g.random_range(0.0..3.0)).collect();
        let logits: Vec<f64> = (0..c * 2 * nk).map(|_| g.random_range(-2.0..2.0)).collect();
        let w0 = SimplexWeights::from_logits(c, nk, logits).unwrap();
        let mm = MinimaxConfig { w_lr: 1e-3, ..MinimaxConfig::default() };
        let w1 = ascend_weights(&w0, &table, &mm).unwrap();
        let loss = |w: &SimplexWeights| w.weights().iter().zip(&table).map(|(a, b)| a * b).sum::<f64>();
        if loss(&w1) < loss(&w0) {
            decreases += 1;
        }
    }
    outcome(
        worst_sum <= 1e-9 && min_entry > 0.0 && decreases == 0,
        format!("max |sum-1| {worst_sum:.1e}, min weight {min_entry:.1e}; {decreases}/50 single steps decreased the loss"),
    )
}

fn experiment_config(mode: LossMode, ks: &[usize], w_lr: f64, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.ks = ks.to_vec();
    cfg.train.base_lr = 0.01;
    cfg.train.iters = 3000;
    cfg.train.seed = seed;
    cfg.train.loss_mode = mode;
    cfg.minimax.w_lr = w_lr;
    cfg
}

fn trivial_solution() -> Outcome {
    let cfg = experiment_config(LossMode::Aaf, &[3, 7], 0.1, 0);
    let down = weight_probe(&cfg, Direction::Descent).unwrap();
    let up = weight_probe(&cfg, Direction::Ascent).unwrap();
    outcome(
        down.collapsed(COLLAPSE_THRESHOLD) && !up.collapsed(COLLAPSE_THRESHOLD),
        format!(
            "descent: min w_nonedge(k=3) {:.3}, min w_edge(k=7) {:.3} (> {COLLAPSE_THRESHOLD}); ascent: {:.3}, {:.3} (pattern absent)",
            down.min_nonedge_on_smallest, down.min_edge_on_largest, up.min_nonedge_on_smallest, up.min_edge_on_largest
        ),
    )
}

struct Runs {
    unary: Vec<RunRecord>,
    aaf: Vec<RunRecord>,
    aaf_m1: Vec<RunRecord>,
}

const AAF_KS: [usize; 3] = [3, 5, 7];
const AAF_W_LR: f64 = 0.03;

fn train_runs(data: &Dataset) -> Runs {
    let sweep = |mode: LossMode, margin: f64| -> Vec<RunRecord> {
        SEEDS
            .iter()
            .map(|&s| {
                let mut cfg = experiment_config(mode, &AAF_KS, AAF_W_LR, s);
                cfg.loss.margin = margin;
                run_on(&cfg, data).unwrap().record
            })
            .collect()
    };
    Runs {
        unary: sweep(LossMode::Unary, 3.0),
        aaf: sweep(LossMode::Aaf, 3.0),
        aaf_m1: sweep(LossMode::Aaf, 1.0),
    }
}

fn recall(r: &RunRecord) -> f64 {
    r.metrics.boundary.recall
}

fn bars_iou(r: &RunRecord) -> f64 {
    r.metrics.instance_miou.per_class[BARS].unwrap()
}

fn boundary_recall(runs: &Runs) -> Outcome {
    let dr = mean_of(&runs.aaf, recall) - mean_of(&runs.unary, recall);
    let di = mean_of(&runs.aaf, bars_iou) - mean_of(&runs.unary, bars_iou);
    let dr1 = mean_of(&runs.aaf_m1, recall) - mean_of(&runs.unary, recall);
    let di1 = mean_of(&runs.aaf_m1, bars_iou) - mean_of(&runs.unary, bars_iou);
    outcome(
        dr >= 0.02 && di >= 0.01,
        format!(
            "recall(tol=1) unary {:.4} aaf {:.4} (+{:.2} pts, need 2); bars instance IoU unary {:.4} aaf {:.4} (+{:.2} pts, need 1); margin 1: +{:.2} / +{:.2} pts",
            mean_of(&runs.unary, recall),
            mean_of(&runs.aaf, recall),
            100.0 * dr,
            mean_of(&runs.unary, bars_iou),
            mean_of(&runs.aaf, bars_iou),
            100.0 * di,
            100.0 * dr1,
            100.0 * di1
        ),
    )
}

fn size_adaptivity(runs: &Runs) -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for rec in &runs.aaf {
        let rows = kernel_report(rec).unwrap();
        let (bars, blob) = (&rows[BARS], &rows[BLOB]);
        wins += (bars.k_edge < blob.k_edge) as usize;
        lines.push(format!(
            "seed {}: edge bars {:.2} blob {:.2} | nonedge bars {:.2} blob {:.2}",
            rec.seed, bars.k_edge, blob.k_edge, bars.k_nonedge, blob.k_nonedge
        ));
    }
    outcome(
        wins >= 2,
        format!("k^e_bars < k^e_blob (edge term) in {wins}/3 seeds, need 2; {}", lines.join("; ")),
    )
}

fn metric_fixtures() -> Outcome {
    let gt_a = grid(1, 8, 2, &[1, 1, 0, 0, 0, 0, 0, 0]);
    let gt_b = grid(1, 8, 2, &[1, 0, 1, 0, 1, 0, 0, 0]);
    let pr_b = grid(1, 8, 2, &[1, 0, 1, 0, 1, 1, 1, 1]);
    let inst = instance_miou([(&gt_a, &gt_a), (&pr_b, &gt_b)]).unwrap().per_class[1];

    let g = grid(2, 3, 2, &[0, 1, 1, 0, 0, 1]);
    let inv: Vec<u16> = g.labels().iter().map(|l| 1 - l).collect();
    let same = miou(&g, &g).unwrap().mean;
    let inverted = miou(&grid(2, 3, 2, &inv), &g).unwrap().mean;
    let b = boundary_prf(&g, &g, 0).unwrap();
    let flat = LabelGrid::filled(2, 3, 2, 0).unwrap();
    let flat_recall = boundary_prf(&flat, &g, 2).unwrap().recall;

    let mut g2 = r(2000);
    let mut monotone = 0;
    for _ in 0..20 {
        let gt = random_labels(&mut g2, 10, 10, 3);
        let pr = random_labels(&mut g2, 10, 10, 3);
        let rec: Vec<f64> = (0..6).map(|t| boundary_prf(&pr, &gt, t).unwrap().recall).collect();
        monotone += rec.windows(2).all(|p| p[1] >= p[0]) as usize;
    }
    let pass = inst == Some(0.625)
        && same == 1.0
        && inverted == 0.0
        && (b.precision, b.recall, b.f_measure) == (1.0, 1.0, 1.0)
        && flat_recall == 0.0
        && monotone == 20;
    outcome(
        pass,
        format!(
            "instance fixture {inst:?} (0.625); miou identity {same}, inverted {inverted}; boundary identity P/R/F {}/{}/{}; constant pred recall {flat_recall}; monotone {monotone}/20",
            b.precision, b.recall, b.f_measure
        ),
    )
}

fn determinism() -> Outcome {
    let mut cfg = experiment_config(LossMode::Aaf, &[3, 5], 0.03, 4);
    cfg.train.iters = 300;
    cfg.data.train_scenes = 20;
    cfg.data.test_scenes = 10;
    let data = Dataset::load(&cfg.data).unwrap();
    let run = |threads: usize| with_threads(Some(threads), || run_on(&cfg, &data).unwrap().record).unwrap();
    let a = run(1);
    let b = run(1);
    let c = run(4);
    let bits = |r: &RunRecord| {
        let cv = &r.curves;
        cv.total.iter().chain(&cv.unary).chain(&cv.region).map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    let json = |r: &RunRecord| {
        serde_json::to_string(&RunRecord { wall_time_secs: 0.0, ..r.clone() }).unwrap()
    };
    let pass = a.same_outcome(&b)
        && a.same_outcome(&c)
        && bits(&a) == bits(&b)
        && bits(&a) == bits(&c)
        && json(&a) == json(&c);
    outcome(
        pass,
        format!(
            "two runs at 1 thread and one at 4 threads: identical curves ({} iters) and metrics (miou {:.6})",
            a.curves.total.len(),
            a.metrics.miou.mean
        ),
    )
}

/// `prior` is time already spent on shared work this criterion depends on.
fn report(n: usize, name: &str, budget: Duration, prior: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let el = t.elapsed() + prior;
    let in_budget = el <= budget;
    let pass = o.pass && in_budget;
    println!(
        "criterion {n} {name}: {} ({:.1}s / budget {}s) {}",
        if pass { "PASS" } else { "FAIL" },
        el.as_secs_f64(),
        budget.as_secs(),
        o.detail
    );
    pass
}

fn main() {
    // `cargo test -- --list` and filtered runs expect a quick answer
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let secs = Duration::from_secs;
    let zero = Duration::ZERO;
    let mut results = Vec::new();
    results.push(report(1, "gradient correctness", secs(60), zero, gradients));
    results.push(report(2, "oracle equivalence", secs(30), zero, oracles));
    results.push(report(3, "simplex and minimax", secs(60), zero, simplex));
    results.push(report(4, "trivial solution under descent", secs(600), zero, trivial_solution));

    let t = Instant::now();
    let data = Dataset::generated(&SceneSpec::thinblob32(), 200, 50).unwrap();
    let runs = train_runs(&data);
    let shared = t.elapsed();
    println!("(trained 3 seeds x unary / aaf / aaf margin 1 in {:.1}s)", shared.as_secs_f64());
    results.push(report(5, "aaf improves boundary recall", secs(1200), shared, || {
        boundary_recall(&runs)
    }));
    results.push(report(6, "size adaptivity", secs(900), shared, || size_adaptivity(&runs)));
    results.push(report(7, "metric fixtures", secs(60), zero, metric_fixtures));
    results.push(report(8, "determinism", secs(600), zero, determinism));

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
