use affield::gradcheck::max_rel_err;
use affield::losses::{combined_objective, HyperParams};
use affield::minimax::MinimaxConfig;
use affield::rng::{substream, Stream};
use affield::segmenter::{
    backward, decode_checkpoint, encode_checkpoint, forward, poly_lr, predict, train, LossMode,
    ToySegmenter, TrainConfig,
};
use affield::synthdata::{generate, SceneSpec, SynthScene};
use affield::{FeatureMap, KernelSpec, LabelGrid, SimplexWeights};
use rand::Rng;

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let hp = HyperParams::default();
    let ks = KernelSpec::new(vec![3, 5]).unwrap();
    let (h, w, c) = (6, 6, 3);
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut r = substream(seed, Stream::Init, 99);
        let model = ToySegmenter::new(3, c, &mut r);
        let x: Vec<f64> = (0..h * w * 3).map(|_| r.random_range(-1.0..1.0)).collect();
        let x = FeatureMap::new(h, w, 3, x).unwrap();
        let labels = (0..h * w).map(|_| r.random_range(0..c as u16)).collect();
        let gt = LabelGrid::new(h, w, c, labels).unwrap();
        let logits: Vec<f64> = (0..c * 2 * 2).map(|_| r.random_range(-1.0..1.0)).collect();
        let wts = SimplexWeights::from_logits(c, 2, logits).unwrap();
        let pass = forward(&model, &x).unwrap();
        // skip draws that sit on a ReLU kink
        if pass.pre_activations().any(|z| z.abs() < 1e-4) {
            continue;
        }
        let out = combined_objective(&pass.probs, &gt, &ks, &wts, &hp).unwrap();
        let grads = backward(&model, &pass, &out.grad_logits, None)
            .unwrap()
            .flat_params();
        let params = model.flat_params();
        let mut probe = model.clone();
        let mut f = |p: &[f64]| {
            probe.set_flat_params(p).unwrap();
            let pr = forward(&probe, &x).unwrap().probs;
            combined_objective(&pr, &gt, &ks, &wts, &hp).unwrap().value.total
        };
        let step = 1e-5;
        let mut p = params.clone();
        let mut nums = Vec::new();
        for i in 0..params.len() {
            p[i] = params[i] + step;
            let fp = f(&p);
            p[i] = params[i] - step;
            let fm = f(&p);
            p[i] = params[i];
            let num = (fp - fm) / (2.0 * step);
            let err = (grads[i] - num).abs() / grads[i].abs().max(num.abs()).max(1e-6);
            assert!(err < 1e-4, "seed {seed} param {i}: {} vs {num}", grads[i]);
            nums.push(num);
        }
        // a 0.1% error in the analytic gradient must be caught
        let off: Vec<f64> = grads.iter().map(|g| g * 1.001).collect();
        assert!(max_rel_err(&off, &nums) > 1e-4);
        checked += 1;
    }
    assert!(checked >= 10);
}

/// Single feature: +1 on class 1 pixels, -1 on class 0 pixels.
fn separable(n: usize, seed: u64) -> Vec<SynthScene> {
    let mut r = substream(seed, Stream::Data, 0);
    (0..n)
        .map(|_| {
            let labels: Vec<u16> = (0..64).map(|_| r.random_range(0..2u16)).collect();
            let feats = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
            SynthScene {
                gt: LabelGrid::new(8, 8, 2, labels).unwrap(),
                features: FeatureMap::new(8, 8, 1, feats).unwrap(),
            }
        })
        .collect()
}

fn accuracy(model: &ToySegmenter, data: &[SynthScene]) -> f64 {
    let (mut ok, mut n) = (0, 0);
    for s in data {
        let p = predict(model, &s.features).unwrap();
        ok += p.labels().iter().zip(s.gt.labels()).filter(|(a, b)| a == b).count();
        n += s.gt.len();
    }
    ok as f64 / n as f64
}

#[test]
fn unary_training_solves_a_separable_problem() {
    let data = separable(20, 1);
    let model = ToySegmenter::new(1, 2, &mut substream(0, Stream::Init, 0));
    let cfg = TrainConfig {
        base_lr: 0.05,
        iters: 400,
        ..TrainConfig::default()
    };
    let ks = KernelSpec::single(3).unwrap();
    let out = train(&model, &data, &cfg, &ks, &HyperParams::default(), &MinimaxConfig::default()).unwrap();
    assert!(out.weights.is_none() && out.trajectory.is_empty());
    let acc = accuracy(&out.model, &separable(10, 2));
    assert!(acc > 0.99, "accuracy {acc}");
    assert_eq!(out.curves.total.len(), 400);
}

#[test]
fn zero_iterations_return_the_initial_model() {
    let data = separable(2, 3);
    let model = ToySegmenter::new(1, 2, &mut substream(1, Stream::Init, 0));
    let cfg = TrainConfig {
        iters: 0,
        loss_mode: LossMode::Aaf,
        ..TrainConfig::default()
    };
    let ks = KernelSpec::new(vec![3, 5]).unwrap();
    let out = train(&model, &data, &cfg, &ks, &HyperParams::default(), &MinimaxConfig::default()).unwrap();
    assert_eq!(out.model, model);
    assert_eq!(out.weights, Some(SimplexWeights::uniform(2, 2)));
    assert!(out.curves.total.is_empty());
}

#[test]
fn training_is_bit_reproducible() {
    let spec = SceneSpec::thinblob32();
    let data = generate(&spec, 4).unwrap();
    let ks = KernelSpec::new(vec![3, 5]).unwrap();
    for mode in [LossMode::Aaf, LossMode::Contrastive { k: 3 }, LossMode::Affinity { k: 3 }] {
        let cfg = TrainConfig {
            base_lr: 0.01,
            iters: 12,
            loss_mode: mode,
            seed: 5,
            log_every: 4,
            ..TrainConfig::default()
        };
        let model = ToySegmenter::new(3, 3, &mut substream(cfg.seed, Stream::Init, 0));
        let mm = MinimaxConfig {
            w_lr: 1.0,
            ..MinimaxConfig::default()
        };
        let a = train(&model, &data, &cfg, &ks, &HyperParams::default(), &mm).unwrap();
        let b = train(&model, &data, &cfg, &ks, &HyperParams::default(), &mm).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.curves.total), bits(&b.curves.total));
        assert_eq!(bits(&a.model.flat_params()), bits(&b.model.flat_params()));
        assert_eq!(a.trajectory, b.trajectory);
        if mode == LossMode::Aaf {
            let iters: Vec<usize> = a.trajectory.iter().map(|s| s.iter).collect();
            assert_eq!(iters, vec![0, 4, 8, 12]);
            assert_ne!(a.weights, Some(SimplexWeights::uniform(3, 2)));
        }
    }
}

#[test]
fn poly_schedule_is_exact() {
    for it in 0..=100 {
        let want = 0.001 * (1.0 - it as f64 / 100.0).powf(0.9);
        assert_eq!(poly_lr(0.001, it, 100, 0.9), want);
    }
    assert_eq!(poly_lr(0.001, 100, 100, 0.9), 0.0);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let data = generate(&SceneSpec::thinblob32(), 2).unwrap();
    let model = ToySegmenter::new(3, 3, &mut substream(2, Stream::Init, 0));
    let back = decode_checkpoint(&encode_checkpoint(&model)).unwrap();
    for (a, b) in model.flat_params().iter().zip(back.flat_params()) {
        assert_eq!(*a as f32 as f64, b);
    }
    for s in &data {
        let pa = forward(&model, &s.features).unwrap();
        let pb = forward(&back, &s.features).unwrap();
        for (x, y) in pa.probs.probs().iter().zip(pb.probs.probs()) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn training_rejects_bad_input() {
    let data = separable(2, 3);
    let model = ToySegmenter::new(1, 3, &mut substream(1, Stream::Init, 0));
    let ks = KernelSpec::single(3).unwrap();
    let hp = HyperParams::default();
    let mm = MinimaxConfig::default();
    // class-count mismatch
    assert!(train(&model, &data, &TrainConfig::default(), &ks, &hp, &mm).is_err());
    // empty dataset
    assert!(train(&model, &[], &TrainConfig::default(), &ks, &hp, &mm).is_err());
    let bad = TrainConfig {
        base_lr: -1.0,
        ..TrainConfig::default()
    };
    let model2 = ToySegmenter::new(1, 2, &mut substream(1, Stream::Init, 0));
    assert!(train(&model2, &data, &bad, &ks, &hp, &mm).is_err());
}

#[test]
fn divergence_is_reported() {
    let data = separable(4, 4);
    let model = ToySegmenter::new(1, 2, &mut substream(1, Stream::Init, 0));
    let cfg = TrainConfig {
        base_lr: 1e12,
        iters: 50,
        ..TrainConfig::default()
    };
    let ks = KernelSpec::single(3).unwrap();
    let err = train(&model, &data, &cfg, &ks, &HyperParams::default(), &MinimaxConfig::default())
        .unwrap_err();
    assert!(matches!(err, affield::Error::Divergence { .. }), "{err}");
}
