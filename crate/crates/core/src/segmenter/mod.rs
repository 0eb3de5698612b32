//! A deliberately tiny per-pixel classifier with hand-written backprop:
//! 3×3 conv → ReLU → 3×3 conv → ReLU → 1×1 conv to class logits.
//!
//! Activations are channels-last, `[pixel][channel]`. Convolution weights are
//! laid out `[out][ky][kx][in]`, and all convolutions use zero "same"
//! padding so spatial size is preserved.

mod checkpoint;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use train::{
    poly_lr, predict, train, LossCurves, LossMode, TrainConfig, TrainOutput, WeightSnapshot,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::grid::{EmbedGrid, FeatureMap, ProbGrid};
use crate::losses::LossGrad;

/// Width of both hidden layers; the post-conv2 activation is the embedding tap.
pub const HIDDEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize, ksize: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            ksize,
            weight: vec![0.0; out_ch * ksize * ksize * in_ch],
            bias: vec![0.0; out_ch],
        }
    }

    /// Weights uniform in `[-s, s]`, `s = 1/sqrt(fan_in)`; zero bias.
    pub fn init<R: Rng>(in_ch: usize, out_ch: usize, ksize: usize, rng: &mut R) -> Self {
        let mut c = Self::zeros(in_ch, out_ch, ksize);
        let s = 1.0 / ((in_ch * ksize * ksize) as f64).sqrt();
        for w in &mut c.weight {
            *w = rng.random_range(-s..=s);
        }
        c
    }

    fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (ci, co, k) = (self.in_ch, self.out_ch, self.ksize);
        let r = (k / 2) as isize;
        let mut out = vec![0.0; h * w * co];
        for y in 0..h {
            for x in 0..w {
                let o_px = &mut out[(y * w + x) * co..(y * w + x + 1) * co];
                o_px.copy_from_slice(&self.bias);
                for ky in 0..k {
                    let yy = y as isize + ky as isize - r;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let xx = x as isize + kx as isize - r;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let base = (yy as usize * w + xx as usize) * ci;
                        let in_px = &input[base..base + ci];
                        for (o, acc) in o_px.iter_mut().enumerate() {
                            let wb = ((o * k + ky) * k + kx) * ci;
                            let wrow = &self.weight[wb..wb + ci];
                            *acc += wrow.iter().zip(in_px).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when `want_input` is set.
    fn backward(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        gout: &[f64],
        grads: &mut Conv2d,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let (ci, co, k) = (self.in_ch, self.out_ch, self.ksize);
        let r = (k / 2) as isize;
        let mut gin = if want_input {
            vec![0.0; h * w * ci]
        } else {
            Vec::new()
        };
        for y in 0..h {
            for x in 0..w {
                let g_px = &gout[(y * w + x) * co..(y * w + x + 1) * co];
                for (gb, g) in grads.bias.iter_mut().zip(g_px) {
                    *gb += g;
                }
                for ky in 0..k {
                    let yy = y as isize + ky as isize - r;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let xx = x as isize + kx as isize - r;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let base = (yy as usize * w + xx as usize) * ci;
                        let in_px = &input[base..base + ci];
                        for (o, &g) in g_px.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            let wb = ((o * k + ky) * k + kx) * ci;
                            for (gw, a) in grads.weight[wb..wb + ci].iter_mut().zip(in_px) {
                                *gw += g * a;
                            }
                            if want_input {
                                for (gi, wv) in gin[base..base + ci]
                                    .iter_mut()
                                    .zip(&self.weight[wb..wb + ci])
                                {
                                    *gi += g * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
        want_input.then_some(gin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySegmenter {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub head: Conv2d,
}

/// Cached activations of one forward pass, needed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub height: usize,
    pub width: usize,
    input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: ProbGrid,
    pub embed: EmbedGrid,
}

impl ForwardPass {
    /// Pre-activations of both hidden layers (for kink-distance checks).
    pub fn pre_activations(&self) -> impl Iterator<Item = f64> + '_ {
        self.pre1.iter().chain(&self.pre2).copied()
    }

    /// Post-ReLU activation of the second conv (the raw embedding tap).
    pub fn embed_raw(&self) -> &[f64] {
        &self.act2
    }
}

impl ToySegmenter {
    pub fn new<R: Rng>(in_ch: usize, num_classes: usize, rng: &mut R) -> Self {
        Self {
            conv1: Conv2d::init(in_ch, HIDDEN, 3, rng),
            conv2: Conv2d::init(HIDDEN, HIDDEN, 3, rng),
            head: Conv2d::init(HIDDEN, num_classes, 1, rng),
        }
    }

    pub fn zeros(in_ch: usize, num_classes: usize) -> Self {
        Self {
            conv1: Conv2d::zeros(in_ch, HIDDEN, 3),
            conv2: Conv2d::zeros(HIDDEN, HIDDEN, 3),
            head: Conv2d::zeros(HIDDEN, num_classes, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_channels(), self.num_classes())
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_ch
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_ch
    }

    pub fn tensors(&self) -> [&Vec<f64>; 6] {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.head.weight,
            &self.head.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.head.weight,
            &mut self.head.bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(shape_err(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Runs the network on `x`, returning logits, softmax probabilities and the
/// normalized embedding, together with the activations needed for backprop.
pub fn forward(model: &ToySegmenter, x: &FeatureMap) -> Result<ForwardPass> {
    if x.channels() != model.in_channels() {
        return Err(shape_err(format!(
            "model expects {} input channels, got {}",
            model.in_channels(),
            x.channels()
        )));
    }
    let (h, w) = (x.height(), x.width());
    let pre1 = model.conv1.forward(x.values(), h, w);
    let act1: Vec<f64> = pre1.iter().map(|v| v.max(0.0)).collect();
    let pre2 = model.conv2.forward(&act1, h, w);
    let act2: Vec<f64> = pre2.iter().map(|v| v.max(0.0)).collect();
    let logits = model.head.forward(&act2, h, w);
    let probs = ProbGrid::softmax(h, w, model.num_classes(), &logits)?;
    let embed = EmbedGrid::from_raw(h, w, HIDDEN, &act2)?;
    Ok(ForwardPass {
        height: h,
        width: w,
        input: x.values().to_vec(),
        pre1,
        act1,
        pre2,
        act2,
        logits,
        probs,
        embed,
    })
}

/// Parameter gradients for upstream gradients on the logits and, optionally,
/// on the raw (pre-normalization) embedding tap.
pub fn backward(
    model: &ToySegmenter,
    pass: &ForwardPass,
    upstream_logits: &LossGrad,
    upstream_embed: Option<&LossGrad>,
) -> Result<ToySegmenter> {
    let (h, w) = (pass.height, pass.width);
    if upstream_logits.values.len() != h * w * model.num_classes() {
        return Err(shape_err(format!(
            "upstream gradient of length {} for {h}x{w}x{} logits",
            upstream_logits.values.len(),
            model.num_classes()
        )));
    }
    if let Some(e) = upstream_embed {
        if e.values.len() != h * w * HIDDEN {
            return Err(shape_err(format!(
                "embedding gradient of length {} for {h}x{w}x{HIDDEN}",
                e.values.len()
            )));
        }
    }
    if !upstream_logits.is_finite() || upstream_embed.is_some_and(|e| !e.is_finite()) {
        return Err(Error::NonFinite("upstream gradient".into()));
    }
    let mut grads = model.zeros_like();
    let mut g_act2 = model
        .head
        .backward(
            &pass.act2,
            h,
            w,
            &upstream_logits.values,
            &mut grads.head,
            true,
        )
        .unwrap();
    if let Some(e) = upstream_embed {
        for (g, u) in g_act2.iter_mut().zip(&e.values) {
            *g += u;
        }
    }
    let g_pre2: Vec<f64> = g_act2
        .iter()
        .zip(&pass.pre2)
        .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
        .collect();
    let g_act1 = model
        .conv2
        .backward(&pass.act1, h, w, &g_pre2, &mut grads.conv2, true)
        .unwrap();
    let g_pre1: Vec<f64> = g_act1
        .iter()
        .zip(&pass.pre1)
        .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
        .collect();
    model
        .conv1
        .backward(&pass.input, h, w, &g_pre1, &mut grads.conv1, false);
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    fn features(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
        let mut rng = substream(seed, Stream::Data, 0);
        let v = (0..h * w * c)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        FeatureMap::new(h, w, c, v).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = ToySegmenter::zeros(3, 4);
        let p = forward(&m, &features(3, 5, 3, 1)).unwrap();
        assert!(p.probs.probs().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn head_bias_sets_constant_prediction() {
        let mut m = ToySegmenter::zeros(3, 3);
        m.head.bias = vec![0.5, -1.0, 2.0];
        let p = forward(&m, &features(4, 4, 3, 2)).unwrap();
        let want = ProbGrid::softmax(1, 1, 3, &[0.5, -1.0, 2.0]).unwrap();
        for i in 0..16 {
            for c in 0..3 {
                assert!((p.probs.get(i, c) - want.get(0, c)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = substream(3, Stream::Init, 0);
        let m = ToySegmenter::new(3, 3, &mut rng);
        let x = features(5, 5, 3, 3);
        let p = forward(&m, &x).unwrap();
        let g = backward(&m, &p, &LossGrad::zeros(5, 5, 3), None).unwrap();
        assert!(g.flat_params().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_gradient_is_outer_product_on_one_pixel() {
        let mut rng = substream(4, Stream::Init, 0);
        let m = ToySegmenter::new(3, 2, &mut rng);
        let x = features(1, 1, 3, 4);
        let p = forward(&m, &x).unwrap();
        let up = LossGrad {
            height: 1,
            width: 1,
            channels: 2,
            values: vec![0.7, -1.3],
        };
        let g = backward(&m, &p, &up, None).unwrap();
        for o in 0..2 {
            for i in 0..HIDDEN {
                assert_eq!(
                    g.head.weight[o * HIDDEN + i],
                    up.values[o] * p.embed_raw()[i]
                );
            }
            assert_eq!(g.head.bias[o], up.values[o]);
        }
    }

    #[test]
    fn input_channel_mismatch() {
        let m = ToySegmenter::zeros(3, 2);
        assert!(forward(&m, &features(2, 2, 2, 0)).is_err());
    }
}
