//! Class-balanced BCE loss, momentum SGD with per-group learning rates,
//! flip/rotate augmentation, and the training loop.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint;
use crate::metrics::{self, FrameScore};
use crate::model::HgpuModel;
use crate::nn::{ParamKind, ParamSet, Phase};
use crate::synthdata::{rgb_to_chw, zero_flow_rgb, LoadedSequence};
use crate::tensor::{Result as TensorResult, Tape, Tensor, TensorError};

pub const PRED_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Rotation is sampled uniformly from (-rotation_degrees, +rotation_degrees).
    pub rotation_degrees: f64,
    pub flip_probability: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_encoder: 1e-3,
            lr_decoder: 1e-2,
            weight_decay: 1e-5,
            momentum: 0.9,
            batch_size: 4,
            epochs: 30,
            seed: 0,
            rotation_degrees: 10.0,
            flip_probability: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr_encoder <= 0.0 || self.lr_decoder <= 0.0 {
            return Err(TrainError::Invalid("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Invalid("batch_size and epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(TrainError::Invalid("flip_probability outside [0,1]".into()));
        }
        if self.rotation_degrees < 0.0 {
            return Err(TrainError::Invalid("rotation_degrees must be non-negative".into()));
        }
        Ok(())
    }
}

/// Class-balancing pixel weights for one frame: foreground pixels weigh
/// |bg|/|total| and background pixels |fg|/|total|, so the weighted counts of
/// the two classes are equal. A frame with a single class present falls back
/// to uniform weight 1.
pub fn class_balance_weights(target: &[f64]) -> Vec<f64> {
    let total = target.len() as f64;
    let fg = target.iter().filter(|&&t| t >= 0.5).count() as f64;
    let bg = total - fg;
    if fg == 0.0 || bg == 0.0 {
        return vec![1.0; target.len()];
    }
    target
        .iter()
        .map(|&t| if t >= 0.5 { bg / total } else { fg / total })
        .collect()
}

impl Tape {
    /// Class-balanced binary cross-entropy, normalized by pixel count.
    /// Predictions are clamped to [1e-7, 1-1e-7] inside the log terms.
    pub fn weighted_bce(&self, pred: &Tensor, target: &Tensor) -> TensorResult<Tensor> {
        if pred.shape() != target.shape() {
            return Err(TensorError::ShapeMismatch {
                expected: pred.shape().to_vec(),
                got: target.shape().to_vec(),
            });
        }
        let s = pred.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(TensorError::Dimension(format!(
                "weighted_bce expects [N,1,H,W], got {s:?}"
            )));
        }
        let (n, plane) = (s[0], s[2] * s[3]);
        let total_px = (n * plane) as f64;

        let td = target.to_vec();
        let mut weights = Vec::with_capacity(n * plane);
        for ni in 0..n {
            weights.extend(class_balance_weights(&td[ni * plane..(ni + 1) * plane]));
        }

        let pd = pred.data();
        let mut loss = 0.0;
        for i in 0..n * plane {
            let p = pd[i].clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
            let t = td[i];
            loss -= weights[i] * (t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        }
        loss /= total_px;
        drop(pd);
        let out = Tensor::scalar(loss);

        if self.should_record(&[pred, target]) {
            let (p2, o2) = (pred.clone(), out.clone());
            self.record("weighted_bce", &[pred, target], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let pd = p2.data();
                    let mut dp = vec![0.0; pd.len()];
                    for i in 0..pd.len() {
                        // Zero slope where the clamp is active.
                        if pd[i] > PRED_CLAMP && pd[i] < 1.0 - PRED_CLAMP {
                            let p = pd[i];
                            let t = td[i];
                            dp[i] = g[0] * weights[i] * (-t / p + (1.0 - t) / (1.0 - p))
                                / total_px;
                        }
                    }
                    drop(pd);
                    p2.accumulate_grad(&dp);
                });
            }));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Momentum SGD with per-group learning rates (encoder vs decoder prefix)
/// and decoupled L2 weight decay applied to weight tensors only.
pub struct Sgd {
    lr_encoder: f64,
    lr_decoder: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(cfg: &TrainConfig, params: &ParamSet) -> Sgd {
        Sgd {
            lr_encoder: cfg.lr_encoder,
            lr_decoder: cfg.lr_decoder,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            velocity: params.params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }

    pub fn step(&mut self, params: &ParamSet) {
        for (entry, vel) in params.params.iter().zip(&mut self.velocity) {
            let Some(grad) = entry.tensor.grad() else {
                continue;
            };
            let lr = if entry.name.starts_with("encoder.") {
                self.lr_encoder
            } else {
                self.lr_decoder
            };
            let mut data = entry.tensor.to_vec();
            for ((p, v), g) in data.iter_mut().zip(vel.iter_mut()).zip(&grad) {
                *v = self.momentum * *v + g;
                *p -= lr * *v;
            }
            if self.weight_decay != 0.0 && entry.kind == ParamKind::Weight {
                for p in data.iter_mut() {
                    *p -= lr * self.weight_decay * *p;
                }
            }
            entry.tensor.set_data(&data);
        }
    }
}

// ---------------------------------------------------------------------------
// Samples and augmentation
// ---------------------------------------------------------------------------

/// One training example: a frame pair with its flow visualization and masks,
/// all planar f64.
#[derive(Clone)]
pub struct Sample {
    pub width: usize,
    pub height: usize,
    pub frame0: Vec<f64>,
    pub frame1: Vec<f64>,
    pub flow_rgb: Vec<f64>,
    pub mask0: Vec<f64>,
    pub mask1: Vec<f64>,
}

pub fn make_sample(seq: &LoadedSequence, pair: usize, zero_flow: bool) -> Sample {
    let (w, h) = (seq.width, seq.height);
    let flow_bytes;
    let flow = if zero_flow {
        flow_bytes = zero_flow_rgb(w, h);
        &flow_bytes
    } else {
        &seq.flow_rgb[pair]
    };
    Sample {
        width: w,
        height: h,
        frame0: rgb_to_chw(&seq.frames[pair], w, h),
        frame1: rgb_to_chw(&seq.frames[pair + 1], w, h),
        flow_rgb: rgb_to_chw(flow, w, h),
        mask0: seq.masks[pair].iter().map(|&m| m as f64).collect(),
        mask1: seq.masks[pair + 1].iter().map(|&m| m as f64).collect(),
    }
}

fn hflip_planes(data: &[f64], channels: usize, w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                out[(c * h + y) * w + x] = data[(c * h + y) * w + (w - 1 - x)];
            }
        }
    }
    out
}

fn rotate_planes(data: &[f64], channels: usize, w: usize, h: usize, degrees: f64, nearest: bool) -> Vec<f64> {
    if degrees == 0.0 {
        return data.to_vec();
    }
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; data.len()];
    for c in 0..channels {
        let plane = &data[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // Inverse rotation of the destination coordinate.
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let sx = cos * dx + sin * dy + cx;
                let sy = -sin * dx + cos * dy + cy;
                let v = if nearest {
                    let ix = sx.round() as i64;
                    let iy = sy.round() as i64;
                    if ix >= 0 && ix < w as i64 && iy >= 0 && iy < h as i64 {
                        plane[iy as usize * w + ix as usize]
                    } else {
                        0.0
                    }
                } else {
                    let x0 = sx.floor();
                    let y0 = sy.floor();
                    let fx = sx - x0;
                    let fy = sy - y0;
                    let mut acc = 0.0;
                    for (oy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
                        for (ox, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                            let ix = x0 as i64 + ox;
                            let iy = y0 as i64 + oy;
                            if ix >= 0 && ix < w as i64 && iy >= 0 && iy < h as i64 {
                                acc += wy * wx * plane[iy as usize * w + ix as usize];
                            }
                        }
                    }
                    acc
                };
                dst[y * w + x] = v;
            }
        }
    }
    out
}

/// Apply one shared spatial transform (optional horizontal flip, then a
/// rotation) to both frames, the flow image, and the masks. Images resample
/// bilinearly, masks with nearest neighbor so they stay binary.
pub fn augment<R: Rng>(sample: &Sample, cfg: &TrainConfig, rng: &mut R) -> Sample {
    let flip = cfg.flip_probability > 0.0 && rng.gen_bool(cfg.flip_probability);
    let degrees = if cfg.rotation_degrees > 0.0 {
        rng.gen_range(-cfg.rotation_degrees..cfg.rotation_degrees)
    } else {
        0.0
    };
    let (w, h) = (sample.width, sample.height);
    let image = |data: &[f64], c: usize, nearest: bool| -> Vec<f64> {
        let flipped = if flip { hflip_planes(data, c, w, h) } else { data.to_vec() };
        rotate_planes(&flipped, c, w, h, degrees, nearest)
    };
    Sample {
        width: w,
        height: h,
        frame0: image(&sample.frame0, 3, false),
        frame1: image(&sample.frame1, 3, false),
        flow_rgb: image(&sample.flow_rgb, 3, false),
        mask0: image(&sample.mask0, 1, true),
        mask1: image(&sample.mask1, 1, true),
    }
}

fn batch_tensor(samples: &[Sample], field: impl Fn(&Sample) -> &[f64], channels: usize) -> TensorResult<Tensor> {
    let (w, h) = (samples[0].width, samples[0].height);
    let mut data = Vec::with_capacity(samples.len() * channels * h * w);
    for s in samples {
        data.extend_from_slice(field(s));
    }
    Tensor::new(data, &[samples.len(), channels, h, w])
}

/// Stack samples into the three node inputs plus the two target masks.
pub fn batch_inputs(samples: &[Sample]) -> TensorResult<([Tensor; 3], Tensor, Tensor)> {
    let f0 = batch_tensor(samples, |s| &s.frame0, 3)?;
    let flow = batch_tensor(samples, |s| &s.flow_rgb, 3)?;
    let f1 = batch_tensor(samples, |s| &s.frame1, 3)?;
    let m0 = batch_tensor(samples, |s| &s.mask0, 1)?;
    let m1 = batch_tensor(samples, |s| &s.mask1, 1)?;
    Ok(([f0, flow, f1], m0, m1))
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

/// Per-frame foreground probability maps for one sequence. Frame k takes the
/// I_k prediction of pair (k, k+1); the final frame takes the I_{k+1}
/// prediction of its trailing pair. All pairs run as one batch in eval mode.
pub fn predict_sequence(
    model: &HgpuModel,
    seq: &LoadedSequence,
    zero_flow: bool,
) -> TensorResult<Vec<Vec<f64>>> {
    let n_frames = seq.frames.len();
    let pairs = n_frames - 1;
    let samples: Vec<Sample> = (0..pairs).map(|k| make_sample(seq, k, zero_flow)).collect();
    let (inputs, _, _) = batch_inputs(&samples)?;
    let tape = Tape::inference();
    let out = model.forward(&tape, &inputs, Phase::Eval)?;
    let plane = seq.width * seq.height;
    let lead = out.refined[0].to_vec();
    let trail = out.refined[1].to_vec();
    let mut maps = Vec::with_capacity(n_frames);
    for k in 0..pairs {
        maps.push(lead[k * plane..(k + 1) * plane].to_vec());
    }
    maps.push(trail[(pairs - 1) * plane..pairs * plane].to_vec());
    Ok(maps)
}

/// J/F scores for every frame of every sequence in the dataset.
pub fn evaluate_dataset(
    model: &HgpuModel,
    data: &[LoadedSequence],
    zero_flow: bool,
) -> TensorResult<Vec<FrameScore>> {
    let mut scores = Vec::new();
    for seq in data {
        let tol = metrics::default_boundary_tolerance(seq.width, seq.height);
        let maps = predict_sequence(model, seq, zero_flow)?;
        for (frame, map) in maps.iter().enumerate() {
            let pred = metrics::binarize(map, 0.5);
            scores.push(FrameScore {
                sequence: seq.id.clone(),
                frame,
                j: metrics::region_j(&pred, &seq.masks[frame]),
                f: metrics::boundary_f(&pred, &seq.masks[frame], seq.width, seq.height, tol),
            });
        }
    }
    Ok(scores)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_j_mean: f64,
    pub val_f_mean: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_j: f64,
}

/// One epoch visits every training sequence once, drawing a random frame
/// pair per sequence; both frame predictions of a pair are supervised.
/// Deterministic for a fixed config and seed.
#[allow(clippy::too_many_arguments)]
pub fn train_loop(
    model: &HgpuModel,
    train_data: &[LoadedSequence],
    val_data: &[LoadedSequence],
    cfg: &TrainConfig,
    zero_flow: bool,
    checkpoint_path: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(TrainError::Invalid("empty training set".into()));
    }
    let params = model.params();
    let mut opt = Sgd::new(cfg, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_val_j = f64::NEG_INFINITY;
    let mut best_epoch = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut samples: Vec<Sample> = Vec::with_capacity(order.len());
        for &si in &order {
            let seq = &train_data[si];
            let pair = rng.gen_range(0..seq.frames.len() - 1);
            let sample = make_sample(seq, pair, zero_flow);
            samples.push(augment(&sample, cfg, &mut rng));
        }

        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in samples.chunks(cfg.batch_size) {
            let (inputs, m0, m1) = batch_inputs(chunk)?;
            let tape = Tape::new();
            let out = model.forward(&tape, &inputs, Phase::Train)?;
            let l0 = tape.weighted_bce(&out.refined[0], &m0)?;
            let l1 = tape.weighted_bce(&out.refined[1], &m1)?;
            let loss = tape.add(&l0, &l1)?;
            if !loss.is_finite() {
                return Err(TrainError::Invalid(format!(
                    "non-finite loss at epoch {epoch}"
                )));
            }
            params.zero_grads();
            tape.backward(&loss)?;
            opt.step(&params);
            loss_sum += loss.item();
            steps += 1;
        }

        let val_scores = evaluate_dataset(model, val_data, zero_flow)?;
        let report = metrics::aggregate(&val_scores);
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / steps.max(1) as f64,
            val_j_mean: report.j.mean,
            val_f_mean: report.f.mean,
        };
        if stats.val_j_mean > best_val_j {
            best_val_j = stats.val_j_mean;
            best_epoch = epoch;
            if let Some(path) = checkpoint_path {
                checkpoint::save(path, &params.named_tensors())?;
            }
        }
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_j,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synthdata::{generate_sequence, SceneConfig};
    use crate::tensor::{finite_diff_check, FdOptions};

    fn loaded(seed: u64, size: usize, frames: usize) -> LoadedSequence {
        let seq = generate_sequence(&SceneConfig {
            width: size,
            height: size,
            frames,
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        LoadedSequence {
            id: format!("seq{seed}"),
            width: seq.width,
            height: seq.height,
            frames: seq.frames,
            flow_rgb: seq.flow_rgb,
            masks: seq.masks,
        }
    }

    #[test]
    fn perfect_saturated_prediction_has_negligible_loss() {
        let tape = Tape::inference();
        let target = Tensor::new(vec![0.0, 1.0, 1.0, 0.0], &[1, 1, 2, 2]).unwrap();
        let pred = target.clone();
        let loss = tape.weighted_bce(&pred, &target).unwrap();
        assert!(loss.item() >= 0.0);
        assert!(loss.item() <= 1e-5, "loss {}", loss.item());
    }

    #[test]
    fn ten_percent_foreground_weight_ratio_is_nine() {
        let mut t = vec![0.0; 100];
        for v in t.iter_mut().take(10) {
            *v = 1.0;
        }
        let w = class_balance_weights(&t);
        let ratio = w[0] / w[99];
        assert!((ratio - 9.0).abs() < 1e-12, "ratio {ratio}");
    }

    #[test]
    fn class_balance_sums_are_exactly_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for _ in 0..20 {
            let t: Vec<f64> = (0..64).map(|_| f64::from(rng.gen_bool(0.3))).collect();
            let w = class_balance_weights(&t);
            let fg: f64 = t.iter().zip(&w).filter(|(t, _)| **t >= 0.5).map(|(_, w)| w).sum();
            let bg: f64 = t.iter().zip(&w).filter(|(t, _)| **t < 0.5).map(|(_, w)| w).sum();
            if t.iter().any(|&v| v >= 0.5) && t.iter().any(|&v| v < 0.5) {
                assert_eq!(fg, bg);
            }
        }
    }

    #[test]
    fn uniform_half_prediction_matches_bruteforce_oracle() {
        // Balanced mask, pred = 0.5 everywhere.
        let target: Vec<f64> = (0..16).map(|i| f64::from(i % 2 == 0)).collect();
        let tape = Tape::inference();
        let t = Tensor::new(target.clone(), &[1, 1, 4, 4]).unwrap();
        let p = Tensor::full(&[1, 1, 4, 4], 0.5);
        let loss = tape.weighted_bce(&p, &t).unwrap();
        // Brute-force per-pixel oracle.
        let w = class_balance_weights(&target);
        let mut want = 0.0;
        for i in 0..16 {
            want -= w[i] * (target[i] * 0.5f64.ln() + (1.0 - target[i]) * 0.5f64.ln());
        }
        want /= 16.0;
        assert!((loss.item() - want).abs() < 1e-15);
        // Closed form: every weight is 0.5, so the mean is 0.5*ln 2.
        assert!((loss.item() - 0.5 * 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_falls_back_to_uniform_weights() {
        let w = class_balance_weights(&[0.0; 9]);
        assert_eq!(w, vec![1.0; 9]);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let logits = Tensor::param(
            (0..32).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            &[2, 1, 4, 4],
        )
        .unwrap();
        let target = Tensor::new(
            (0..32).map(|_| f64::from(rng.gen_bool(0.4))).collect(),
            &[2, 1, 4, 4],
        )
        .unwrap();
        let report = finite_diff_check(
            "weighted_bce",
            &[("logits", &logits)],
            |tape| {
                let p = tape.sigmoid(&logits)?;
                tape.weighted_bce(&p, &target)
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn sgd_basic_updates() {
        let mut set = ParamSet::default();
        let p = Tensor::param(vec![1.0], &[1]).unwrap();
        set.push("decoder.p".into(), &p, ParamKind::Weight);
        let cfg = TrainConfig {
            lr_decoder: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = Sgd::new(&cfg, &set);
        // No gradient: parameter unchanged.
        opt.step(&set);
        assert_eq!(p.to_vec(), vec![1.0]);
        // Unit gradient at lr 0.1: decreases by exactly 0.1.
        p.accumulate_grad(&[1.0]);
        opt.step(&set);
        assert!((p.to_vec()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_groups_use_their_own_learning_rates() {
        let mut set = ParamSet::default();
        let pe = Tensor::param(vec![1.0], &[1]).unwrap();
        let pd = Tensor::param(vec![1.0], &[1]).unwrap();
        set.push("encoder.w".into(), &pe, ParamKind::Weight);
        set.push("decoder.w".into(), &pd, ParamKind::Weight);
        let cfg = TrainConfig {
            lr_encoder: 1e-3,
            lr_decoder: 1e-2,
            momentum: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = Sgd::new(&cfg, &set);
        pe.accumulate_grad(&[1.0]);
        pd.accumulate_grad(&[1.0]);
        opt.step(&set);
        assert!((pe.to_vec()[0] - (1.0 - 1e-3)).abs() < 1e-15);
        assert!((pd.to_vec()[0] - (1.0 - 1e-2)).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_skips_bias_and_norm_params() {
        let mut set = ParamSet::default();
        let w = Tensor::param(vec![1.0], &[1]).unwrap();
        let b = Tensor::param(vec![1.0], &[1]).unwrap();
        let g = Tensor::param(vec![1.0], &[1]).unwrap();
        set.push("decoder.w".into(), &w, ParamKind::Weight);
        set.push("decoder.b".into(), &b, ParamKind::Bias);
        set.push("decoder.g".into(), &g, ParamKind::Norm);
        let cfg = TrainConfig {
            lr_decoder: 1.0,
            momentum: 0.0,
            weight_decay: 0.5,
            ..TrainConfig::default()
        };
        let mut opt = Sgd::new(&cfg, &set);
        for p in [&w, &b, &g] {
            p.accumulate_grad(&[0.0]);
        }
        opt.step(&set);
        assert!((w.to_vec()[0] - 0.5).abs() < 1e-15);
        assert_eq!(b.to_vec(), vec![1.0]);
        assert_eq!(g.to_vec(), vec![1.0]);
    }

    #[test]
    fn augment_identity_when_disabled() {
        let seq = loaded(3, 32, 3);
        let sample = make_sample(&seq, 0, false);
        let cfg = TrainConfig {
            flip_probability: 0.0,
            rotation_degrees: 0.0,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&sample, &cfg, &mut rng);
        assert_eq!(out.frame0, sample.frame0);
        assert_eq!(out.mask0, sample.mask0);
    }

    #[test]
    fn double_flip_is_identity_on_masks() {
        let seq = loaded(4, 32, 3);
        let sample = make_sample(&seq, 0, false);
        let once = hflip_planes(&sample.mask0, 1, 32, 32);
        let twice = hflip_planes(&once, 1, 32, 32);
        assert_eq!(twice, sample.mask0);
    }

    #[test]
    fn rotated_masks_stay_binary() {
        let seq = loaded(5, 32, 3);
        let sample = make_sample(&seq, 0, false);
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = augment(&sample, &cfg, &mut rng);
        assert!(out.mask0.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(out.mask1.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn one_small_step_decreases_the_sample_loss() {
        let model = HgpuModel::new(
            ModelConfig {
                base_width: 4,
                ..ModelConfig::default()
            },
            7,
        )
        .unwrap();
        let seq = loaded(6, 32, 3);
        let sample = make_sample(&seq, 0, false);
        let (inputs, m0, m1) = batch_inputs(std::slice::from_ref(&sample)).unwrap();
        let params = model.params();
        let eval_loss = |tape: &Tape| -> f64 {
            let out = model.forward(tape, &inputs, Phase::Train).unwrap();
            let l0 = tape.weighted_bce(&out.refined[0], &m0).unwrap();
            let l1 = tape.weighted_bce(&out.refined[1], &m1).unwrap();
            tape.add(&l0, &l1).unwrap().item()
        };
        let tape = Tape::new();
        let out = model.forward(&tape, &inputs, Phase::Train).unwrap();
        let l0 = tape.weighted_bce(&out.refined[0], &m0).unwrap();
        let l1 = tape.weighted_bce(&out.refined[1], &m1).unwrap();
        let loss = tape.add(&l0, &l1).unwrap();
        let before = loss.item();
        params.zero_grads();
        tape.backward(&loss).unwrap();
        let cfg = TrainConfig {
            lr_encoder: 1e-4,
            lr_decoder: 1e-4,
            momentum: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = Sgd::new(&cfg, &params);
        opt.step(&params);
        let after = eval_loss(&Tape::inference());
        assert!(after < before, "loss {before} -> {after}");
    }

    #[test]
    fn epoch_one_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            seed: 11,
            ..TrainConfig::default()
        };
        let train: Vec<LoadedSequence> = (0..2).map(|i| loaded(10 + i, 32, 3)).collect();
        let val: Vec<LoadedSequence> = vec![loaded(99, 32, 3)];
        let run = || {
            let model = HgpuModel::new(
                ModelConfig {
                    base_width: 4,
                    ..ModelConfig::default()
                },
                42,
            )
            .unwrap();
            let mut first = None;
            train_loop(&model, &train, &val, &cfg, false, None, |s| {
                first.get_or_insert(s.train_loss);
            })
            .unwrap();
            first.unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.to_bits(), b.to_bits(), "epoch-1 loss must be bit-identical");
    }
}
