//! Motion-appearance understanding decoder.
//!
//! Frame-node features pass through a channel-gating transform (scale each
//! channel by 1 + tanh of its normalized spatial energy), the flow node
//! yields a per-stage contour reference fused into a full-resolution motion
//! reference, ASPP heads turn per-stage (features, reference) pairs into
//! coarse segmentation logits, and the final mask is the Hadamard product of
//! the coarse map with the motion reference.

use rand::Rng;

use crate::encoder::{EncoderOutputs, FRAME0, FRAME1, FLOW, NUM_STAGES};
use crate::nn::{Conv2d, ParamKind, ParamSet};
use crate::tensor::{Result, Tape, Tensor, TensorError};

pub const MACU_EPS: f64 = 1e-5;

/// Learnable per-channel gate parameters; initialized so the transform is
/// exactly the identity.
pub struct MacuParams {
    pub w_a: Tensor,
    pub w_b: Tensor,
    pub w_c: Tensor,
    pub eps: f64,
}

impl MacuParams {
    pub fn new(channels: usize) -> MacuParams {
        MacuParams {
            w_a: Tensor::param(vec![1.0; channels], &[channels]).expect("w_a"),
            w_b: Tensor::param(vec![0.0; channels], &[channels]).expect("w_b"),
            w_c: Tensor::param(vec![0.0; channels], &[channels]).expect("w_c"),
            eps: MACU_EPS,
        }
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        set.push(format!("{prefix}.w_a"), &self.w_a, ParamKind::Weight);
        set.push(format!("{prefix}.w_b"), &self.w_b, ParamKind::Weight);
        set.push(format!("{prefix}.w_c"), &self.w_c, ParamKind::Weight);
    }
}

/// Q̂_c = Q_c * (1 + tanh(W_b * channel_norm(W_a * ||Q_c||_2) + W_c)).
pub fn macu(tape: &Tape, q: &Tensor, p: &MacuParams) -> Result<Tensor> {
    let s = tape.spatial_l2_norm(q, p.eps)?;
    let s = tape.mul_channel_weights(&s, &p.w_a)?;
    let n = tape.channel_normalize(&s, p.eps)?;
    let t = tape.mul_channel_weights(&n, &p.w_b)?;
    let t = tape.add_channel_weights(&t, &p.w_c)?;
    let gate = tape.add_scalar(&tape.tanh(&t)?, 1.0)?;
    tape.scale_channels(q, &gate)
}

/// Per-stage contour stems over the flow node plus a fusion head that emits
/// the full-resolution motion reference in [0,1].
pub struct MotionReference {
    stems: Vec<(Conv2d, Conv2d)>,
    pred: Conv2d,
}

impl MotionReference {
    pub fn new<R: Rng>(rng: &mut R, stage_channels: &[usize]) -> MotionReference {
        let stems = stage_channels
            .iter()
            .map(|&c| {
                (
                    Conv2d::same3x3(rng, c, c, 1),
                    Conv2d::conv1x1(rng, c, 1),
                )
            })
            .collect();
        MotionReference {
            stems,
            pred: Conv2d::same3x3(rng, NUM_STAGES, 1, 1),
        }
    }

    /// Returns (R at full resolution, per-stage references at stage
    /// resolution).
    pub fn forward(
        &self,
        tape: &Tape,
        q_flow: &[Tensor],
        out_h: usize,
        out_w: usize,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        if q_flow.len() != NUM_STAGES {
            return Err(TensorError::Dimension(format!(
                "motion reference needs {NUM_STAGES} stage features, got {}",
                q_flow.len()
            )));
        }
        let mut stage_refs = Vec::with_capacity(NUM_STAGES);
        let mut ups = Vec::with_capacity(NUM_STAGES);
        for (q, (conv3, conv1)) in q_flow.iter().zip(&self.stems) {
            let y = conv3.forward(tape, q)?;
            let y = conv1.forward(tape, &y)?;
            let r = tape.sigmoid(&y)?;
            ups.push(tape.upsample_bilinear(&r, out_h, out_w)?);
            stage_refs.push(r);
        }
        let refs: Vec<&Tensor> = ups.iter().collect();
        let cat = tape.concat_channels(&refs)?;
        let logits = self.pred.forward(tape, &cat)?;
        let r = tape.sigmoid(&logits)?;
        Ok((r, stage_refs))
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        for (i, (conv3, conv1)) in self.stems.iter().enumerate() {
            conv3.register(&format!("{prefix}.stem{i}.conv3"), set);
            conv1.register(&format!("{prefix}.stem{i}.conv1"), set);
        }
        self.pred.register(&format!("{prefix}.pred"), set);
    }
}

/// Atrous spatial pyramid: a 1x1 branch, 3x3 branches at dilations {2,4,6},
/// and an image-pool branch, fused by a 1x1 conv into one logit channel.
pub struct Aspp {
    conv1: Conv2d,
    dilated: Vec<Conv2d>,
    pool: Conv2d,
    fuse: Conv2d,
}

pub const ASPP_DILATIONS: [usize; 3] = [2, 4, 6];

impl Aspp {
    pub fn new<R: Rng>(rng: &mut R, in_c: usize, branch_c: usize) -> Aspp {
        Aspp {
            conv1: Conv2d::conv1x1(rng, in_c, branch_c),
            dilated: ASPP_DILATIONS
                .iter()
                .map(|&d| Conv2d::new(rng, in_c, branch_c, 3, 1, d, d, true))
                .collect(),
            pool: Conv2d::conv1x1(rng, in_c, branch_c),
            fuse: Conv2d::conv1x1(rng, branch_c * 5, 1),
        }
    }

    /// [N,in_c,h,w] -> [N,1,h,w] logits.
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let mut branches = Vec::with_capacity(5);
        branches.push(tape.relu(&self.conv1.forward(tape, x)?)?);
        for conv in &self.dilated {
            branches.push(tape.relu(&conv.forward(tape, x)?)?);
        }
        let pooled = tape.global_avg_pool(x)?;
        let pooled = tape.relu(&self.pool.forward(tape, &pooled)?)?;
        branches.push(tape.upsample_bilinear(&pooled, h, w)?);
        let refs: Vec<&Tensor> = branches.iter().collect();
        let cat = tape.concat_channels(&refs)?;
        self.fuse.forward(tape, &cat)
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        self.conv1.register(&format!("{prefix}.conv1"), set);
        for (conv, d) in self.dilated.iter().zip(ASPP_DILATIONS) {
            conv.register(&format!("{prefix}.dil{d}"), set);
        }
        self.pool.register(&format!("{prefix}.pool"), set);
        self.fuse.register(&format!("{prefix}.fuse"), set);
    }
}

/// Coarse map per frame node: per stage, concat the gated features with the
/// stage reference, run ASPP, upsample the logit to full resolution; sum the
/// stage logits and squash.
pub fn coarse_segmentation(
    tape: &Tape,
    q_hat: &[Tensor],
    stage_refs: &[Tensor],
    aspp: &[Aspp],
    out_h: usize,
    out_w: usize,
) -> Result<Tensor> {
    if q_hat.len() != NUM_STAGES || stage_refs.len() != NUM_STAGES {
        return Err(TensorError::Dimension(
            "coarse segmentation needs all four stages".into(),
        ));
    }
    let mut total: Option<Tensor> = None;
    for ((q, r), head) in q_hat.iter().zip(stage_refs).zip(aspp) {
        if q.shape()[2] != r.shape()[2] || q.shape()[3] != r.shape()[3] {
            return Err(TensorError::Dimension(format!(
                "stage misalignment: features {:?} vs reference {:?}",
                q.shape(),
                r.shape()
            )));
        }
        let cat = tape.concat_channels(&[q, r])?;
        let logit = head.forward(tape, &cat)?;
        let up = tape.upsample_bilinear(&logit, out_h, out_w)?;
        total = Some(match total {
            Some(t) => tape.add(&t, &up)?,
            None => up,
        });
    }
    tape.sigmoid(&total.expect("four stages processed"))
}

/// Coarse-to-fine refinement: Ŝ = P ⊙ R. Both inputs must already be
/// probability maps.
pub fn refine(tape: &Tape, p: &Tensor, r: &Tensor) -> Result<Tensor> {
    if p.shape() != r.shape() {
        return Err(TensorError::ShapeMismatch {
            expected: p.shape().to_vec(),
            got: r.shape().to_vec(),
        });
    }
    for (name, t) in [("coarse map", p), ("motion reference", r)] {
        if t.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(TensorError::Value(format!("{name} outside [0,1]")));
        }
    }
    tape.hadamard(p, r)
}

/// Everything the decoder emits for one frame pair.
pub struct SegmentationOutput {
    /// Full-resolution motion reference R in [0,1].
    pub motion_ref: Tensor,
    /// Per-stage references at stage resolution.
    pub stage_refs: Vec<Tensor>,
    /// Coarse maps P for (I_k, I_{k+1}).
    pub coarse: [Tensor; 2],
    /// Refined masks Ŝ for (I_k, I_{k+1}).
    pub refined: [Tensor; 2],
}

pub struct Decoder {
    pub macu: Vec<MacuParams>,
    pub motion: MotionReference,
    pub aspp: Vec<Aspp>,
}

impl Decoder {
    pub fn new<R: Rng>(rng: &mut R, stage_channels: &[usize]) -> Decoder {
        Decoder {
            macu: stage_channels.iter().map(|&c| MacuParams::new(c)).collect(),
            motion: MotionReference::new(rng, stage_channels),
            aspp: stage_channels
                .iter()
                .map(|&c| Aspp::new(rng, c + 1, (c / 4).max(8)))
                .collect(),
        }
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        for (i, m) in self.macu.iter().enumerate() {
            m.register(&format!("{prefix}.macu{i}"), set);
        }
        self.motion.register(&format!("{prefix}.motion"), set);
        for (i, a) in self.aspp.iter().enumerate() {
            a.register(&format!("{prefix}.aspp{i}"), set);
        }
    }

    /// Runs the gating transform on frame-node stages, builds the motion
    /// reference from the flow node, and emits coarse and refined maps for
    /// both frame nodes at (out_h, out_w).
    pub fn forward(
        &self,
        tape: &Tape,
        enc: &EncoderOutputs,
        out_h: usize,
        out_w: usize,
    ) -> Result<SegmentationOutput> {
        let q_flow: Vec<Tensor> = enc.q.iter().map(|s| s[FLOW].clone()).collect();
        let (motion_ref, stage_refs) = self.motion.forward(tape, &q_flow, out_h, out_w)?;

        let mut coarse = Vec::with_capacity(2);
        let mut refined = Vec::with_capacity(2);
        for node in [FRAME0, FRAME1] {
            let mut q_hat = Vec::with_capacity(NUM_STAGES);
            for (stage, params) in enc.q.iter().zip(&self.macu) {
                q_hat.push(macu(tape, &stage[node], params)?);
            }
            let p = coarse_segmentation(tape, &q_hat, &stage_refs, &self.aspp, out_h, out_w)?;
            let s = refine(tape, &p, &motion_ref)?;
            coarse.push(p);
            refined.push(s);
        }
        Ok(SegmentationOutput {
            motion_ref,
            stage_refs,
            coarse: [coarse[0].clone(), coarse[1].clone()],
            refined: [refined[0].clone(), refined[1].clone()],
        })
    }
}
