//! The full segmentation network: hierarchical graph encoder over the
//! (frame, flow, frame) triplet plus the motion-appearance decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{Decoder, SegmentationOutput};
use crate::encoder::{Encoder, EncoderConfig, EncoderOutputs, NUM_NODES};
use crate::nn::{ParamSet, Phase};
use crate::tensor::{Result, Tape, Tensor};

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub base_width: usize,
    pub message_iterations: usize,
    pub rank_divisor: usize,
    pub readout_gated: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_width: 16,
            message_iterations: 1,
            rank_divisor: 8,
            readout_gated: true,
        }
    }
}

impl ModelConfig {
    fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            base_width: self.base_width,
            message_iterations: self.message_iterations,
            rank_divisor: self.rank_divisor,
            readout_gated: self.readout_gated,
        }
    }
}

pub struct HgpuModel {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl HgpuModel {
    /// Deterministic construction: the same seed and config always produce
    /// identical initial weights.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<HgpuModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_cfg = cfg.encoder_config();
        let encoder = Encoder::new(&mut rng, enc_cfg.clone())?;
        let decoder = Decoder::new(&mut rng, &enc_cfg.stage_channels());
        Ok(HgpuModel {
            cfg,
            encoder,
            decoder,
        })
    }

    /// Inputs in node order (I_k, O_k, I_{k+1}), each [N,3,H,W].
    pub fn forward(
        &self,
        tape: &Tape,
        inputs: &[Tensor; NUM_NODES],
        phase: Phase,
    ) -> Result<SegmentationOutput> {
        let (enc, out) = self.forward_with_features(tape, inputs, phase)?;
        let _ = enc;
        Ok(out)
    }

    pub fn forward_with_features(
        &self,
        tape: &Tape,
        inputs: &[Tensor; NUM_NODES],
        phase: Phase,
    ) -> Result<(EncoderOutputs, SegmentationOutput)> {
        let (h, w) = (inputs[0].shape()[2], inputs[0].shape()[3]);
        let enc = self.encoder.forward(tape, inputs, phase)?;
        let out = self.decoder.forward(tape, &enc, h, w)?;
        Ok((enc, out))
    }

    /// Named parameters and buffers; encoder entries are prefixed
    /// "encoder." and decoder entries "decoder." for the per-group
    /// learning rates.
    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::default();
        self.encoder.register("encoder", &mut set);
        self.decoder.register("decoder", &mut set);
        set
    }
}
