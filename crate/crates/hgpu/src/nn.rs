//! Layer building blocks on top of the tensor engine.

use rand::Rng;

use crate::tensor::{BatchNormState, Result, Tape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Forward phase: training uses batch statistics and updates running stats,
/// eval uses running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    pub fn is_train(self) -> bool {
        self == Phase::Train
    }
}

/// How a parameter is treated by the optimizer: only `Weight` parameters
/// receive weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub kind: ParamKind,
}

/// Named parameters and buffers of a module tree, in registration order.
#[derive(Default)]
pub struct ParamSet {
    pub params: Vec<ParamEntry>,
    pub buffers: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn push(&mut self, name: String, tensor: &Tensor, kind: ParamKind) {
        self.params.push(ParamEntry {
            name,
            tensor: tensor.clone(),
            kind,
        });
    }

    pub fn push_buffer(&mut self, name: String, tensor: &Tensor) {
        self.buffers.push((name, tensor.clone()));
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    /// All named tensors (parameters then buffers), e.g. for checkpointing.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.clone()))
            .collect();
        out.extend(self.buffers.iter().cloned());
        out
    }
}

fn uniform_init<R: Rng>(rng: &mut R, numel: usize, bound: f64) -> Vec<f64> {
    (0..numel).map(|_| rng.gen_range(-bound..bound)).collect()
}

pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        rng: &mut R,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
        bias: bool,
    ) -> Conv2d {
        let fan_in = in_c * k * k;
        let bound = (1.0 / fan_in as f64).sqrt();
        let weight = Tensor::param(
            uniform_init(rng, out_c * in_c * k * k, bound),
            &[out_c, in_c, k, k],
        )
        .expect("conv weight");
        let bias = bias.then(|| Tensor::param(vec![0.0; out_c], &[out_c]).expect("conv bias"));
        Conv2d {
            weight,
            bias,
            stride,
            pad,
            dilation,
        }
    }

    /// 3x3 convolution that preserves spatial extent at stride 1.
    pub fn same3x3<R: Rng>(rng: &mut R, in_c: usize, out_c: usize, stride: usize) -> Conv2d {
        Conv2d::new(rng, in_c, out_c, 3, stride, 1, 1, true)
    }

    pub fn conv1x1<R: Rng>(rng: &mut R, in_c: usize, out_c: usize) -> Conv2d {
        Conv2d::new(rng, in_c, out_c, 1, 1, 0, 1, true)
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        tape.conv2d(
            x,
            &self.weight,
            self.bias.as_ref(),
            self.stride,
            self.pad,
            self.dilation,
        )
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        set.push(format!("{prefix}.weight"), &self.weight, ParamKind::Weight);
        if let Some(b) = &self.bias {
            set.push(format!("{prefix}.bias"), b, ParamKind::Bias);
        }
    }
}

pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub state: BatchNormState,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> BatchNorm2d {
        BatchNorm2d {
            gamma: Tensor::param(vec![1.0; channels], &[channels]).expect("bn gamma"),
            beta: Tensor::param(vec![0.0; channels], &[channels]).expect("bn beta"),
            state: BatchNormState::new(channels),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor, phase: Phase) -> Result<Tensor> {
        tape.batch_norm(
            x,
            &self.gamma,
            &self.beta,
            &self.state,
            phase.is_train(),
            BN_EPS,
            BN_MOMENTUM,
        )
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        set.push(format!("{prefix}.gamma"), &self.gamma, ParamKind::Norm);
        set.push(format!("{prefix}.beta"), &self.beta, ParamKind::Norm);
        set.push_buffer(format!("{prefix}.running_mean"), &self.state.running_mean);
        set.push_buffer(format!("{prefix}.running_var"), &self.state.running_var);
    }
}

/// conv1x1 -> BN -> ReLU -> conv1x1 -> BN.
pub struct SeqOp {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

impl SeqOp {
    pub fn new<R: Rng>(rng: &mut R, channels: usize) -> SeqOp {
        SeqOp {
            conv1: Conv2d::conv1x1(rng, channels, channels),
            bn1: BatchNorm2d::new(channels),
            conv2: Conv2d::conv1x1(rng, channels, channels),
            bn2: BatchNorm2d::new(channels),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor, phase: Phase) -> Result<Tensor> {
        let y = self.conv1.forward(tape, x)?;
        let y = self.bn1.forward(tape, &y, phase)?;
        let y = tape.relu(&y)?;
        let y = self.conv2.forward(tape, &y)?;
        self.bn2.forward(tape, &y, phase)
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        self.conv1.register(&format!("{prefix}.conv1"), set);
        self.bn1.register(&format!("{prefix}.bn1"), set);
        self.conv2.register(&format!("{prefix}.conv2"), set);
        self.bn2.register(&format!("{prefix}.bn2"), set);
    }

    /// Set every conv weight and bias to zero (BN affine untouched); the
    /// block then maps any input to zero. Used by tests and ablations.
    pub fn zero_out(&self) {
        for c in [&self.conv1, &self.conv2] {
            c.weight.set_data(&vec![0.0; c.weight.numel()]);
            if let Some(b) = &c.bias {
                b.set_data(&vec![0.0; b.numel()]);
            }
        }
    }
}

/// Squeeze-excitation channel attention: gap -> conv1x1 -> ReLU -> conv1x1
/// -> sigmoid, then scale channels.
pub struct SeBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl SeBlock {
    pub fn new<R: Rng>(rng: &mut R, channels: usize) -> SeBlock {
        let hidden = (channels / 4).max(4);
        SeBlock {
            conv1: Conv2d::conv1x1(rng, channels, hidden),
            conv2: Conv2d::conv1x1(rng, hidden, channels),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let s = tape.global_avg_pool(x)?;
        let s = self.conv1.forward(tape, &s)?;
        let s = tape.relu(&s)?;
        let s = self.conv2.forward(tape, &s)?;
        let s = tape.sigmoid(&s)?;
        tape.scale_channels(x, &s)
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        self.conv1.register(&format!("{prefix}.conv1"), set);
        self.conv2.register(&format!("{prefix}.conv2"), set);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seqop_zeroed_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = SeqOp::new(&mut rng, 4);
        seq.zero_out();
        let tape = Tape::inference();
        let x = Tensor::full(&[2, 4, 3, 3], 0.7);
        let y = seq.forward(&tape, &x, Phase::Train).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn se_block_with_zero_weights_halves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let se = SeBlock::new(&mut rng, 4);
        for c in [&se.conv1, &se.conv2] {
            c.weight.set_data(&vec![0.0; c.weight.numel()]);
            if let Some(b) = &c.bias {
                b.set_data(&vec![0.0; b.numel()]);
            }
        }
        let tape = Tape::inference();
        let x = Tensor::full(&[1, 4, 2, 2], 2.0);
        let y = se.forward(&tape, &x).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn registration_order_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seq = SeqOp::new(&mut rng, 2);
        let mut set = ParamSet::default();
        seq.register("m", &mut set);
        let names: Vec<&str> = set.params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "m.conv1.weight",
                "m.conv1.bias",
                "m.bn1.gamma",
                "m.bn1.beta",
                "m.conv2.weight",
                "m.conv2.bias",
                "m.bn2.gamma",
                "m.bn2.beta"
            ]
        );
        assert_eq!(set.buffers.len(), 4);
    }
}
