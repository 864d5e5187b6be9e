//! Hierarchical graph pattern encoder.
//!
//! Per frame pair, the video is a fully connected 3-node graph over
//! (frame k, flow k, frame k+1). A 4-stage backbone runs interleaved with
//! message passing: soft attention on each node's features, low-rank pairwise
//! affinities, softmax-weighted message aggregation, a ConvGRU node update
//! per neighbor, and a motion-appearance readout that fuses the two updated
//! states into the node's input for the next stage.

use rand::Rng;

use crate::nn::{BatchNorm2d, Conv2d, ParamSet, Phase, SeBlock, SeqOp};
use crate::tensor::{Result, Tape, Tensor, TensorError};

pub const NUM_NODES: usize = 3;
pub const NUM_STAGES: usize = 4;
/// Stage labels for naming: backbone stages 2..=5.
pub const STAGE_LABELS: [usize; NUM_STAGES] = [2, 3, 4, 5];
/// Spatial reduction across the whole backbone (4 halvings).
pub const TOTAL_STRIDE: usize = 16;

/// Node indices within a frame-pair graph.
pub const FRAME0: usize = 0;
pub const FLOW: usize = 1;
pub const FRAME1: usize = 2;

/// Fully connected 3-node graph over (I_k, O_k, I_{k+1}).
#[derive(Debug, Clone)]
pub struct GraphSpec {
    pub message_iterations: usize,
}

impl GraphSpec {
    pub fn new(message_iterations: usize) -> Result<GraphSpec> {
        if message_iterations == 0 {
            return Err(TensorError::Value(
                "message_iterations must be at least 1".into(),
            ));
        }
        Ok(GraphSpec { message_iterations })
    }

    pub fn nodes(&self) -> [usize; NUM_NODES] {
        [FRAME0, FLOW, FRAME1]
    }

    /// Unordered node pairs; each yields two directed edges.
    pub fn pairs(&self) -> [(usize, usize); 3] {
        [(FRAME0, FLOW), (FRAME0, FRAME1), (FLOW, FRAME1)]
    }

    pub fn neighbors(&self, node: usize) -> [usize; 2] {
        match node {
            FRAME0 => [FLOW, FRAME1],
            FLOW => [FRAME0, FRAME1],
            FRAME1 => [FRAME0, FLOW],
            _ => panic!("node index out of range"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub base_width: usize,
    pub message_iterations: usize,
    pub rank_divisor: usize,
    /// Readout form: gated keeps feature magnitude (U * sigmoid(G)); the
    /// literal form emits the sigmoid map itself.
    pub readout_gated: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            base_width: 16,
            message_iterations: 1,
            rank_divisor: 8,
            readout_gated: true,
        }
    }
}

impl EncoderConfig {
    pub fn stage_channels(&self) -> [usize; NUM_STAGES] {
        [
            self.base_width,
            self.base_width * 2,
            self.base_width * 4,
            self.base_width * 8,
        ]
    }

    pub fn stage_rank(&self, channels: usize) -> usize {
        (channels / self.rank_divisor).max(4)
    }
}

/// Two stride-halving 3x3 conv layers with BN+ReLU.
pub struct BackboneStage {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

impl BackboneStage {
    pub fn new<R: Rng>(rng: &mut R, in_c: usize, out_c: usize) -> BackboneStage {
        BackboneStage {
            conv1: Conv2d::same3x3(rng, in_c, out_c, 2),
            bn1: BatchNorm2d::new(out_c),
            conv2: Conv2d::same3x3(rng, out_c, out_c, 1),
            bn2: BatchNorm2d::new(out_c),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor, phase: Phase) -> Result<Tensor> {
        let y = self.conv1.forward(tape, x)?;
        let y = self.bn1.forward(tape, &y, phase)?;
        let y = tape.relu(&y)?;
        let y = self.conv2.forward(tape, &y)?;
        let y = self.bn2.forward(tape, &y, phase)?;
        tape.relu(&y)
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        self.conv1.register(&format!("{prefix}.conv1"), set);
        self.bn1.register(&format!("{prefix}.bn1"), set);
        self.conv2.register(&format!("{prefix}.conv2"), set);
        self.bn2.register(&format!("{prefix}.bn2"), set);
    }
}

/// Single-channel spatial gate: h * sigmoid(conv1x1(h)).
pub struct SoftAttention {
    pub gate: Conv2d,
}

impl SoftAttention {
    pub fn new<R: Rng>(rng: &mut R, channels: usize) -> SoftAttention {
        SoftAttention {
            gate: Conv2d::conv1x1(rng, channels, 1),
        }
    }

    pub fn forward(&self, tape: &Tape, h: &Tensor) -> Result<Tensor> {
        let logits = self.gate.forward(tape, h)?;
        let g = tape.sigmoid(&logits)?;
        tape.scale_spatial(h, &g)
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        self.gate.register(&format!("{prefix}.gate"), set);
    }
}

/// Low-rank affinity weights. The bilinear form X = A·Aᵀ is symmetric by
/// construction, which makes the reverse edge an exact transpose and keeps
/// the encoder bit-exactly equivariant to swapping the two frame nodes.
pub struct EdgeWeights {
    pub factor: Tensor,
    pub channels: usize,
    pub rank: usize,
}

impl EdgeWeights {
    pub fn new<R: Rng>(rng: &mut R, channels: usize, rank: usize) -> EdgeWeights {
        let bound = (1.0 / channels as f64).sqrt();
        let data: Vec<f64> = (0..channels * rank)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        EdgeWeights {
            factor: Tensor::param(data, &[channels, rank]).expect("edge factor"),
            channels,
            rank,
        }
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        set.push(
            format!("{prefix}.factor"),
            &self.factor,
            crate::nn::ParamKind::Weight,
        );
    }

    /// Project flattened node features [HW,C] into the rank-r edge space.
    pub fn project(&self, tape: &Tape, h_flat: &Tensor) -> Result<Tensor> {
        tape.matmul(h_flat, &self.factor)
    }
}

/// Pairwise affinities between two nodes' flattened features [HW,C]:
/// e_{t,u} = (h_t A)(h_u A)ᵀ, and e_{u,t} is its exact transpose.
pub fn edge_affinity(
    tape: &Tape,
    h_t: &Tensor,
    h_u: &Tensor,
    weights: &EdgeWeights,
) -> Result<(Tensor, Tensor)> {
    if h_t.shape().len() != 2 || h_t.shape()[1] != weights.channels {
        return Err(TensorError::Dimension(format!(
            "edge_affinity expects [HW,{}] features, got {:?}",
            weights.channels,
            h_t.shape()
        )));
    }
    if h_u.shape().len() != 2 || h_u.shape()[1] != weights.channels {
        return Err(TensorError::Dimension(format!(
            "edge_affinity expects [HW,{}] features, got {:?}",
            weights.channels,
            h_u.shape()
        )));
    }
    let g_t = weights.project(tape, h_t)?;
    let g_u = weights.project(tape, h_u)?;
    let g_u_t = tape.transpose2d(&g_u)?;
    let e_tu = tape.matmul(&g_t, &g_u_t)?;
    let e_ut = tape.transpose2d(&e_tu)?;
    Ok((e_tu, e_ut))
}

/// Softmax-weighted gathering of source features: softmax rows of e_{t,u}
/// weight the source positions of h_u, so every message position is a convex
/// combination of source positions.
pub fn aggregate_message(tape: &Tape, h_u: &Tensor, e_tu: &Tensor) -> Result<Tensor> {
    if e_tu.shape().len() != 2 || h_u.shape().len() != 2 || e_tu.shape()[1] != h_u.shape()[0] {
        return Err(TensorError::Dimension(format!(
            "aggregate_message: affinity {:?} does not match source {:?}",
            e_tu.shape(),
            h_u.shape()
        )));
    }
    let attn = tape.softmax_rows(e_tu)?;
    tape.matmul(&attn, h_u)
}

/// ConvGRU node update with 3x3 conv gates.
pub struct ConvGru {
    pub conv_z: Conv2d,
    pub conv_r: Conv2d,
    pub conv_c: Conv2d,
}

impl ConvGru {
    pub fn new<R: Rng>(rng: &mut R, channels: usize) -> ConvGru {
        ConvGru {
            conv_z: Conv2d::same3x3(rng, channels * 2, channels, 1),
            conv_r: Conv2d::same3x3(rng, channels * 2, channels, 1),
            conv_c: Conv2d::same3x3(rng, channels * 2, channels, 1),
        }
    }

    /// U = (1-z)⊙h + z⊙ĥ with z = σ(conv([h;m])), r = σ(conv([h;m])),
    /// ĥ = tanh(conv([r⊙h; m])).
    pub fn forward(&self, tape: &Tape, h: &Tensor, m: &Tensor) -> Result<Tensor> {
        if h.shape() != m.shape() {
            return Err(TensorError::ShapeMismatch {
                expected: h.shape().to_vec(),
                got: m.shape().to_vec(),
            });
        }
        let hm = tape.concat_channels(&[h, m])?;
        let z = tape.sigmoid(&self.conv_z.forward(tape, &hm)?)?;
        let r = tape.sigmoid(&self.conv_r.forward(tape, &hm)?)?;
        let rh = tape.hadamard(&r, h)?;
        let rhm = tape.concat_channels(&[&rh, m])?;
        let cand = tape.tanh(&self.conv_c.forward(tape, &rhm)?)?;
        let ones = Tensor::full(z.shape(), 1.0);
        let omz = tape.sub(&ones, &z)?;
        let keep = tape.hadamard(&omz, h)?;
        let take = tape.hadamard(&z, &cand)?;
        tape.add(&keep, &take)
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        self.conv_z.register(&format!("{prefix}.conv_z"), set);
        self.conv_r.register(&format!("{prefix}.conv_r"), set);
        self.conv_c.register(&format!("{prefix}.conv_c"), set);
    }
}

/// Motion-appearance readout: channel attention shapes the gate path, the
/// global (gap->SeqOp) and local (SeqOp) branches are summed into a gate, and
/// the two neighbors' gated updates are averaged.
pub struct Readout {
    pub se: SeBlock,
    pub seq_global: SeqOp,
    pub seq_local: SeqOp,
    pub gated: bool,
}

impl Readout {
    pub fn new<R: Rng>(rng: &mut R, channels: usize, gated: bool) -> Readout {
        Readout {
            se: SeBlock::new(rng, channels),
            seq_global: SeqOp::new(rng, channels),
            seq_local: SeqOp::new(rng, channels),
            gated,
        }
    }

    fn fuse_one(&self, tape: &Tape, u: &Tensor, phase: Phase) -> Result<Tensor> {
        let attended = self.se.forward(tape, u)?;
        let pooled = tape.global_avg_pool(&attended)?;
        let f_global = self.seq_global.forward(tape, &pooled, phase)?;
        let f_local = self.seq_local.forward(tape, &attended, phase)?;
        let g = tape.add_channel_map(&f_local, &f_global)?;
        let gate = tape.sigmoid(&g)?;
        if self.gated {
            tape.hadamard(u, &gate)
        } else {
            Ok(gate)
        }
    }

    /// Merge the neighbor set {U_{u,t}} (always two) into Q_t.
    pub fn forward(&self, tape: &Tape, updates: &[Tensor], phase: Phase) -> Result<Tensor> {
        if updates.len() != 2 {
            return Err(TensorError::Dimension(format!(
                "readout expects exactly 2 neighbor updates, got {}",
                updates.len()
            )));
        }
        let a = self.fuse_one(tape, &updates[0], phase)?;
        let b = self.fuse_one(tape, &updates[1], phase)?;
        let sum = tape.add(&a, &b)?;
        tape.mul_scalar(&sum, 0.5)
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        self.se.register(&format!("{prefix}.se"), set);
        self.seq_global.register(&format!("{prefix}.seq_global"), set);
        self.seq_local.register(&format!("{prefix}.seq_local"), set);
    }
}

struct StageBlock {
    backbone: BackboneStage,
    sa: SoftAttention,
    edge: EdgeWeights,
    gru: ConvGru,
    mar: Readout,
}

/// Per-stage node embeddings produced by the encoder; index [stage][node]
/// with stages 0..4 labeled 2..=5 and nodes (FRAME0, FLOW, FRAME1).
pub struct EncoderOutputs {
    pub q: Vec<[Tensor; NUM_NODES]>,
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    pub graph: GraphSpec,
    stages: Vec<StageBlock>,
}

impl Encoder {
    pub fn new<R: Rng>(rng: &mut R, cfg: EncoderConfig) -> Result<Encoder> {
        let graph = GraphSpec::new(cfg.message_iterations)?;
        let widths = cfg.stage_channels();
        let mut stages = Vec::with_capacity(NUM_STAGES);
        let mut in_c = 3;
        for &out_c in &widths {
            let rank = cfg.stage_rank(out_c);
            stages.push(StageBlock {
                backbone: BackboneStage::new(rng, in_c, out_c),
                sa: SoftAttention::new(rng, out_c),
                edge: EdgeWeights::new(rng, out_c, rank),
                gru: ConvGru::new(rng, out_c),
                mar: Readout::new(rng, out_c, cfg.readout_gated),
            });
            in_c = out_c;
        }
        Ok(Encoder { cfg, graph, stages })
    }

    pub fn register(&self, prefix: &str, set: &mut ParamSet) {
        for (stage, label) in self.stages.iter().zip(STAGE_LABELS) {
            let p = format!("{prefix}.stage{label}");
            stage.backbone.register(&format!("{p}.backbone"), set);
            stage.sa.register(&format!("{p}.sa"), set);
            stage.edge.register(&format!("{p}.edge"), set);
            stage.gru.register(&format!("{p}.gru"), set);
            stage.mar.register(&format!("{p}.mar"), set);
        }
    }

    /// Flatten each sample of [N,C,H,W] to [H·W, C].
    fn flatten_samples(tape: &Tape, x: &Tensor) -> Result<Vec<Tensor>> {
        let s = x.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let mut out = Vec::with_capacity(n);
        for ni in 0..n {
            let sel = tape.batch_select(x, ni)?;
            let mat = tape.reshape(&sel, &[c, h * w])?;
            out.push(tape.transpose2d(&mat)?);
        }
        Ok(out)
    }

    /// Reassemble per-sample [HW,C] messages into [N,C,H,W].
    fn assemble_samples(
        tape: &Tape,
        flats: &[Tensor],
        c: usize,
        h: usize,
        w: usize,
    ) -> Result<Tensor> {
        let mut imgs = Vec::with_capacity(flats.len());
        for f in flats {
            let t = tape.transpose2d(f)?;
            imgs.push(tape.reshape(&t, &[1, c, h, w])?);
        }
        let refs: Vec<&Tensor> = imgs.iter().collect();
        tape.batch_stack(&refs)
    }

    /// Run the full hierarchy. Inputs are the three node images
    /// [N,3,H,W] in node order (I_k, O_k, I_{k+1}); H and W must be
    /// divisible by 16.
    pub fn forward(
        &self,
        tape: &Tape,
        inputs: &[Tensor; NUM_NODES],
        phase: Phase,
    ) -> Result<EncoderOutputs> {
        let s = inputs[0].shape().to_vec();
        for x in inputs.iter() {
            if x.shape() != s.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    expected: s.clone(),
                    got: x.shape().to_vec(),
                });
            }
        }
        if s.len() != 4 || s[1] != 3 {
            return Err(TensorError::Dimension(format!(
                "encoder expects [N,3,H,W] inputs, got {s:?}"
            )));
        }
        if s[2] % TOTAL_STRIDE != 0 || s[3] % TOTAL_STRIDE != 0 {
            return Err(TensorError::Dimension(format!(
                "input extent {}x{} not divisible by {TOTAL_STRIDE}",
                s[2], s[3]
            )));
        }

        let n = s[0];
        let mut current: Vec<Tensor> = inputs.to_vec();
        let mut q_all: Vec<[Tensor; NUM_NODES]> = Vec::with_capacity(NUM_STAGES);
        for stage in &self.stages {
            // Backbone + soft attention per node.
            let mut state: Vec<Tensor> = Vec::with_capacity(NUM_NODES);
            for x in &current {
                let h = stage.backbone.forward(tape, x, phase)?;
                state.push(stage.sa.forward(tape, &h)?);
            }
            let sh = state[0].shape().to_vec();
            let (c, h, w) = (sh[1], sh[2], sh[3]);

            let rounds = self.graph.message_iterations;
            let mut updates: Vec<Vec<Tensor>> = Vec::new();
            for round in 0..rounds {
                let flats: Vec<Vec<Tensor>> = state
                    .iter()
                    .map(|t| Self::flatten_samples(tape, t))
                    .collect::<Result<_>>()?;
                let projected: Vec<Vec<Tensor>> = flats
                    .iter()
                    .map(|per_sample| {
                        per_sample
                            .iter()
                            .map(|f| stage.edge.project(tape, f))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<_>>()?;

                // One affinity per unordered pair per sample; the reverse
                // edge is its exact transpose. edges[t][u][sample] = e_{t,u}.
                let mut edges: Vec<Vec<Vec<Tensor>>> =
                    vec![vec![Vec::new(); NUM_NODES]; NUM_NODES];
                for (a, b) in self.graph.pairs() {
                    for ni in 0..n {
                        let gb_t = tape.transpose2d(&projected[b][ni])?;
                        let e_ab = tape.matmul(&projected[a][ni], &gb_t)?;
                        let e_ba = tape.transpose2d(&e_ab)?;
                        edges[a][b].push(e_ab);
                        edges[b][a].push(e_ba);
                    }
                }

                // Message aggregation + ConvGRU update per directed edge.
                let mut round_updates: Vec<Vec<Tensor>> = Vec::with_capacity(NUM_NODES);
                for t in self.graph.nodes() {
                    let mut per_neighbor = Vec::with_capacity(2);
                    for u in self.graph.neighbors(t) {
                        let mut msg_flats = Vec::with_capacity(n);
                        for ni in 0..n {
                            msg_flats.push(aggregate_message(
                                tape,
                                &flats[u][ni],
                                &edges[t][u][ni],
                            )?);
                        }
                        let m = Self::assemble_samples(tape, &msg_flats, c, h, w)?;
                        per_neighbor.push(stage.gru.forward(tape, &state[t], &m)?);
                    }
                    round_updates.push(per_neighbor);
                }

                if round + 1 < rounds {
                    // Carry the mean of the neighbor updates into the next
                    // message-passing round.
                    for (t, per_neighbor) in round_updates.iter().enumerate() {
                        let sum = tape.add(&per_neighbor[0], &per_neighbor[1])?;
                        state[t] = tape.mul_scalar(&sum, 0.5)?;
                    }
                }
                updates = round_updates;
            }

            let q0 = stage.mar.forward(tape, &updates[FRAME0], phase)?;
            let q1 = stage.mar.forward(tape, &updates[FLOW], phase)?;
            let q2 = stage.mar.forward(tape, &updates[FRAME1], phase)?;
            current = vec![q0.clone(), q1.clone(), q2.clone()];
            q_all.push([q0, q1, q2]);
        }
        Ok(EncoderOutputs { q: q_all })
    }
}
