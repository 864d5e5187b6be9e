use std::time::Instant;
use hgpu::encoder::*;
use hgpu::nn::Phase;
use hgpu::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(label: &str, mut f: impl FnMut()) {
    let t0 = Instant::now();
    f();
    println!("{label}: {:.0}ms", t0.elapsed().as_secs_f64() * 1e3);
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tape = Tape::inference();
    // stage-2 sized tensors: batch 4, C=16, 32x32
    let state: Vec<Tensor> = (0..3).map(|_| {
        Tensor::new((0..4*16*1024).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[4,16,32,32]).unwrap()
    }).collect();
    let ew = EdgeWeights::new(&mut rng, 16, 4);
    let gru = ConvGru::new(&mut rng, 16);
    let mar = Readout::new(&mut rng, 16, true);

    // flatten per sample
    let mut flats: Vec<Vec<Tensor>> = Vec::new();
    t("flatten 3 nodes x 4 samples", || {
        flats = state.iter().map(|s| {
            (0..4).map(|n| {
                let sel = tape.batch_select(s, n).unwrap();
                let m = tape.reshape(&sel, &[16, 1024]).unwrap();
                tape.transpose2d(&m).unwrap()
            }).collect()
        }).collect();
    });
    let mut edges: Vec<(Tensor, Tensor)> = Vec::new();
    t("affinity 3 pairs x 4 samples", || {
        for (a, b) in [(0usize,1usize),(0,2),(1,2)] {
            for n in 0..4 {
                edges.push(edge_affinity(&tape, &flats[a][n], &flats[b][n], &ew).unwrap());
            }
        }
    });
    let mut msgs: Vec<Tensor> = Vec::new();
    t("messages 6 directed x 4 samples", || {
        for (e, _) in &edges {
            for n in 0..4 {
                let _ = n;
                msgs.push(aggregate_message(&tape, &flats[1][0], e).unwrap());
            }
        }
    });
    t("gru 6 edges (batch 4)", || {
        for _ in 0..6 {
            let u = gru.forward(&tape, &state[0], &state[1]).unwrap();
            std::hint::black_box(u);
        }
    });
    t("mar 3 nodes (batch 4)", || {
        for _ in 0..3 {
            let q = mar.forward(&tape, &[state[0].clone(), state[1].clone()], Phase::Train).unwrap();
            std::hint::black_box(q);
        }
    });
    let bb = BackboneStage::new(&mut rng, 3, 16);
    let img = Tensor::new((0..4*3*64*64).map(|_| rng.gen_range(0.0..1.0)).collect(), &[4,3,64,64]).unwrap();
    t("backbone stage2 x3 nodes", || {
        for _ in 0..3 {
            std::hint::black_box(bb.forward(&tape, &img, Phase::Train).unwrap());
        }
    });
}
