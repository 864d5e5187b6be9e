use std::time::Instant;
use hgpu::model::{HgpuModel, ModelConfig};
use hgpu::nn::Phase;
use hgpu::synthdata::{generate_sequence, SceneConfig, LoadedSequence};
use hgpu::train::{make_sample, batch_inputs};
use hgpu::tensor::Tape;

fn main() {
    let model = HgpuModel::new(ModelConfig::default(), 1).unwrap();
    let seq = generate_sequence(&SceneConfig { seed: 5, ..SceneConfig::default() }).unwrap();
    let loaded = LoadedSequence { id: "s".into(), width: seq.width, height: seq.height,
        frames: seq.frames, flow_rgb: seq.flow_rgb, masks: seq.masks };
    let samples: Vec<_> = (0..4).map(|k| make_sample(&loaded, k, false)).collect();
    let (inputs, m0, m1) = batch_inputs(&samples).unwrap();
    let params = model.params();

    // warmup + timed forward+backward (batch 4)
    for label in ["warmup", "timed"] {
        let t0 = Instant::now();
        let tape = Tape::new();
        let out = model.forward(&tape, &inputs, Phase::Train).unwrap();
        let l0 = tape.weighted_bce(&out.refined[0], &m0).unwrap();
        let l1 = tape.weighted_bce(&out.refined[1], &m1).unwrap();
        let loss = tape.add(&l0, &l1).unwrap();
        let fwd = t0.elapsed();
        params.zero_grads();
        let t1 = Instant::now();
        tape.backward(&loss).unwrap();
        println!("{label}: fwd {:.0}ms bwd {:.0}ms loss {:.4}", fwd.as_secs_f64()*1e3, t1.elapsed().as_secs_f64()*1e3, loss.item());
    }
    // inference pass batch 7 (val cost per sequence)
    let t2 = Instant::now();
    let maps = hgpu::train::predict_sequence(&model, &loaded, false).unwrap();
    println!("predict_sequence(8 frames): {:.0}ms ({} maps)", t2.elapsed().as_secs_f64()*1e3, maps.len());
}
