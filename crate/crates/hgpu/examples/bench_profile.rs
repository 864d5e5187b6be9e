use std::time::Instant;
use hgpu::encoder::{Encoder, EncoderConfig};
use hgpu::nn::Phase;
use hgpu::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = Encoder::new(&mut rng, EncoderConfig::default()).unwrap();
    let img = |rng: &mut ChaCha8Rng| {
        Tensor::new((0..4*3*64*64).map(|_| rng.gen_range(0.0..1.0)).collect(), &[4,3,64,64]).unwrap()
    };
    let inputs = [img(&mut rng), img(&mut rng), img(&mut rng)];
    // encoder only
    for _ in 0..2 {
        let tape = Tape::inference();
        let t0 = Instant::now();
        let out = enc.forward(&tape, &inputs, Phase::Train).unwrap();
        println!("encoder fwd (no tape): {:.0}ms", t0.elapsed().as_secs_f64()*1e3);
        std::hint::black_box(out);
    }
    for _ in 0..2 {
        let tape = Tape::new();
        // mark inputs as params so everything records
        for i in &inputs { let p = Tensor::param(i.to_vec(), i.shape()).unwrap(); std::hint::black_box(p); }
        let t0 = Instant::now();
        let out = enc.forward(&tape, &inputs, Phase::Train).unwrap();
        println!("encoder fwd (tape, non-grad inputs): {:.0}ms entries {}", t0.elapsed().as_secs_f64()*1e3, tape.len());
        std::hint::black_box(out);
    }
}
