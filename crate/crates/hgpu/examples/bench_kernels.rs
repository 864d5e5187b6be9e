use std::time::Instant;

fn bench(label: &str, flops: f64, mut f: impl FnMut()) {
    let t0 = Instant::now();
    let mut n = 0;
    while t0.elapsed().as_secs_f64() < 0.5 {
        f();
        n += 1;
    }
    let per = t0.elapsed().as_secs_f64() / n as f64;
    println!("{label}: {:.1}ms  {:.2} Gflop/s", per * 1e3, flops / per / 1e9);
}

fn main() {
    // message-shaped matmul: [1024,1024]x[1024,16]
    let a = vec![0.5f64; 1024 * 1024];
    let b = vec![0.25f64; 1024 * 16];
    bench("matmul 1024x1024x16", 2.0 * 1024.0 * 1024.0 * 16.0, || {
        let c = hgpu::tensor::bench_matmul(&a, &b, 1024, 1024, 16);
        std::hint::black_box(c);
    });
    // conv-shaped: [16,144]x[144,1024]
    let w = vec![0.5f64; 16 * 144];
    let col = vec![0.25f64; 144 * 1024];
    bench("matmul 16x144x1024", 2.0 * 16.0 * 144.0 * 1024.0, || {
        let c = hgpu::tensor::bench_matmul(&w, &col, 16, 144, 1024);
        std::hint::black_box(c);
    });
    // affinity-shaped: [1024,4]x[4,1024]
    let g = vec![0.5f64; 1024 * 4];
    let gt = vec![0.25f64; 4 * 1024];
    bench("matmul 1024x4x1024", 2.0 * 1024.0 * 4.0 * 1024.0, || {
        let c = hgpu::tensor::bench_matmul(&g, &gt, 1024, 4, 1024);
        std::hint::black_box(c);
    });
    // gru-shaped: [16,288]x[288,1024]
    let w2 = vec![0.5f64; 16 * 288];
    let col2 = vec![0.25f64; 288 * 1024];
    bench("matmul 16x288x1024", 2.0 * 16.0 * 288.0 * 1024.0, || {
        let c = hgpu::tensor::bench_matmul(&w2, &col2, 16, 288, 1024);
        std::hint::black_box(c);
    });
    // softmax rows 1024x1024
    let x = vec![0.5f64; 1024 * 1024];
    bench("softmax 1024x1024", 1024.0 * 1024.0 * 2.0, || {
        let y = hgpu::tensor::bench_softmax(&x, 1024, 1024);
        std::hint::black_box(y);
    });
    // im2col 16ch 32x32 k3
    let img = vec![0.5f64; 16 * 32 * 32];
    bench("im2col 16x32x32 k3", 16.0 * 9.0 * 1024.0, || {
        let c = hgpu::tensor::bench_im2col(&img, 16, 32, 32, 3, 3, 1, 1, 1);
        std::hint::black_box(c);
    });
}
