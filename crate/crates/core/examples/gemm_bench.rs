use ndarray::{Array2, linalg::general_mat_mul};
use std::time::Instant;

fn bench(m: usize, k: usize, n: usize, reps: usize) {
    let a = Array2::<f32>::from_elem((m, k), 0.5);
    let b = Array2::<f32>::from_elem((k, n), 0.25);
    let mut c = Array2::<f32>::zeros((m, n));
    // warmup
    general_mat_mul(1.0, &a, &b, 0.0, &mut c);
    let t = Instant::now();
    for _ in 0..reps {
        general_mat_mul(1.0, &a, &b, 0.0, &mut c);
    }
    let secs = t.elapsed().as_secs_f64();
    let flops = 2.0 * (m * k * n * reps) as f64;
    println!(
        "gemm {:>4}x{:>4}x{:>4} x{:<4}: {:>8.3} s  {:>7.2} GFLOPS",
        m, k, n, reps, secs, flops / secs / 1e9
    );
}

fn main() {
    bench(256, 1152, 128, 200); // res-block conv at 16x16
    bench(4096, 243, 32, 50); // 9x9 encoder conv at 64x64
    bench(4096, 2592, 3, 20); // 9x9 decoder conv at 64x64
    bench(1024, 512, 64, 100); // 4x4 stride-2 conv at 32x32
    bench(1024, 1088, 128, 50); // discriminator conv2 with condition
}
