use ndarray::Array2;
use std::time::Instant;

fn main() {
    for &(m, k, n) in &[(128usize, 288usize, 500usize), (500, 500, 16), (64, 576, 2000)] {
        let a = Array2::<f32>::from_elem((m, k), 1.001);
        let b = Array2::<f32>::from_elem((k, n), 0.999);
        let t0 = Instant::now();
        let mut iters = 0u64;
        let mut acc = 0.0f32;
        while t0.elapsed().as_secs_f64() < 1.0 {
            let c = a.dot(&b);
            acc += c[[0, 0]];
            iters += 1;
        }
        let flops = 2.0 * (m * k * n) as f64 * iters as f64 / t0.elapsed().as_secs_f64();
        println!("{}x{}x{}: {:.2} GFLOPS ({} iters, acc {})", m, k, n, flops / 1e9, iters, acc);
    }
}
