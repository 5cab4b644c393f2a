//! Per-sample cost of one MNIST-shaped shard (7 qubits, 56 features).

use std::time::Instant;

use dqnn::gradients::adjoint_grad_weighted;
use dqnn::model::shard_forward;
use dqnn::{build_architecture, Observable};

fn main() {
    let arch = build_architecture(7, 56).unwrap();
    let params: Vec<f64> = (0..arch.n_params()).map(|i| (i as f64 * 0.37).sin()).collect();
    let x: Vec<f64> = (0..56).map(|i| (i as f64 * 0.11).cos().abs()).collect();
    let obs = Observable::default_set();
    let n = 2000;

    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..n {
        acc += shard_forward(&arch, &params, &x, &obs).unwrap()[0];
    }
    println!("forward  {:.1} us", t.elapsed().as_secs_f64() / n as f64 * 1e6);

    let psi = arch.final_state(&params, &x).unwrap();
    let w = vec![0.1; obs.len()];
    let t = Instant::now();
    for _ in 0..n {
        acc += adjoint_grad_weighted(&arch, &params, &x, &psi, &obs, &w).unwrap()[0];
    }
    println!("backward {:.1} us", t.elapsed().as_secs_f64() / n as f64 * 1e6);
    std::hint::black_box(acc);
}
