//! Benchmarks of the numerically hot paths: integration, embedding,
//! neighbor regression, and a full training step's forward/backward pass.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::Rng;

use edmcast::dynamics::{integrate_rk4, lorenz_chaotic};
use edmcast::model::kernel_regress;
use edmcast::nn::Forward;
use edmcast::train::composite_loss;
use edmcast::{rng, DeepEdm, LossConfig, ModelConfig, SimplexConfig, Tape};

fn random_vec(n: usize, purpose: &str) -> Vec<f64> {
    let mut r = rng::stream(17, purpose);
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn bench_rk4(c: &mut Criterion) {
    c.bench_function("rk4_lorenz_10k_steps", |b| {
        let (system, initial) = lorenz_chaotic();
        b.iter(|| {
            let traj = integrate_rk4(system, black_box(initial), 0.01, 10_000).unwrap();
            black_box(traj.states.len())
        })
    });
}

fn bench_delay_embed(c: &mut Criterion) {
    c.bench_function("delay_embed_3x2000_8lags", |b| {
        let data = random_vec(3 * 2000, "bench/embed");
        b.iter(|| {
            let mut tape = Tape::new();
            let x = tape.constant(vec![3, 2000], data.clone());
            black_box(tape.delay_embed(x, 8, 1))
        })
    });
}

fn bench_simplex(c: &mut Criterion) {
    c.bench_function("simplex_2000pts_h48", |b| {
        let (system, initial) = lorenz_chaotic();
        let traj = integrate_rk4(system, initial, 0.01, 2_000).unwrap();
        let series = traj.coordinate(0);
        let cfg = SimplexConfig::new(4, 1, 48);
        b.iter(|| black_box(edmcast::edm::simplex_forecast(&series, &cfg, 48).unwrap()))
    });
}

fn bench_kernel_regress(c: &mut Criterion) {
    c.bench_function("kernel_regress_3x144x64", |b| {
        let (t, h, m) = (96usize, 48usize, 64usize);
        let data = random_vec(3 * (t + h) * m, "bench/kernel");
        b.iter(|| {
            let mut tape = Tape::new();
            let z = tape.constant(vec![3, t + h, m], data.clone());
            black_box(kernel_regress(&mut tape, z, t, h, 1.0))
        })
    });
}

fn bench_forward_backward(c: &mut Criterion) {
    c.bench_function("forward_backward_b8_t32_h16", |b| {
        let (t, h, d, windows) = (32usize, 16usize, 3usize, 8usize);
        let cfg = ModelConfig {
            delta_t: 5,
            latent_dim: 32,
            base_hidden: 64,
            dec_hidden: 32,
            dropout_p: 0.0,
            ..ModelConfig::new(t, h)
        };
        let model = DeepEdm::new(cfg).unwrap();
        let rows = d * windows;
        let lookback: Vec<Vec<f64>> = (0..rows)
            .map(|i| random_vec(t, &format!("bench/lookback/{i}")))
            .collect();
        let target = random_vec(rows * h, "bench/target");
        let anchor: Vec<f64> = lookback.iter().map(|r| r[t - 1]).collect();
        let loss_cfg = LossConfig::default();
        b.iter(|| {
            let mut tape = Tape::new();
            let mut fw = Forward::eval(&mut tape);
            let (yhat, _) = model.forward_on_tape(&mut fw, &lookback).unwrap();
            let _binding = fw.into_binding();
            let y = tape.constant(vec![rows, h], target.clone());
            let a = tape.constant(vec![rows, 1], anchor.clone());
            let (loss, _) = composite_loss(&mut tape, yhat, y, a, d, &loss_cfg);
            black_box(tape.backward(loss))
        })
    });
}

criterion_group!(
    benches,
    bench_rk4,
    bench_delay_embed,
    bench_simplex,
    bench_kernel_regress,
    bench_forward_backward
);
criterion_main!(benches);
