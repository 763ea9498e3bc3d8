use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use replab_bench::{random_matrix, relu_capture};
use replab_core::linalg::{svd, sym_eig};
use replab_core::metrics::characteristics;
use replab_core::mi::{mi_zx_bounds, mi_zy_bounds};
use replab_core::{Network, RegKind, RegularizerConfig};

fn decompositions(c: &mut Criterion) {
    let mut g = c.benchmark_group("linalg");
    for n in [20usize, 100] {
        let a = random_matrix(n, n, 1);
        g.bench_with_input(BenchmarkId::new("svd", n), &a, |b, a| b.iter(|| svd(black_box(a)).unwrap()));
        let s = a.t_matmul(&a);
        g.bench_with_input(BenchmarkId::new("sym_eig", n), &s, |b, s| b.iter(|| sym_eig(black_box(s)).unwrap()));
    }
    g.finish();
}

fn training_step(c: &mut Criterion) {
    let net = Network::mlp(784, &[100; 5], 10, 0).unwrap();
    let x = random_matrix(100, 784, 2).map(f64::abs);
    let y: Vec<usize> = (0..100).map(|i| i % 10).collect();
    let mut g = c.benchmark_group("network");
    g.bench_function("forward_backward_batch100", |b| {
        b.iter(|| net.loss_gradient(black_box(&x), &y, &[], 0).unwrap())
    });
    let cr = [RegularizerConfig::new(RegKind::CwCR, 0.1, 5)];
    g.bench_function("forward_backward_cw_cr", |b| {
        b.iter(|| net.loss_gradient(black_box(&x), &y, &cr, 0).unwrap())
    });
    g.finish();
}

fn analysis(c: &mut Criterion) {
    let cap = relu_capture(2000, 100, 10, 3);
    let mut g = c.benchmark_group("analysis");
    g.sample_size(10);
    g.bench_function("characteristics_2000x100", |b| b.iter(|| characteristics(black_box(&cap), true).unwrap()));
    let small = relu_capture(500, 100, 10, 4);
    g.bench_function("mi_bounds_500x100", |b| {
        b.iter(|| (mi_zx_bounds(black_box(&small), 0.1).unwrap(), mi_zy_bounds(&small, 0.1).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, decompositions, training_step, analysis);
criterion_main!(benches);
