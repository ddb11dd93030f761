use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pnnid_bench::fixture;
use pnnid_core::certify::{cert_architecture, cert_network_weights};
use pnnid_core::krank::{kruskal_rank, DEFAULT_TOL};
use pnnid_core::network::{expand, Architecture};
use pnnid_core::neurovariety::coefficient_jacobian;
use pnnid_core::recover::{recover_deep, recover_with_bias, RecoverOptions};
use pnnid_core::rng::{gaussian_matrix, seeded};

fn bench_expand(c: &mut Criterion) {
    let mut group = c.benchmark_group("expand");
    for (widths, degrees) in [(vec![3, 3, 2], vec![2]), (vec![4, 4, 4, 2], vec![2, 2]), (vec![3, 3, 3, 2], vec![3, 2])] {
        let f = fixture(&widths, &degrees, false, 1);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{widths:?}")), &f, |b, f| {
            b.iter(|| expand(black_box(&f.arch), black_box(&f.params)).unwrap())
        });
    }
    group.finish();
}

fn bench_kruskal_rank(c: &mut Criterion) {
    let mut group = c.benchmark_group("kruskal_rank");
    for cols in [6, 10, 14] {
        let m = gaussian_matrix(&mut seeded(cols as u64), 5, cols);
        group.bench_with_input(BenchmarkId::from_parameter(cols), &m, |b, m| {
            b.iter(|| kruskal_rank(black_box(m), DEFAULT_TOL).unwrap())
        });
    }
    group.finish();
}

fn bench_certify(c: &mut Criterion) {
    let arch = Architecture::new(vec![8, 6, 5, 4, 3], vec![2, 3, 2], false).unwrap();
    c.bench_function("cert_architecture", |b| b.iter(|| cert_architecture(black_box(&arch)).unwrap()));
    let f = fixture(&[6, 5, 4, 3], &[2, 2], false, 2);
    c.bench_function("cert_network_weights", |b| {
        b.iter(|| cert_network_weights(black_box(&f.arch), black_box(&f.params), DEFAULT_TOL).unwrap())
    });
}

fn bench_jacobian(c: &mut Criterion) {
    let f = fixture(&[3, 3, 2, 2], &[2, 2], false, 3);
    c.bench_function("coefficient_jacobian", |b| {
        b.iter(|| coefficient_jacobian(black_box(&f.arch), black_box(&f.params)).unwrap())
    });
}

fn bench_recover(c: &mut Criterion) {
    let mut group = c.benchmark_group("recover");
    group.sample_size(10);
    let opts = RecoverOptions::default();
    let two = fixture(&[3, 2, 2], &[2], false, 4);
    group.bench_function("pencil (3,2,2)", |b| b.iter(|| recover_deep(&two.poly, &two.arch, &opts).unwrap()));
    let wide = fixture(&[5, 4, 3], &[2], false, 5);
    group.bench_function("pencil (5,4,3)", |b| b.iter(|| recover_deep(&wide.poly, &wide.arch, &opts).unwrap()));
    let deep = fixture(&[3, 3, 2, 2], &[2, 2], false, 6);
    group.bench_function("fit (3,3,2,2)", |b| b.iter(|| recover_deep(&deep.poly, &deep.arch, &opts).unwrap()));
    let biased = fixture(&[3, 2, 2], &[2], true, 7);
    group.bench_function("biased (3,2,2)", |b| {
        b.iter(|| recover_with_bias(&biased.poly, &biased.arch, &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_expand, bench_kruskal_rank, bench_certify, bench_jacobian, bench_recover);
criterion_main!(benches);
