use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gspr_bench::{scene, small_net, voxels};
use gspr_core::net::{descriptor_forward, knn};
use gspr_core::voxel::voxelize;
use gspr_core::{CylGridConfig, NetConfig, NetParams};
use ndarray::Array2;

fn bench_voxelize(c: &mut Criterion) {
    let mut group = c.benchmark_group("voxelize");
    for count in [2_000, 20_000] {
        let s = scene(count);
        let cfg = CylGridConfig {
            n_target: 1024,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(count), &s, |b, s| {
            b.iter(|| voxelize(s, &cfg, 0).unwrap())
        });
    }
    group.finish();
}

fn bench_knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn");
    group.sample_size(20);
    for n in [1024, 4096] {
        let vs = voxels(20_000, n);
        let coords = Array2::from_shape_fn((n, 3), |(i, k)| vs.coords(i)[k]);
        group.bench_with_input(BenchmarkId::from_parameter(n), &coords, |b, coords| {
            b.iter(|| knn(coords.view(), 25).unwrap())
        });
    }
    group.finish();
}

fn bench_descriptor(c: &mut Criterion) {
    let mut group = c.benchmark_group("descriptor_forward");
    group.sample_size(10);
    let cases: [(&str, NetConfig, usize); 2] = [("small_2048", small_net(), 2048), ("default_4096", NetConfig::default(), 4096)];
    for (label, cfg, n) in cases {
        let params = NetParams::init(&cfg).unwrap();
        let vs = voxels(20_000, n);
        group.bench_function(label, |b| b.iter(|| descriptor_forward(&vs, &params).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_voxelize, bench_knn, bench_descriptor);
criterion_main!(benches);
