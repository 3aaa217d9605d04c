use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use lodo::neighbors::{farthest_point_sampling, knn, radius_group, reference};
use lodo_bench::sweep_points;

fn fps(c: &mut Criterion) {
    let mut g = c.benchmark_group("fps_1024");
    for n in [16_384, 100_000] {
        let pts = sweep_points(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &pts, |b, pts| {
            b.iter(|| farthest_point_sampling(black_box(pts), 1024, 0).unwrap())
        });
    }
    g.finish();
}

fn grouping(c: &mut Criterion) {
    let pts = sweep_points(100_000, 2);
    let centroids = farthest_point_sampling(&pts, 1024, 0).unwrap();
    let mut g = c.benchmark_group("radius_group_100k");
    g.sample_size(10);
    g.bench_function("grid", |b| {
        b.iter(|| radius_group(black_box(&pts), &centroids, 1.0, 8).unwrap())
    });
    g.bench_function("brute_force", |b| {
        b.iter(|| reference::radius_group(black_box(&pts), &centroids, 1.0, 8).unwrap())
    });
    g.finish();
}

fn nearest(c: &mut Criterion) {
    let pts = sweep_points(16_384, 3);
    let queries = sweep_points(1024, 4);
    c.bench_function("knn_16_of_16k", |b| {
        b.iter(|| knn(black_box(&queries), &pts, 16).unwrap())
    });
}

criterion_group!(benches, fps, grouping, nearest);
criterion_main!(benches);
