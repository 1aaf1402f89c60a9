use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ntml_bench::{random_labels, random_matrix};
use ntml_core::correction::knn_correct;
use ntml_core::losses::{estimate_weights, sinkhorn_assign, FeatureCache, SimilarityConfig, SinkhornConfig};

fn sinkhorn(c: &mut Criterion) {
    let mut g = c.benchmark_group("sinkhorn");
    for (b, k) in [(32, 8), (64, 10), (256, 50)] {
        // prototype scores are cosines, so keep them in [-1, 1]
        let scores = random_matrix(b, k, 1).map(f64::tanh);
        let cfg = SinkhornConfig::default();
        g.bench_with_input(BenchmarkId::from_parameter(format!("{b}x{k}")), &scores, |bench, s| {
            bench.iter(|| sinkhorn_assign(black_box(s), &cfg).unwrap())
        });
    }
    g.finish();
}

fn knn(c: &mut Criterion) {
    let mut g = c.benchmark_group("knn_correct");
    g.sample_size(20);
    for n in [200, 1000, 2000] {
        let feats = random_matrix(n, 64, 2);
        let labels = random_labels(n, 10, 3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| knn_correct(black_box(&feats), &labels, 10).unwrap())
        });
    }
    g.finish();
}

fn weights(c: &mut Criterion) {
    let mut g = c.benchmark_group("correspondence_weights");
    g.sample_size(20);
    for n in [500, 2000] {
        let cache = FeatureCache::new(&random_matrix(n, 32, 4), &random_matrix(n, 32, 5)).unwrap();
        let cfg = SimilarityConfig::default();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| estimate_weights(black_box(&cache), &cfg))
        });
    }
    g.finish();
}

criterion_group!(benches, sinkhorn, knn, weights);
criterion_main!(benches);
