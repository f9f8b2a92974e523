use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use progclust_bench::{cohort, spiral_matrix};
use progclust_core::cluster::{ahc_complete, kmedoids};
use progclust_core::curves::fit_sigmoid;
use progclust_core::embedding::{embed, EmbeddingParams};
use progclust_core::evalstats::logrank_pair;
use progclust_core::pipeline::{run_all, Config, Prepared};

fn sigmoid(c: &mut Criterion) {
    let patients = cohort(20, 1);
    c.bench_function("fit_sigmoid/16_restarts", |b| {
        b.iter(|| {
            for s in &patients {
                black_box(fit_sigmoid(s, 16, 7));
            }
        })
    });
}

fn clustering(c: &mut Criterion) {
    let mut group = c.benchmark_group("cluster");
    for n in [100, 300] {
        let d = spiral_matrix(n);
        group.bench_with_input(BenchmarkId::new("pam_k4", n), &d, |b, d| b.iter(|| kmedoids(d, 4, 0).unwrap()));
        group.bench_with_input(BenchmarkId::new("ahc_complete", n), &d, |b, d| b.iter(|| ahc_complete(d, 4).unwrap()));
    }
    group.finish();
}

fn embedding(c: &mut Criterion) {
    let d = spiral_matrix(150);
    let params = EmbeddingParams { n_epochs: 200, ..EmbeddingParams::default() };
    c.bench_function("embed/150_points_200_epochs", |b| b.iter(|| embed(&d, &params).unwrap()));
}

fn logrank(c: &mut Criterion) {
    let g1: Vec<(f64, bool)> = (0..200).map(|i| ((i * 7 % 365) as f64, i % 4 != 0)).collect();
    let g2: Vec<(f64, bool)> = (0..200).map(|i| ((i * 11 % 500) as f64, i % 3 != 0)).collect();
    c.bench_function("logrank/200_vs_200", |b| b.iter(|| logrank_pair(black_box(&g1), black_box(&g2)).unwrap()));
}

fn grid(c: &mut Criterion) {
    let config = Config::default();
    let p = Prepared::build(cohort(150, 808), &config).unwrap();
    let specs = p.grid();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("prepare_150", |b| b.iter(|| Prepared::build(cohort(150, 808), &config).unwrap()));
    group.bench_function("run_all_150", |b| b.iter(|| run_all(&p, &specs)));
    group.finish();
}

criterion_group!(benches, sigmoid, clustering, embedding, logrank, grid);
criterion_main!(benches);
