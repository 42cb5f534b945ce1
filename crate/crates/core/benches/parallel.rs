//! Rayon pool versus a single worker on the data-parallel kernels.

use asoftmax::dataio::{synth_blobs, SyntheticSpec};
use asoftmax::eval::{angular_fisher_score, intra_inter_angle_stats, pair_angle_histograms};
use asoftmax::losses::asoftmax_loss_unchecked;
use asoftmax::numcore::{matmul, normalize_columns, Matrix, Rng};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPool;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    vec![
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
}

fn losses(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let x = random(&mut rng, 4096, 64);
    let w = normalize_columns(&random(&mut rng, 64, 100), 1e-12);
    let labels: Vec<usize> = (0..4096).map(|i| i % 100).collect();
    let mut group = c.benchmark_group("asoftmax_loss_4096x64_k100");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| asoftmax_loss_unchecked(&x, &w, &labels, 4, 5.0).unwrap()))
        });
    }
    group.finish();
}

fn products(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let a = random(&mut rng, 512, 256);
    let b = random(&mut rng, 256, 256);
    let mut group = c.benchmark_group("matmul_512x256x256");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| bench.iter(|| pool.install(|| matmul(&a, &b).unwrap())));
    }
    group.finish();
}

fn pairwise_eval(c: &mut Criterion) {
    let set =
        synth_blobs(&SyntheticSpec { k_classes: 20, per_class: 75, dim: 32, angular_spread: 0.4, radius_jitter: 0.2, seed: 3 }).unwrap();
    let (x, labels) = (&set.batch.features, &set.batch.labels);
    let mut group = c.benchmark_group("pairwise_eval_1500x32");
    group.sample_size(20);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("histograms", name), |b| {
            b.iter(|| pool.install(|| pair_angle_histograms(x, labels, 36).unwrap()))
        });
        group.bench_function(BenchmarkId::new("intra_inter", name), |b| {
            b.iter(|| pool.install(|| intra_inter_angle_stats(x, labels).unwrap()))
        });
        group.bench_function(BenchmarkId::new("afs", name), |b| b.iter(|| pool.install(|| angular_fisher_score(x, labels).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, losses, products, pairwise_eval);
criterion_main!(benches);
