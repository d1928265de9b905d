//! Per-pair distance kernels, and the all-pairs sweep at one worker versus
//! the default pool.
//!
//! Build with `--no-default-features` to measure the sequential fallback.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use latcode::codebook::{learn_codebook, LearnConfig};
use latcode::hashing::{binarize_codebook, optimize_bits, round_small_norms, BinaryCodebook};
use latcode::kernels::{euclidean, hamming};
use latcode::par;
use latcode::synth::{clustered_vectors, ClusterConfig};
use latcode::Codebook;

fn fixture(k: usize, d: usize) -> (Codebook, BinaryCodebook, BinaryCodebook) {
    let vectors = clustered_vectors(&ClusterConfig {
        d,
        seed: 7,
        ..ClusterConfig::default()
    })
    .unwrap();
    let cfg = LearnConfig {
        k,
        seed: 7,
        ..LearnConfig::default()
    };
    let cb = round_small_norms(&learn_codebook(&vectors, d, &cfg).unwrap(), 1e-5);
    let full = binarize_codebook(&cb).unwrap().codebook;
    let opt = optimize_bits(&full);
    (cb, full, opt)
}

fn all_pairs_euclidean(cb: &Codebook) -> f64 {
    let k = cb.k();
    par::map_range(k, |i| (0..k).map(|j| euclidean(cb.row(i), cb.row(j))).sum::<f64>())
        .into_iter()
        .sum()
}

fn all_pairs_hamming(b: &BinaryCodebook) -> u64 {
    let k = b.k();
    par::map_range(k, |i| (0..k).map(|j| hamming(b.row(i), b.row(j)) as u64).sum::<u64>())
        .into_iter()
        .sum()
}

fn pair_kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("pair");
    for &(k, d) in &[(128usize, 16usize), (512, 64)] {
        let (cb, full, opt) = fixture(k, d);
        let (a, b) = (1, k / 2);
        group.bench_function(BenchmarkId::new("euclidean", format!("K{k}_D{d}")), |bench| {
            bench.iter(|| euclidean(black_box(cb.row(a)), black_box(cb.row(b))))
        });
        group.bench_function(
            BenchmarkId::new("hamming_optimized", format!("K{k}_E{}", opt.e_bits())),
            |bench| bench.iter(|| hamming(black_box(opt.row(a)), black_box(opt.row(b)))),
        );
        group.bench_function(
            BenchmarkId::new("hamming_full", format!("K{k}_E{}", full.e_bits())),
            |bench| bench.iter(|| hamming(black_box(full.row(a)), black_box(full.row(b)))),
        );
    }
    group.finish();
}

fn all_pairs(c: &mut Criterion) {
    let (cb, _, opt) = fixture(512, 64);
    let mut group = c.benchmark_group("all_pairs_K512");
    group.throughput(Throughput::Elements((cb.k() * cb.k()) as u64));
    for (label, jobs) in [("jobs1", Some(1)), ("default", None)] {
        group.bench_function(BenchmarkId::new("euclidean", label), |bench| {
            bench.iter(|| par::with_jobs(jobs, || all_pairs_euclidean(black_box(&cb))))
        });
        group.bench_function(BenchmarkId::new("hamming", label), |bench| {
            bench.iter(|| par::with_jobs(jobs, || all_pairs_hamming(black_box(&opt))))
        });
    }
    group.finish();
}

criterion_group!(benches, pair_kernels, all_pairs);
criterion_main!(benches);
