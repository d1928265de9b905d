//! Synthetic data invariants and end-to-end determinism.

use latcode::codebook::{Codebook, Stream};
use latcode::eval::{retrieval_benchmark, BenchmarkConfig, Method};
use latcode::hashing::{binarize_codebook, optimize_bits, round_small_norms};
use latcode::par;
use latcode::synth::{clustered_vectors, generate, volume_id, ClusterConfig, SynthConfig};
use latcode::{Dataset, ReferenceIndex, Semantics};

fn small() -> SynthConfig {
    SynthConfig {
        volumes: 8,
        slices_per_volume: 8,
        label_h: 32,
        label_w: 32,
        k: 24,
        d: 8,
        epochs: 3,
        lesion_rate: 0.6,
        seed: 17,
        ..SynthConfig::default()
    }
}

fn run(config: &SynthConfig) -> (String, String) {
    let out = generate(config).unwrap();
    let mut jsonl = Vec::new();
    out.dataset.write_jsonl(&mut jsonl).unwrap();
    let bits = |cb: &Codebook| optimize_bits(&binarize_codebook(&round_small_norms(cb, 1e-5)).unwrap().codebook);
    let (nb, ab) = (bits(&out.normal), bits(&out.abnormal));
    let index = ReferenceIndex::build(out.dataset, out.normal, out.abnormal, Some(nb), Some(ab)).unwrap();
    let report = retrieval_benchmark(&index, &BenchmarkConfig::default()).unwrap();
    (String::from_utf8(jsonl).unwrap(), report.to_json())
}

#[test]
fn synth_shapes_and_code_ranges() {
    let cfg = small();
    let out = generate(&cfg).unwrap();
    let ds = &out.dataset;
    assert_eq!(ds.len(), cfg.volumes * cfg.slices_per_volume);
    let ids: Vec<String> = (0..cfg.volumes).map(volume_id).collect();
    assert_eq!(ds.volume_ids(), ids.iter().map(String::as_str).collect::<Vec<_>>());
    for cb in [&out.normal, &out.abnormal] {
        assert_eq!((cb.k(), cb.d()), (cfg.k, cfg.d));
    }
    assert_eq!(out.normal.stream(), Stream::Normal);
    assert_eq!(out.abnormal.stream(), Stream::Abnormal);
    for r in ds.records() {
        for s in [Stream::Normal, Stream::Abnormal] {
            assert_eq!(r.code(s).shape(), (cfg.grid_h, cfg.grid_w));
            assert!(r.code(s).indices().iter().all(|&c| (c as usize) < cfg.k));
            assert_eq!((r.labels(s).h(), r.labels(s).w()), (cfg.label_h, cfg.label_w));
        }
        assert!(r.normal_labels.foreground_area() > 0);
    }
}

#[test]
fn lesion_free_slices_share_one_abnormal_code() {
    let out = generate(&small()).unwrap();
    let healthy: Vec<_> = out
        .dataset
        .records()
        .iter()
        .filter(|r| r.abnormal_labels.foreground_area() == 0)
        .collect();
    assert!(healthy.len() > 1);
    assert!(healthy.iter().all(|r| r.abnormal_code == healthy[0].abnormal_code));
    assert!(out
        .dataset
        .records()
        .iter()
        .any(|r| r.abnormal_labels.foreground_area() > 0));
}

#[test]
fn jsonl_round_trip() {
    let out = generate(&small()).unwrap();
    let mut buf = Vec::new();
    out.dataset.write_jsonl(&mut buf).unwrap();
    let back = Dataset::read_jsonl(buf.as_slice()).unwrap().unwrap();
    assert_eq!(back.records(), out.dataset.records());
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let cfg = small();
    let one = par::with_jobs(Some(1), || run(&cfg));
    let four = par::with_jobs(Some(4), || run(&cfg));
    assert_eq!(one, four);
    assert_eq!(run(&cfg), one);
}

#[test]
fn different_seeds_differ() {
    let a = run(&small());
    let b = run(&SynthConfig { seed: 18, ..small() });
    assert_ne!(a.0, b.0);
}

#[test]
fn report_has_every_cell_and_oracle_dominates() {
    let out = generate(&small()).unwrap();
    let index = ReferenceIndex::build(out.dataset, out.normal, out.abnormal, None, None).unwrap();
    let config = BenchmarkConfig {
        metrics: vec![latcode::Metric::Euclidean, latcode::Metric::Angular],
        ..BenchmarkConfig::default()
    };
    let report = retrieval_benchmark(&index, &config).unwrap();
    for s in Semantics::ALL {
        let oracle = report.cell(Method::Brutal, s).unwrap().mean;
        for m in [Method::Euclidean, Method::Angular, Method::Random] {
            let cell = report.cell(m, s).unwrap();
            assert_eq!(cell.per_query.len(), report.queries.len());
            assert!(cell.mean <= oracle, "{m:?} {s}: {} > {oracle}", cell.mean);
            assert!((0.0..=1.0).contains(&cell.mean));
        }
    }
    assert!(report.cell(Method::Hamming, Semantics::Sum).is_none());
}

#[test]
fn clustered_vectors_are_seeded() {
    let cfg = ClusterConfig::default();
    let a = clustered_vectors(&cfg).unwrap();
    assert_eq!(a.len(), cfg.clusters * cfg.per_cluster * cfg.d);
    assert_eq!(a, clustered_vectors(&cfg).unwrap());
    assert_ne!(a, clustered_vectors(&ClusterConfig { seed: 1, ..cfg }).unwrap());
}
