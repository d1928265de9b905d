//! Binary hashing checked against unpacked, loop-by-loop recomputation.

use std::collections::BTreeSet;

use latcode::codebook::{Codebook, Stream};
use latcode::hashing::{
    argmin_sets, binarize_codebook, concordance, hyperplane_eval, optimize_bits, optimize_bits_with_stats, pair_count,
    BinaryCodebook,
};
use latcode::kernels::euclidean;
use proptest::prelude::*;

/// Small integer coordinates so that ties, duplicate rows and on-plane rows occur.
fn lattice_codebook() -> impl Strategy<Value = Codebook> {
    (2usize..=10, 1usize..=3).prop_flat_map(|(k, d)| {
        prop::collection::vec(-2i8..=2, k * d).prop_map(move |v| {
            Codebook::from_flat(Stream::Normal, k, d, v.into_iter().map(f64::from).collect()).unwrap()
        })
    })
}

fn continuous_codebook() -> impl Strategy<Value = Codebook> {
    (2usize..=12, 1usize..=4).prop_flat_map(|(k, d)| {
        prop::collection::vec(-3.0f64..3.0, k * d)
            .prop_map(move |v| Codebook::from_flat(Stream::Normal, k, d, v).unwrap())
    })
}

/// One sign vector per row, pairs in lexicographic order.
fn sign_rows(cb: &Codebook) -> Vec<Vec<bool>> {
    let k = cb.k();
    (0..k)
        .map(|r| {
            let mut bits = Vec::new();
            for i in 0..k {
                for j in i + 1..k {
                    bits.push(hyperplane_eval(cb.row(i), cb.row(j), cb.row(r)) >= 0.0);
                }
            }
            bits
        })
        .collect()
}

fn unpack(b: &BinaryCodebook) -> Vec<Vec<bool>> {
    (0..b.k())
        .map(|r| (0..b.e_bits()).map(|t| b.bit(r, t)).collect())
        .collect()
}

fn mismatches(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn naive_argmin(rows: &[Vec<bool>]) -> Vec<BTreeSet<usize>> {
    (0..rows.len())
        .map(|i| {
            let dist: Vec<(usize, usize)> = (0..rows.len())
                .filter(|&j| j != i)
                .map(|j| (j, mismatches(&rows[i], &rows[j])))
                .collect();
            let min = dist.iter().map(|&(_, h)| h).min().unwrap();
            dist.into_iter().filter(|&(_, h)| h == min).map(|(j, _)| j).collect()
        })
        .collect()
}

fn naive_topq(dist: &[f64], anchor: usize, q: usize) -> BTreeSet<usize> {
    let mut order: Vec<usize> = (0..dist.len()).filter(|&j| j != anchor).collect();
    // stable sort keeps index order among equal distances
    order.sort_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap());
    order.into_iter().take(q).collect()
}

#[test]
fn bit_layout_of_a_known_codebook() {
    // rows on a line at 0, 1 and 3
    let cb = Codebook::from_rows(Stream::Normal, &[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
    let b = binarize_codebook(&cb).unwrap().codebook;
    assert_eq!(b.pairs(), &[(0, 1), (0, 2), (1, 2)]);
    let rows = unpack(&b);
    assert_eq!(rows[0], vec![true, true, true]);
    assert_eq!(rows[1], vec![false, true, true]);
    assert_eq!(rows[2], vec![false, false, false]);
    assert_eq!(b.hamming(0, 2), 3);
}

#[test]
fn pair_count_closed_form() {
    for k in 2..200 {
        let by_loop: usize = (0..k).map(|i| k - 1 - i).sum();
        assert_eq!(pair_count(k), by_loop);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bits_match_hyperplane_signs(cb in continuous_codebook()) {
        let b = binarize_codebook(&cb).unwrap().codebook;
        prop_assert_eq!(unpack(&b), sign_rows(&cb));
    }

    #[test]
    fn hamming_counts_disagreeing_hyperplanes(cb in continuous_codebook()) {
        let b = binarize_codebook(&cb).unwrap().codebook;
        let signs = sign_rows(&cb);
        for i in 0..cb.k() {
            for j in 0..cb.k() {
                prop_assert_eq!(b.hamming(i, j) as usize, mismatches(&signs[i], &signs[j]));
            }
        }
    }

    #[test]
    fn argmin_sets_match_unpacked_oracle(cb in lattice_codebook()) {
        let b = binarize_codebook(&cb).unwrap().codebook;
        let fast: Vec<BTreeSet<usize>> = argmin_sets(&b)
            .into_iter()
            .map(|s| s.into_iter().map(|j| j as usize).collect())
            .collect();
        prop_assert_eq!(fast, naive_argmin(&unpack(&b)));
    }

    #[test]
    fn optimize_preserves_argmin_sets_and_distinctness(cb in lattice_codebook()) {
        let b = binarize_codebook(&cb).unwrap().codebook;
        let (opt, stats) = optimize_bits_with_stats(&b);
        let (before, after) = (unpack(&b), unpack(&opt));
        prop_assert_eq!(naive_argmin(&before), naive_argmin(&after));
        for i in 0..cb.k() {
            for j in 0..cb.k() {
                prop_assert_eq!(before[i] == before[j], after[i] == after[j]);
            }
        }
        prop_assert_eq!(stats.kept_bits, opt.e_bits());
        prop_assert!(opt.e_bits() <= b.e_bits());
    }

    #[test]
    fn optimize_is_a_fixed_point(cb in lattice_codebook()) {
        let opt = optimize_bits(&binarize_codebook(&cb).unwrap().codebook);
        prop_assert_eq!(optimize_bits(&opt), opt);
    }

    #[test]
    fn optimize_keeps_a_subsequence_of_pairs(cb in continuous_codebook()) {
        let b = binarize_codebook(&cb).unwrap().codebook;
        let opt = optimize_bits(&b);
        let mut it = b.pairs().iter();
        for p in opt.pairs() {
            prop_assert!(it.any(|q| q == p), "pair {:?} out of order or missing", p);
        }
    }

    #[test]
    fn concordance_matches_naive_loops(cb in continuous_codebook(), q in 1usize..4) {
        prop_assume!(q < cb.k());
        let b = optimize_bits(&binarize_codebook(&cb).unwrap().codebook);
        let rows = unpack(&b);
        let k = cb.k();
        let mut total = 0.0;
        for i in 0..k {
            let euc: Vec<f64> = (0..k).map(|j| euclidean(cb.row(i), cb.row(j))).collect();
            let ham: Vec<f64> = (0..k).map(|j| mismatches(&rows[i], &rows[j]) as f64).collect();
            let (a, h) = (naive_topq(&euc, i, q), naive_topq(&ham, i, q));
            total += a.intersection(&h).count() as f64 / a.union(&h).count() as f64;
        }
        let expected = total / k as f64;
        prop_assert!((concordance(&cb, &b, q).unwrap() - expected).abs() < 1e-12);
    }
}
