//! Binary hashing of a codebook with separating hyperplanes.
//!
//! Every pair of code vectors `(e_i, e_j)` defines the hyperplane that
//! perpendicularly bisects the segment between them. A code vector's bit for
//! that pair records which side of the hyperplane it lies on. With all
//! `K(K-1)/2` pairs the Hamming distance between two rows counts the
//! hyperplanes separating them.
//!
//! [`optimize_bits`] then greedily drops bits that do not change any row's
//! set of Hamming-nearest rows, scanning bit positions in order and
//! restarting the scan after every removal.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::kernels::{dot, euclidean, hamming, l2_norm};
use crate::metrics::jaccard;
use crate::par;

/// Distance matrices with fewer cells than this are updated on the calling thread.
const PAR_MIN_CELLS: usize = 1 << 16;

/// Values with magnitude below this are reported as lying on a hyperplane.
pub const INCIDENCE_EPS: f64 = 1e-12;

const INCIDENCE_SAMPLES: usize = 32;

/// Number of unordered pairs of `k` rows, i.e. the unoptimized bit length.
pub fn pair_count(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// Per-row bit strings plus the hyperplane pair behind each bit.
///
/// Rows are bit-packed row-major: bit `t` of a row lives in word `t / 64`
/// at position `t % 64`. Padding bits in the last word are zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryCodebook {
    k: usize,
    pairs: Vec<(u32, u32)>,
    words: usize,
    bits: Vec<u64>,
}

impl BinaryCodebook {
    /// Builds from packed rows. `bits.len()` must be `k * ceil(pairs/64)`.
    pub fn from_parts(k: usize, pairs: Vec<(u32, u32)>, bits: Vec<u64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("binary codebook needs k >= 2, got {k}")));
        }
        let words = words_for(pairs.len());
        if bits.len() != k * words {
            return Err(Error::DimensionMismatch {
                expected: k * words,
                actual: bits.len(),
            });
        }
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= j || j as usize >= k) {
            return Err(Error::invalid(format!(
                "invalid hyperplane pair ({i}, {j}) for k = {k}"
            )));
        }
        let tail = pairs.len() % 64;
        if tail != 0 {
            let mask = !0u64 << tail;
            if (0..k).any(|r| bits[r * words + words - 1] & mask != 0) {
                return Err(Error::invalid("non-zero padding bits"));
            }
        }
        Ok(Self { k, pairs, words, bits })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Current bit length `E`.
    pub fn e_bits(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn words_per_row(&self) -> usize {
        self.words
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    #[inline]
    pub fn bit(&self, row: usize, t: usize) -> bool {
        (self.bits[row * self.words + t / 64] >> (t % 64)) & 1 == 1
    }

    #[inline]
    pub fn hamming(&self, i: usize, j: usize) -> u32 {
        hamming(self.row(i), self.row(j))
    }

    /// Keeps only the given bit positions, in the given order.
    pub fn select_bits(&self, positions: &[usize]) -> Result<Self> {
        if let Some(&p) = positions.iter().find(|&&p| p >= self.e_bits()) {
            return Err(Error::invalid(format!(
                "bit position {p} out of range {}",
                self.e_bits()
            )));
        }
        let words = words_for(positions.len());
        let mut bits = vec![0u64; self.k * words];
        for r in 0..self.k {
            let dst = &mut bits[r * words..(r + 1) * words];
            for (t, &p) in positions.iter().enumerate() {
                if self.bit(r, p) {
                    dst[t / 64] |= 1 << (t % 64);
                }
            }
        }
        Ok(Self {
            k: self.k,
            pairs: positions.iter().map(|&p| self.pairs[p]).collect(),
            words,
            bits,
        })
    }

    /// Same shape and pair labels as `self`, with uniformly random bits.
    pub fn random_like(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tail = self.e_bits() % 64;
        let mut bits: Vec<u64> = (0..self.bits.len()).map(|_| rng.random()).collect();
        if tail != 0 {
            for r in 0..self.k {
                bits[r * self.words + self.words - 1] &= (1u64 << tail) - 1;
            }
        }
        Self { bits, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        let rows = (0..self.k)
            .map(|r| {
                let bytes: Vec<u8> = self.row(r).iter().flat_map(|w| w.to_le_bytes()).collect();
                BASE64.encode(bytes)
            })
            .collect();
        let file = BinaryCodebookFile {
            kind: BINARY_KIND.to_string(),
            k: self.k,
            e: self.e_bits(),
            pairs: self.pairs.iter().map(|&(i, j)| [i, j]).collect(),
            rows,
        };
        serde_json::to_string(&file).expect("binary codebook serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BinaryCodebookFile =
            serde_json::from_str(text).map_err(|e| Error::format("binary codebook file", e))?;
        if file.kind != BINARY_KIND {
            return Err(Error::format(
                "binary codebook file",
                format!("expected kind {BINARY_KIND:?}, found {:?}", file.kind),
            ));
        }
        if file.pairs.len() != file.e || file.rows.len() != file.k {
            return Err(Error::format(
                "binary codebook file",
                format!(
                    "e = {}, k = {} but {} pairs and {} rows",
                    file.e,
                    file.k,
                    file.pairs.len(),
                    file.rows.len()
                ),
            ));
        }
        let words = words_for(file.e);
        let mut bits = Vec::with_capacity(file.k * words);
        for (r, row) in file.rows.iter().enumerate() {
            let bytes = BASE64
                .decode(row)
                .map_err(|e| Error::format("binary codebook file", format!("row {r}: {e}")))?;
            if bytes.len() != words * 8 {
                return Err(Error::format(
                    "binary codebook file",
                    format!("row {r} has {} bytes, expected {}", bytes.len(), words * 8),
                ));
            }
            bits.extend(
                bytes
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8"))),
            );
        }
        let pairs = file.pairs.iter().map(|p| (p[0], p[1])).collect();
        Self::from_parts(file.k, pairs, bits)
    }
}

const BINARY_KIND: &str = "binary_codebook";

#[derive(Serialize, Deserialize)]
struct BinaryCodebookFile {
    kind: String,
    k: usize,
    e: usize,
    pairs: Vec<[u32; 2]>,
    rows: Vec<String>,
}

/// Replaces rows with L2 norm below `threshold` by the zero vector.
pub fn round_small_norms(cb: &Codebook, threshold: f64) -> Codebook {
    let d = cb.d();
    let mut flat = cb.as_flat().to_vec();
    for row in flat.chunks_exact_mut(d) {
        if l2_norm(row) < threshold {
            row.fill(0.0);
        }
    }
    Codebook::from_flat(cb.stream(), cb.k(), d, flat).expect("zeroing rows keeps the codebook valid")
}

/// `(e_i - e_j)·x - ½(||e_i||² - ||e_j||²)`: positive on `e_i`'s side of the
/// hyperplane bisecting `e_i` and `e_j`, zero on it.
pub fn hyperplane_eval(e_i: &[f64], e_j: &[f64], x: &[f64]) -> f64 {
    (dot(e_i, x) - dot(e_j, x)) - 0.5 * (dot(e_i, e_i) - dot(e_j, e_j))
}

/// A row found (numerically) on a hyperplane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Incidence {
    pub row: usize,
    pub pair: (u32, u32),
    pub value: f64,
}

/// Rows lying on hyperplanes (|value| < [`INCIDENCE_EPS`]). Their bit is still
/// set to 1, but they are listed here.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IncidenceReport {
    pub count: usize,
    /// Pairs whose two code vectors coincide; every row lies on their plane.
    pub degenerate_pairs: usize,
    pub samples: Vec<Incidence>,
}

impl IncidenceReport {
    pub fn is_clean(&self) -> bool {
        self.count == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Binarization {
    pub codebook: BinaryCodebook,
    pub incidence: IncidenceReport,
}

/// Bit `(i, j)` of row `k` is 1 iff `hyperplane_eval(e_i, e_j, e_k) >= 0`,
/// with pairs enumerated as `(0,1), (0,2), …, (K-2, K-1)`.
///
/// Apply [`round_small_norms`] first when following the usual preparation.
pub fn binarize_codebook(cb: &Codebook) -> Result<Binarization> {
    let k = cb.k();
    if k < 2 {
        return Err(Error::invalid("binarization needs k >= 2"));
    }
    let e = pair_count(k);
    let words = words_for(e);
    let pairs: Vec<(u32, u32)> = (0..k as u32)
        .flat_map(|i| (i + 1..k as u32).map(move |j| (i, j)))
        .collect();

    // gram[a * k + b] = e_a · e_b; every hyperplane value is a combination
    // of these, evaluated in the same order as hyperplane_eval.
    let gram = par::map_range(k * k, |ab| dot(cb.row(ab / k), cb.row(ab % k)));

    let per_row = par::map_range(k, |r| {
        let mut row = vec![0u64; words];
        let mut report = IncidenceReport::default();
        let mut t = 0usize;
        for i in 0..k {
            let gi = gram[i * k + r];
            let ni = gram[i * k + i];
            for j in i + 1..k {
                let value = (gi - gram[j * k + r]) - 0.5 * (ni - gram[j * k + j]);
                if value >= 0.0 {
                    row[t / 64] |= 1 << (t % 64);
                }
                if value.abs() < INCIDENCE_EPS {
                    report.count += 1;
                    if report.samples.len() < INCIDENCE_SAMPLES {
                        report.samples.push(Incidence {
                            row: r,
                            pair: (i as u32, j as u32),
                            value,
                        });
                    }
                }
                t += 1;
            }
        }
        (row, report)
    });

    let mut bits = Vec::with_capacity(k * words);
    let mut incidence = IncidenceReport::default();
    for (row, report) in per_row {
        bits.extend_from_slice(&row);
        incidence.count += report.count;
        for s in report.samples {
            if incidence.samples.len() < INCIDENCE_SAMPLES {
                incidence.samples.push(s);
            }
        }
    }
    incidence.degenerate_pairs = pairs
        .iter()
        .filter(|&&(i, j)| cb.row(i as usize) == cb.row(j as usize))
        .count();

    Ok(Binarization {
        codebook: BinaryCodebook { k, pairs, words, bits },
        incidence,
    })
}

/// For every anchor row, the sorted set of other rows at minimal Hamming
/// distance. Computed by brute force.
pub fn argmin_sets(bcb: &BinaryCodebook) -> Vec<Vec<u32>> {
    let k = bcb.k;
    par::map_range(k, |i| {
        let mut best = u32::MAX;
        let mut set = Vec::new();
        for j in (0..k).filter(|&j| j != i) {
            let d = bcb.hamming(i, j);
            if d < best {
                best = d;
                set.clear();
            }
            if d == best {
                set.push(j as u32);
            }
        }
        set
    })
}

/// Counters from one [`optimize_bits_with_stats`] run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OptimizeStats {
    pub initial_bits: usize,
    pub kept_bits: usize,
    /// Deletability decisions taken, including re-checks after restarts.
    pub decisions: usize,
    /// Decisions settled by re-checking a cached failing anchor.
    pub witness_hits: usize,
}

/// Greedy bit-length reduction preserving Hamming nearest-neighbor sets.
///
/// Bits are scanned in order. Bit `e` is removed iff, for every anchor row
/// `i`, the set of rows at minimal Hamming distance from `i` is the same with
/// and without `e`, and removing `e` does not make two distinct codes equal.
/// After a removal the scan restarts from the first remaining bit. The result
/// is a fixed point: no remaining bit is removable.
pub fn optimize_bits(bcb: &BinaryCodebook) -> BinaryCodebook {
    optimize_bits_with_stats(bcb).0
}

pub fn optimize_bits_with_stats(bcb: &BinaryCodebook) -> (BinaryCodebook, OptimizeStats) {
    let e = bcb.e_bits();
    let mut state = NeighborState::new(bcb);
    let mut stats = OptimizeStats {
        initial_bits: e,
        ..OptimizeStats::default()
    };

    // Kept bits before the cursor were all non-deletable when last checked.
    // A restart therefore re-scans `prefix` and then resumes at the cursor,
    // which is exactly the order a scan from the first remaining bit visits.
    let mut prefix: Vec<usize> = Vec::new();
    let mut witness: Vec<u32> = vec![NO_WITNESS; e];
    let mut cursor = 0usize;

    let mut rescan = false;
    loop {
        if rescan {
            let mut p = 0;
            while p < prefix.len() {
                let bit = prefix[p];
                stats.decisions += 1;
                match state.check(bit, witness[bit], &mut stats) {
                    Ok(()) => {
                        state.remove(bit);
                        prefix.remove(p);
                        p = 0;
                    }
                    Err(anchor) => {
                        witness[bit] = anchor;
                        p += 1;
                    }
                }
            }
            rescan = false;
        }
        if cursor == e {
            break;
        }
        let bit = cursor;
        cursor += 1;
        stats.decisions += 1;
        match state.check(bit, witness[bit], &mut stats) {
            Ok(()) => {
                state.remove(bit);
                rescan = !prefix.is_empty();
            }
            Err(anchor) => {
                witness[bit] = anchor;
                prefix.push(bit);
            }
        }
    }

    let out = bcb.select_bits(&prefix).expect("prefix positions are in range");
    stats.kept_bits = out.e_bits();
    (out, stats)
}

const NO_WITNESS: u32 = u32::MAX;

/// Incrementally maintained Hamming distances and per-anchor neighbor sets.
///
/// Rows with identical codes share every bit, and the optimizer never makes
/// distinct codes equal, so each group of identical rows is tracked through
/// one representative. Deletability decisions are the same as over all rows.
struct NeighborState<'a> {
    bcb: &'a BinaryCodebook,
    /// Representative row of each distinct code, ascending.
    reps: Vec<usize>,
    /// Whether the representative's code occurs more than once.
    shared: Vec<bool>,
    /// Distances between representatives, `reps.len()` squared.
    dist: Vec<u32>,
    rows: Vec<AnchorState>,
}

#[derive(Clone, Default)]
struct AnchorState {
    min: u32,
    /// Representatives at distance `min`; includes the anchor itself when
    /// its code is shared (distance 0 to its twins).
    nearest: Vec<u32>,
    /// Representatives at distance `min + 1`.
    runner_up: Vec<u32>,
}

impl AnchorState {
    fn rebuild(&mut self, anchor: usize, shared: bool, row: &[u32]) {
        let min = if shared {
            0
        } else {
            row.iter()
                .enumerate()
                .filter(|&(j, _)| j != anchor)
                .map(|(_, &d)| d)
                .min()
                .unwrap_or(0)
        };
        self.min = min;
        self.nearest.clear();
        self.runner_up.clear();
        if shared {
            self.nearest.push(anchor as u32);
        }
        for (j, &d) in row.iter().enumerate() {
            if j == anchor {
                continue;
            }
            if d == min {
                self.nearest.push(j as u32);
            } else if d == min + 1 {
                self.runner_up.push(j as u32);
            }
        }
    }
}

impl<'a> NeighborState<'a> {
    fn new(bcb: &'a BinaryCodebook) -> Self {
        let mut first: std::collections::HashMap<&[u64], usize> = std::collections::HashMap::new();
        let mut reps = Vec::new();
        let mut shared = Vec::new();
        for i in 0..bcb.k {
            match first.get(bcb.row(i)) {
                Some(&r) => shared[r] = true,
                None => {
                    first.insert(bcb.row(i), reps.len());
                    reps.push(i);
                    shared.push(false);
                }
            }
        }
        let n = reps.len();
        let mut dist: Vec<u32> = par::map_range(n * n, |ij| {
            let (i, j) = (ij / n, ij % n);
            if i == j {
                0
            } else {
                bcb.hamming(reps[i], reps[j])
            }
        });
        let mut rows = vec![AnchorState::default(); n];
        par::for_each_row_mut(&mut dist, n, &mut rows, |i, row, st| st.rebuild(i, shared[i], row));
        Self {
            bcb,
            reps,
            shared,
            dist,
            rows,
        }
    }

    #[inline]
    fn rep_bit(&self, r: u32, bit: usize) -> bool {
        self.bcb.bit(self.reps[r as usize], bit)
    }

    /// Whether removing `bit` keeps anchor `a`'s neighbor set and keeps
    /// distinct codes distinct.
    #[inline]
    fn anchor_ok(&self, a: usize, bit: usize) -> bool {
        let st = &self.rows[a];
        let own = self.rep_bit(a as u32, bit);
        let flips = st.nearest.iter().filter(|&&j| self.rep_bit(j, bit) != own).count();
        if flips == st.nearest.len() {
            // Every nearest row moves one step closer together with the
            // others; fine unless they would collide with the anchor.
            st.min >= 2
        } else if flips > 0 {
            false
        } else {
            // Nearest rows stay put; a runner-up that moves closer would tie.
            st.runner_up.iter().all(|&j| self.rep_bit(j, bit) == own)
        }
    }

    /// `Ok(())` if `bit` is deletable, else `Err(first failing anchor)`.
    fn check(&self, bit: usize, witness: u32, stats: &mut OptimizeStats) -> Result<(), u32> {
        if witness != NO_WITNESS && !self.anchor_ok(witness as usize, bit) {
            stats.witness_hits += 1;
            return Err(witness);
        }
        match (0..self.reps.len()).find(|&a| !self.anchor_ok(a, bit)) {
            Some(a) => Err(a as u32),
            None => Ok(()),
        }
    }

    fn remove(&mut self, bit: usize) {
        let column: Vec<u32> = (0..self.reps.len())
            .map(|r| self.rep_bit(r as u32, bit) as u32)
            .collect();
        let n = self.reps.len();
        let shared = &self.shared;
        let update = |i: usize, row: &mut [u32], st: &mut AnchorState| {
            let own = column[i];
            for (d, &c) in row.iter_mut().zip(&column) {
                *d -= c ^ own;
            }
            st.rebuild(i, shared[i], row);
        };
        if n * n < PAR_MIN_CELLS {
            for (i, (row, st)) in self.dist.chunks_mut(n).zip(self.rows.iter_mut()).enumerate() {
                update(i, row, st);
            }
        } else {
            par::for_each_row_mut(&mut self.dist, n, &mut self.rows, update);
        }
    }
}

/// Optimized bit length over original bit length, `E* / E`.
pub fn compression_ratio(optimized: &BinaryCodebook, original: &BinaryCodebook) -> Result<f64> {
    if optimized.k != original.k {
        return Err(Error::ShapeMismatch(format!(
            "k = {} vs k = {}",
            optimized.k, original.k
        )));
    }
    if original.e_bits() == 0 {
        return Err(Error::invalid("original codebook has no bits"));
    }
    Ok(optimized.e_bits() as f64 / original.e_bits() as f64)
}

/// The `q` smallest entries of `dist` (excluding `anchor`), ties by index.
pub(crate) fn top_q(dist: &[f64], anchor: usize, q: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).filter(|&j| j != anchor).collect();
    idx.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    idx.truncate(q);
    idx
}

/// Mean Jaccard agreement between each row's top-`q` neighbors under
/// Euclidean distance on `cb` and under Hamming distance on `bcb`.
pub fn concordance(cb: &Codebook, bcb: &BinaryCodebook, q: usize) -> Result<f64> {
    concordance_with(cb, bcb, q, |i, j| bcb.hamming(i, j))
}

/// [`concordance`] with a caller-supplied Hamming distance.
pub fn concordance_with<F>(cb: &Codebook, bcb: &BinaryCodebook, q: usize, hamming_fn: F) -> Result<f64>
where
    F: Fn(usize, usize) -> u32 + Sync + Send,
{
    let k = cb.k();
    if bcb.k != k {
        return Err(Error::ShapeMismatch(format!(
            "codebook k = {k}, binary codebook k = {}",
            bcb.k
        )));
    }
    if q == 0 || q >= k {
        return Err(Error::invalid(format!(
            "concordance needs 0 < q < k, got q = {q}, k = {k}"
        )));
    }
    let scores = par::map_range(k, |i| {
        let euc: Vec<f64> = (0..k).map(|j| euclidean(cb.row(i), cb.row(j))).collect();
        let ham: Vec<f64> = (0..k)
            .map(|j| if i == j { 0.0 } else { hamming_fn(i, j) as f64 })
            .collect();
        jaccard(&top_q(&euc, i, q), &top_q(&ham, i, q))
    });
    Ok(scores.iter().sum::<f64>() / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::Stream;

    fn cb(rows: &[&[f64]]) -> Codebook {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Codebook::from_rows(Stream::Normal, &rows).unwrap()
    }

    fn bits_of(b: &BinaryCodebook, r: usize) -> Vec<u8> {
        (0..b.e_bits()).map(|t| b.bit(r, t) as u8).collect()
    }

    #[test]
    fn round_small_norms_cases() {
        let book = cb(&[&[1e-6, 0.0], &[0.3, 0.4], &[0.0, 0.0]]);
        let rounded = round_small_norms(&book, 1e-5);
        assert_eq!(rounded.row(0), &[0.0, 0.0]);
        assert_eq!(rounded.row(1), &[0.3, 0.4]);
        assert_eq!(round_small_norms(&book, 0.0), book);
    }

    #[test]
    fn hyperplane_values() {
        let (ei, ej) = ([1.0, 0.0], [-1.0, 0.0]);
        assert!((hyperplane_eval(&ei, &ej, &[0.2, 0.5]) - 0.4).abs() < 1e-15);
        assert_eq!(hyperplane_eval(&ei, &ej, &[0.0, 7.0]), 0.0);
        let (a, b) = ([0.3, 2.0, -1.0], [1.5, -0.5, 0.25]);
        let half_sq = 0.5 * crate::kernels::squared_l2(&a, &b);
        assert!((hyperplane_eval(&a, &b, &a) - half_sq).abs() < 1e-12);
    }

    #[test]
    fn three_row_example() {
        let book = cb(&[&[0.0, 0.0], &[3.0, 0.0], &[0.0, 2.0]]);
        let b = binarize_codebook(&book).unwrap();
        assert!(b.incidence.is_clean());
        let b = b.codebook;
        assert_eq!(b.pairs(), &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(bits_of(&b, 0), vec![1, 1, 0]);
        assert_eq!(bits_of(&b, 1), vec![0, 1, 1]);
        assert_eq!(bits_of(&b, 2), vec![1, 0, 0]);
        assert_eq!(b.hamming(0, 2), 1);
        assert_eq!(b.hamming(0, 1), 2);
        assert_eq!(concordance(&book, &b, 1).unwrap(), 1.0);
    }

    #[test]
    fn two_rows_single_bit_unchanged() {
        let book = cb(&[&[0.0, 1.0], &[2.0, -1.0]]);
        let b = binarize_codebook(&book).unwrap().codebook;
        assert_eq!(b.e_bits(), 1);
        assert_ne!(b.bit(0, 0), b.bit(1, 0));
        assert_eq!(optimize_bits(&b), b);
    }

    #[test]
    fn sgn_zero_is_plus_and_reported() {
        // row 2 is the midpoint of rows 0 and 1
        let book = cb(&[&[-1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]]);
        let b = binarize_codebook(&book).unwrap();
        assert!(b.codebook.bit(2, 0));
        assert_eq!(b.incidence.count, 1);
        assert_eq!(b.incidence.samples[0].row, 2);
        assert_eq!(b.incidence.samples[0].pair, (0, 1));
    }

    #[test]
    fn duplicate_rows_are_degenerate_pairs() {
        let book = cb(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]]);
        let b = binarize_codebook(&book).unwrap();
        assert_eq!(b.incidence.degenerate_pairs, 1);
        assert_eq!(b.codebook.hamming(0, 1), 0);
    }

    #[test]
    fn compression_ratio_values() {
        let book = cb(&[&[0.0, 0.0], &[3.0, 0.0], &[0.0, 2.0]]);
        let b = binarize_codebook(&book).unwrap().codebook;
        assert_eq!(compression_ratio(&b, &b).unwrap(), 1.0);
        let one = b.select_bits(&[1]).unwrap();
        assert!((compression_ratio(&one, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((789.0 / pair_count(512) as f64 - 0.0060).abs() < 5e-5);
        assert!((292.0 / pair_count(512) as f64 - 0.0022).abs() < 5e-5);
    }

    #[test]
    fn concordance_rejects_large_q() {
        let book = cb(&[&[0.0, 0.0], &[3.0, 0.0], &[0.0, 2.0]]);
        let b = binarize_codebook(&book).unwrap().codebook;
        assert!(concordance(&book, &b, 3).is_err());
        assert!(concordance(&book, &b, 0).is_err());
    }

    #[test]
    fn json_round_trip_and_padding() {
        let book = cb(&[&[0.0, 0.0], &[3.0, 0.0], &[0.0, 2.0], &[1.0, 1.0]]);
        let b = binarize_codebook(&book).unwrap().codebook;
        let text = b.to_json();
        assert!(text.starts_with(r#"{"kind":"binary_codebook","k":4,"e":6,"pairs":[[0,1]"#));
        assert_eq!(BinaryCodebook::from_json(&text).unwrap(), b);
        // set a padding bit in row 0 and make sure it is rejected
        let mut bad = b.bits.clone();
        bad[0] |= 1 << 63;
        assert!(BinaryCodebook::from_parts(4, b.pairs.clone(), bad).is_err());
    }

    #[test]
    fn random_like_keeps_padding_zero() {
        let book = cb(&[&[0.0, 0.0], &[3.0, 0.0], &[0.0, 2.0], &[1.0, 1.0]]);
        let b = binarize_codebook(&book).unwrap().codebook;
        let r = b.random_like(9);
        assert_eq!(r.e_bits(), b.e_bits());
        assert!(BinaryCodebook::from_parts(r.k, r.pairs.clone(), r.bits.clone()).is_ok());
        assert_eq!(r, b.random_like(9));
    }

    #[test]
    fn k512_bit_count() {
        assert_eq!(pair_count(512), 130_816);
    }
}
