//! Continuous codebooks and vector quantization.
//!
//! A [`Codebook`] holds `k` code vectors of dimension `d` for one semantic
//! [`Stream`]. Feature grids are snapped to their nearest code vectors by
//! [`quantize`], producing a [`LatentCode`] of row indices. Codebooks are
//! learned with exponential-moving-average updates ([`CodebookLearner`],
//! [`learn_codebook`]); rows that never receive data stay at their
//! near-zero initialization, which is what [`compactness`] measures.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{l2_norm, squared_l2};
use crate::par;

/// Default commitment weight of the latent loss.
pub const DEFAULT_BETA: f64 = 0.25;

/// Norm below which a code vector counts as insignificant.
pub const DEFAULT_NORM_THRESHOLD: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Normal,
    Abnormal,
}

impl Stream {
    pub const ALL: [Stream; 2] = [Stream::Normal, Stream::Abnormal];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Normal => "normal",
            Stream::Abnormal => "abnormal",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Stream::Normal),
            "abnormal" => Ok(Stream::Abnormal),
            other => Err(Error::invalid(format!("unknown stream {other:?}"))),
        }
    }
}

/// `k` code vectors of dimension `d`, stored row-major.
///
/// Row index is the identity of a code vector; rows are never reordered.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    stream: Stream,
    k: usize,
    d: usize,
    vectors: Vec<f64>,
}

impl Codebook {
    pub fn from_flat(stream: Stream, k: usize, d: usize, vectors: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("codebook needs k >= 2, got {k}")));
        }
        if d == 0 {
            return Err(Error::invalid("codebook needs d >= 1"));
        }
        if vectors.len() != k * d {
            return Err(Error::DimensionMismatch {
                expected: k * d,
                actual: vectors.len(),
            });
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry in row {} of codebook",
                pos / d
            )));
        }
        Ok(Self { stream, k, d, vectors })
    }

    pub fn from_rows(stream: Stream, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(stream, rows.len(), d, flat)
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.vectors.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.vectors
    }

    /// L2 norm of every row, in row order.
    pub fn norms(&self) -> Vec<f64> {
        self.rows().map(l2_norm).collect()
    }

    /// Nearest row to `x` under squared L2, with its squared distance.
    /// Ties go to the lowest row index.
    #[inline]
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        nearest_row(&self.vectors, self.d, x)
    }

    pub fn to_json(&self) -> String {
        let file = CodebookFile {
            kind: CODEBOOK_KIND.to_string(),
            k: self.k,
            d: self.d,
            stream: self.stream,
            vectors: self.rows().map(<[f64]>::to_vec).collect(),
        };
        serde_json::to_string(&file).expect("codebook serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CodebookFile = serde_json::from_str(text).map_err(|e| Error::format("codebook file", e))?;
        if file.kind != CODEBOOK_KIND {
            return Err(Error::format(
                "codebook file",
                format!("expected kind {CODEBOOK_KIND:?}, found {:?}", file.kind),
            ));
        }
        if file.vectors.len() != file.k {
            return Err(Error::format(
                "codebook file",
                format!("k = {} but {} rows", file.k, file.vectors.len()),
            ));
        }
        if file.vectors.iter().any(|r| r.len() != file.d) {
            return Err(Error::format(
                "codebook file",
                format!("row length differs from d = {}", file.d),
            ));
        }
        Self::from_rows(file.stream, &file.vectors)
    }
}

const CODEBOOK_KIND: &str = "codebook";

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    kind: String,
    k: usize,
    d: usize,
    stream: Stream,
    vectors: Vec<Vec<f64>>,
}

#[inline]
fn nearest_row(vectors: &[f64], d: usize, x: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, row) in vectors.chunks_exact(d).enumerate() {
        let dist = squared_l2(row, x);
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    (best, best_dist)
}

/// A `grid_h × grid_w` grid of codebook row indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LatentCode {
    grid_h: usize,
    grid_w: usize,
    indices: Vec<u32>,
}

impl LatentCode {
    pub fn new(grid_h: usize, grid_w: usize, indices: Vec<u32>) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::ShapeMismatch("latent code grid must be non-empty".into()));
        }
        if indices.len() != grid_h * grid_w {
            return Err(Error::ShapeMismatch(format!(
                "{grid_h}x{grid_w} latent code with {} indices",
                indices.len()
            )));
        }
        Ok(Self {
            grid_h,
            grid_w,
            indices,
        })
    }

    pub fn from_grid(grid: &[Vec<u32>]) -> Result<Self> {
        let h = grid.len();
        let w = grid.first().map_or(0, Vec::len);
        if grid.iter().any(|r| r.len() != w) {
            return Err(Error::ShapeMismatch("ragged latent code grid".into()));
        }
        Self::new(h, w, grid.concat())
    }

    pub fn to_grid(&self) -> Vec<Vec<u32>> {
        self.indices.chunks(self.grid_w).map(<[u32]>::to_vec).collect()
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    /// Row-major cell indices.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.indices[r * self.grid_w + c]
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i as usize >= k) {
            Some(&index) => Err(Error::IndexOutOfRange {
                index: index as usize,
                k,
            }),
            None => Ok(()),
        }
    }
}

/// `grid_h × grid_w` feature vectors of dimension `d`, row-major by cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    grid_h: usize,
    grid_w: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(grid_h: usize, grid_w: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || d == 0 {
            return Err(Error::ShapeMismatch("feature grid dimensions must be positive".into()));
        }
        if data.len() != grid_h * grid_w * d {
            return Err(Error::DimensionMismatch {
                expected: grid_h * grid_w * d,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Self {
            grid_h,
            grid_w,
            d,
            data,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn cells(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// Snaps every cell of `grid` to its nearest code vector.
///
/// Returns the chosen indices and the grid with each vector replaced by its
/// code vector. Ties go to the lowest row index.
pub fn quantize(grid: &FeatureGrid, cb: &Codebook) -> Result<(LatentCode, FeatureGrid)> {
    if grid.d != cb.d {
        return Err(Error::DimensionMismatch {
            expected: cb.d,
            actual: grid.d,
        });
    }
    let mut indices = Vec::with_capacity(grid.grid_h * grid.grid_w);
    let mut replaced = Vec::with_capacity(grid.data.len());
    for cell in grid.cells() {
        let (k, _) = cb.nearest(cell);
        indices.push(k as u32);
        replaced.extend_from_slice(cb.row(k));
    }
    Ok((
        LatentCode::new(grid.grid_h, grid.grid_w, indices)?,
        FeatureGrid {
            data: replaced,
            ..*grid
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentLoss {
    pub total: f64,
    pub codebook_term: f64,
    pub commitment_term: f64,
}

/// Codebook and commitment terms of the latent loss for one stream.
///
/// As plain values both terms share the same summed squared distance between
/// features and their assigned code vectors; the commitment term carries the
/// `beta` weight.
pub fn latent_loss(grid: &FeatureGrid, cb: &Codebook, code: &LatentCode, beta: f64) -> Result<LatentLoss> {
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::invalid(format!("beta must be non-negative, got {beta}")));
    }
    if grid.d != cb.d {
        return Err(Error::DimensionMismatch {
            expected: cb.d,
            actual: grid.d,
        });
    }
    if code.shape() != (grid.grid_h, grid.grid_w) {
        return Err(Error::ShapeMismatch(format!(
            "code is {:?} but feature grid is {:?}",
            code.shape(),
            (grid.grid_h, grid.grid_w)
        )));
    }
    code.validate(cb.k)?;
    let sq: f64 = grid
        .cells()
        .zip(code.indices())
        .map(|(z, &k)| squared_l2(z, cb.row(k as usize)))
        .sum();
    let commitment_term = beta * sq;
    Ok(LatentLoss {
        total: sq + commitment_term,
        codebook_term: sq,
        commitment_term,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmaConfig {
    pub decay: f64,
    /// Laplace smoothing added to each usage count.
    pub epsilon: f64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self {
            decay: 0.99,
            epsilon: 1e-5,
        }
    }
}

/// Mutable state of an EMA codebook learner.
///
/// Keeps per-row EMA usage counts and per-row EMA vector sums. Rows whose
/// accumulated usage is still zero are never rewritten.
#[derive(Clone, Debug, PartialEq)]
pub struct CodebookLearner {
    stream: Stream,
    k: usize,
    d: usize,
    vectors: Vec<f64>,
    usage: Vec<f64>,
    sums: Vec<f64>,
    config: EmaConfig,
}

impl CodebookLearner {
    /// Rows drawn i.i.d. from `N(0, init_std²)` per coordinate.
    pub fn near_zero(stream: Stream, k: usize, d: usize, init_std: f64, seed: u64, config: EmaConfig) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("codebook needs k >= 2, got {k}")));
        }
        if d == 0 {
            return Err(Error::invalid("codebook needs d >= 1"));
        }
        let normal = Normal::new(0.0, init_std).map_err(|e| Error::invalid(format!("init std {init_std}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = (0..k * d).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            stream,
            k,
            d,
            vectors,
            usage: vec![0.0; k],
            sums: vec![0.0; k * d],
            config,
        })
    }

    /// Starts from an existing codebook with empty usage statistics.
    pub fn from_codebook(cb: &Codebook, config: EmaConfig) -> Self {
        Self {
            stream: cb.stream,
            k: cb.k,
            d: cb.d,
            vectors: cb.vectors.clone(),
            usage: vec![0.0; cb.k],
            sums: vec![0.0; cb.k * cb.d],
            config,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.d..(i + 1) * self.d]
    }

    /// EMA usage count per row.
    pub fn usage(&self) -> &[f64] {
        &self.usage
    }

    pub(crate) fn set_row(&mut self, i: usize, v: &[f64]) {
        self.vectors[i * self.d..(i + 1) * self.d].copy_from_slice(v);
    }

    /// One EMA step on `batch`, a flat `n × d` slice.
    ///
    /// Assignment may run in parallel; statistics are merged in batch order so
    /// the result does not depend on the worker count. An empty batch is a
    /// no-op.
    pub fn update(&mut self, batch: &[f64]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        if !batch.len().is_multiple_of(self.d) {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: batch.len() % self.d,
            });
        }
        let n = batch.len() / self.d;
        let (vectors, d) = (&self.vectors, self.d);
        let assign = par::map_range(n, |i| nearest_row(vectors, d, &batch[i * d..(i + 1) * d]).0);

        let mut counts = vec![0.0f64; self.k];
        let mut batch_sums = vec![0.0f64; self.k * d];
        for (i, &r) in assign.iter().enumerate() {
            counts[r] += 1.0;
            let dst = &mut batch_sums[r * d..(r + 1) * d];
            for (s, x) in dst.iter_mut().zip(&batch[i * d..(i + 1) * d]) {
                *s += x;
            }
        }

        let EmaConfig { decay, epsilon } = self.config;
        for (u, c) in self.usage.iter_mut().zip(&counts) {
            *u = decay * *u + (1.0 - decay) * c;
        }
        for (s, b) in self.sums.iter_mut().zip(&batch_sums) {
            *s = decay * *s + (1.0 - decay) * b;
        }

        let total: f64 = self.usage.iter().sum();
        let denom = total + self.k as f64 * epsilon;
        for r in 0..self.k {
            if self.usage[r] > 0.0 {
                let smoothed = (self.usage[r] + epsilon) / denom * total;
                for c in 0..d {
                    self.vectors[r * d + c] = self.sums[r * d + c] / smoothed;
                }
            }
        }
        Ok(())
    }

    pub fn codebook(&self) -> Result<Codebook> {
        Codebook::from_flat(self.stream, self.k, self.d, self.vectors.clone())
    }
}

/// Functional form of [`CodebookLearner::update`].
pub fn ema_update(mut state: CodebookLearner, batch: &[f64]) -> Result<CodebookLearner> {
    state.update(batch)?;
    Ok(state)
}

/// Settings for [`learn_codebook`].
#[derive(Clone, Debug, PartialEq)]
pub struct LearnConfig {
    pub stream: Stream,
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ema: EmaConfig,
    /// Per-coordinate standard deviation of the near-zero row initialization.
    pub init_std: f64,
    /// Seeding stops once every vector lies within this fraction of the data
    /// spread of an already seeded row. Rows left unseeded stay near zero.
    pub seed_radius: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            stream: Stream::Normal,
            k: 512,
            epochs: 10,
            batch_size: 1024,
            seed: 0,
            ema: EmaConfig::default(),
            init_std: 1e-8,
            seed_radius: 0.2,
        }
    }
}

/// Learns a codebook from `vectors` (flat, `n × d`).
///
/// Rows start near zero. A farthest-first pass seeds rows with data vectors
/// until every vector is within `seed_radius × spread` of a seeded row (or
/// all `k` rows are seeded), then `epochs` shuffled passes of EMA updates
/// refine them. Rows that never attract data keep their near-zero values.
/// Deterministic for a fixed seed and independent of the worker count.
pub fn learn_codebook(vectors: &[f64], d: usize, config: &LearnConfig) -> Result<Codebook> {
    if d == 0 {
        return Err(Error::invalid("vector dimension must be positive"));
    }
    if vectors.is_empty() {
        return Err(Error::Empty("training vectors"));
    }
    if !vectors.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: vectors.len() % d,
        });
    }
    if config.k < 2 {
        return Err(Error::invalid(format!("codebook needs k >= 2, got {}", config.k)));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training vector"));
    }
    let n = vectors.len() / d;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut learner =
        CodebookLearner::near_zero(config.stream, config.k, d, config.init_std, rng.random(), config.ema)?;

    let seeds = farthest_first(vectors, d, config.k, config.seed_radius, &mut rng);
    for (row, &idx) in seeds.iter().enumerate() {
        learner.set_row(row, &vectors[idx * d..(idx + 1) * d]);
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut batch = Vec::with_capacity(config.batch_size * d);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            for &i in chunk {
                batch.extend_from_slice(&vectors[i * d..(i + 1) * d]);
            }
            learner.update(&batch)?;
        }
    }
    learner.codebook()
}

/// Farthest-first traversal over the data: returns indices of seed vectors.
fn farthest_first(vectors: &[f64], d: usize, k: usize, radius_frac: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = vectors.len() / d;
    let first = rng.random_range(0..n);
    let mut seeds = vec![first];
    let seed_vec = &vectors[first * d..(first + 1) * d];
    let mut min_sq = par::map_range(n, |i| squared_l2(&vectors[i * d..(i + 1) * d], seed_vec));
    let spread = min_sq.iter().cloned().fold(0.0, f64::max).sqrt();
    let stop_sq = (radius_frac * spread).powi(2);

    while seeds.len() < k {
        let (far, far_sq) =
            min_sq.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
        if far_sq <= stop_sq || far_sq == 0.0 {
            break;
        }
        seeds.push(far);
        let s = &vectors[far * d..(far + 1) * d];
        let updated = par::map_range(n, |i| min_sq[i].min(squared_l2(&vectors[i * d..(i + 1) * d], s)));
        min_sq = updated;
    }
    seeds
}

/// Fraction of rows whose L2 norm is below `threshold`.
pub fn compactness(cb: &Codebook, threshold: f64) -> f64 {
    let small = cb.rows().filter(|r| l2_norm(r) < threshold).count();
    small as f64 / cb.k as f64
}

/// Row norms sorted in descending order.
pub fn norm_stats(cb: &Codebook) -> Vec<f64> {
    let mut norms = cb.norms();
    norms.sort_by(|a, b| b.total_cmp(a));
    norms
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cb(rows: &[&[f64]]) -> Codebook {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Codebook::from_rows(Stream::Normal, &rows).unwrap()
    }

    fn single(cell: &[f64]) -> FeatureGrid {
        FeatureGrid::new(1, 1, cell.len(), cell.to_vec()).unwrap()
    }

    #[test]
    fn quantize_picks_nearest_row() {
        let book = cb(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        // squared distances: 0.82, 0.02, 1.62
        let (code, replaced) = quantize(&single(&[0.9, 0.1]), &book).unwrap();
        assert_eq!(code.indices(), &[1]);
        assert_eq!(replaced.cell(0), &[1.0, 0.0]);
    }

    #[test]
    fn quantize_exact_match_and_tie() {
        let book = cb(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let (code, replaced) = quantize(&single(&[0.0, 1.0]), &book).unwrap();
        assert_eq!(code.indices(), &[2]);
        assert_eq!(replaced.cell(0), &[0.0, 1.0]);
        let (code, _) = quantize(&single(&[0.5, 0.0]), &book).unwrap();
        assert_eq!(code.indices(), &[0]);
    }

    #[test]
    fn quantize_dimension_mismatch() {
        let book = cb(&[&[0.0, 0.0], &[1.0, 0.0]]);
        assert!(matches!(
            quantize(&single(&[1.0, 2.0, 3.0]), &book),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn latent_loss_values() {
        let book = cb(&[&[0.0, 0.0], &[5.0, 5.0]]);
        let grid = single(&[1.0, 0.0]);
        let (code, replaced) = quantize(&grid, &book).unwrap();
        let loss = latent_loss(&grid, &book, &code, 0.25).unwrap();
        assert_eq!(
            loss,
            LatentLoss {
                total: 1.25,
                codebook_term: 1.0,
                commitment_term: 0.25
            }
        );
        let perfect = latent_loss(&replaced, &book, &code, 0.25).unwrap();
        assert_eq!(
            (perfect.total, perfect.codebook_term, perfect.commitment_term),
            (0.0, 0.0, 0.0)
        );
        let doubled = latent_loss(&grid, &book, &code, 0.5).unwrap();
        assert_eq!(doubled.codebook_term, loss.codebook_term);
        assert_eq!(doubled.commitment_term, 2.0 * loss.commitment_term);
    }

    #[test]
    fn latent_loss_shape_mismatch() {
        let book = cb(&[&[0.0, 0.0], &[5.0, 5.0]]);
        let grid = single(&[1.0, 0.0]);
        let code = LatentCode::new(1, 2, vec![0, 0]).unwrap();
        assert!(matches!(
            latent_loss(&grid, &book, &code, 0.25),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn codebook_rejects_k1_and_nan() {
        assert!(Codebook::from_rows(Stream::Normal, &[vec![1.0]]).is_err());
        assert!(Codebook::from_rows(Stream::Normal, &[vec![1.0], vec![f64::NAN]]).is_err());
    }

    #[test]
    fn compactness_and_norms() {
        let book = cb(&[&[0.0, 0.0], &[1e-6, 0.0], &[0.3, 0.4], &[2.0, 0.0]]);
        assert_eq!(compactness(&book, 1e-5), 0.5);
        let big = cb(&[&[0.1, 0.0], &[0.0, 3.0]]);
        assert_eq!(compactness(&big, 1e-5), 0.0);
        assert_eq!(norm_stats(&cb(&[&[0.0, 0.0], &[3.0, 4.0]])), vec![5.0, 0.0]);
        let zero = cb(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(norm_stats(&zero), vec![0.0; 3]);
    }

    #[test]
    fn json_round_trip() {
        let book = cb(&[&[0.1, -1.0 / 3.0], &[1e-300, 12345.678901234567]]);
        let back = Codebook::from_json(&book.to_json()).unwrap();
        assert_eq!(back, book);
        assert!(book
            .to_json()
            .starts_with(r#"{"kind":"codebook","k":2,"d":2,"stream":"normal""#));
    }

    #[test]
    fn ema_fixed_point() {
        let target = [0.7, -1.3, 2.0];
        let mut learner = CodebookLearner::near_zero(Stream::Normal, 4, 3, 1e-8, 1, EmaConfig::default()).unwrap();
        learner.set_row(0, &target);
        let batch: Vec<f64> = target.iter().cycle().take(3 * 16).cloned().collect();
        for _ in 0..2000 {
            learner.update(&batch).unwrap();
        }
        for (a, b) in learner.row(0).iter().zip(&target) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn ema_empty_batch_is_noop() {
        let learner = CodebookLearner::near_zero(Stream::Normal, 4, 3, 1e-8, 1, EmaConfig::default()).unwrap();
        let after = ema_update(learner.clone(), &[]).unwrap();
        assert_eq!(after, learner);
    }

    #[test]
    fn learn_rejects_k1_and_empty() {
        let cfg = LearnConfig {
            k: 1,
            ..LearnConfig::default()
        };
        assert!(learn_codebook(&[1.0, 2.0], 2, &cfg).is_err());
        assert!(matches!(
            learn_codebook(&[], 2, &LearnConfig::default()),
            Err(Error::Empty(_))
        ));
    }

    fn brute_nearest(rows: &[Vec<f64>], x: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..rows.len() {
            let di: f64 = rows[i].iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            let db: f64 = rows[best].iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if di < db {
                best = i;
            }
        }
        best
    }

    fn book_and_grid() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, usize)> {
        (2usize..=64, 1usize..=8, 1usize..=4).prop_flat_map(|(k, d, cells)| {
            (
                prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), k),
                prop::collection::vec(-3.0f64..3.0, d * cells),
                Just(d),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn quantize_agrees_with_brute_force((rows, cells, d) in book_and_grid()) {
            let book = Codebook::from_rows(Stream::Abnormal, &rows).unwrap();
            let n = cells.len() / d;
            let grid = FeatureGrid::new(1, n, d, cells.clone()).unwrap();
            let (code, replaced) = quantize(&grid, &book).unwrap();
            for i in 0..n {
                prop_assert_eq!(code.indices()[i] as usize, brute_nearest(&rows, &cells[i * d..(i + 1) * d]));
            }
            // idempotence
            let (again, _) = quantize(&replaced, &book).unwrap();
            prop_assert_eq!(again, code.clone());
            let loss = latent_loss(&grid, &book, &code, 0.37).unwrap();
            prop_assert!((loss.total - 1.37 * loss.codebook_term).abs() <= 1e-12 * loss.total.max(1.0));
        }

        #[test]
        fn compactness_monotone_in_threshold(norms in prop::collection::vec(0.0f64..1e-3, 2..20), t1 in 0.0f64..1e-3, t2 in 0.0f64..1e-3) {
            let rows: Vec<Vec<f64>> = norms.iter().map(|&n| vec![n, 0.0]).collect();
            let book = Codebook::from_rows(Stream::Normal, &rows).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(compactness(&book, lo) <= compactness(&book, hi));
        }
    }
}
