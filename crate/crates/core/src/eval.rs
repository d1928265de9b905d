//! Retrieval benchmark, label-overlap oracle and distance timing.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codebook::{Codebook, Stream};
use crate::error::{Error, Result};
use crate::hashing::BinaryCodebook;
use crate::kernels::{euclidean, hamming};
use crate::metrics::mean_category_dice;
use crate::par;
use crate::search::{
    rank_volumes, volume_topq, CodeRecord, Metric, QueryOptions, RankMetric, RankedEntry, RankedResult, ReferenceIndex,
    Semantics,
};

/// One query per volume plus the volumes that had no abnormal pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySelection {
    /// Indices into the index's records, in volume order.
    pub queries: Vec<usize>,
    pub excluded_volumes: Vec<String>,
}

/// Per volume, the slice with the largest abnormal area (ties: lowest slice
/// index). Volumes without any abnormal pixel are excluded and listed.
pub fn select_queries(index: &ReferenceIndex) -> Result<QuerySelection> {
    if index.records().is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut queries = Vec::new();
    let mut excluded_volumes = Vec::new();
    for vol in index.volumes() {
        let mut best: Option<(usize, usize)> = None;
        for &ri in &vol.records {
            let area = index.records()[ri].abnormal_labels.foreground_area();
            if best.is_none_or(|(_, a)| area > a) {
                best = Some((ri, area));
            }
        }
        match best {
            Some((ri, area)) if area > 0 => queries.push(ri),
            _ => excluded_volumes.push(vol.volume_id.clone()),
        }
    }
    Ok(QuerySelection {
        queries,
        excluded_volumes,
    })
}

/// Semantics-appropriate label agreement between two records, in `[0, 1]`.
/// For `Sum` this is the average of the normal and abnormal mean Dice.
pub fn label_agreement(semantics: Semantics, a: &CodeRecord, b: &CodeRecord) -> Result<f64> {
    let normal = || mean_category_dice(&a.normal_labels, &b.normal_labels).map(|d| d.mean);
    let abnormal = || mean_category_dice(&a.abnormal_labels, &b.abnormal_labels).map(|d| d.mean);
    Ok(match semantics {
        Semantics::Normal => normal()?,
        Semantics::Abnormal => abnormal()?,
        Semantics::Sum => (normal()? + abnormal()?) / 2.0,
    })
}

/// Quantity the oracle maximizes: mean Dice for a single stream, the plain
/// sum of both streams' mean Dice for `Sum`.
fn oracle_score(semantics: Semantics, a: &CodeRecord, b: &CodeRecord) -> Result<f64> {
    let normal = || mean_category_dice(&a.normal_labels, &b.normal_labels).map(|d| d.mean);
    let abnormal = || mean_category_dice(&a.abnormal_labels, &b.abnormal_labels).map(|d| d.mean);
    Ok(match semantics {
        Semantics::Normal => normal()?,
        Semantics::Abnormal => abnormal()?,
        Semantics::Sum => normal()? + abnormal()?,
    })
}

/// Volume-wise retrieval that maximizes label overlap directly.
///
/// Needs ground truth for every record, so it is only an upper bound for
/// code-based retrieval. Scores are Dice values (higher is better).
pub fn brutal_search(
    query: &CodeRecord,
    index: &ReferenceIndex,
    semantics: Semantics,
    q: usize,
    exclude_own_volume: bool,
) -> Result<RankedResult> {
    let exclude = exclude_own_volume.then_some(query.volume_id.as_str());
    let (entries, short) = rank_volumes(index, exclude, q, |r| oracle_score(semantics, query, r), |a, b| a > b)?;
    Ok(RankedResult {
        semantics,
        metric: RankMetric::Brutal,
        entries,
        short,
    })
}

/// Seeded random volume-wise ranking: a random slice per volume, volumes in
/// random order.
pub fn random_search(
    query: &CodeRecord,
    index: &ReferenceIndex,
    semantics: Semantics,
    q: usize,
    exclude_own_volume: bool,
    seed: u64,
) -> Result<RankedResult> {
    if q == 0 {
        return Err(Error::invalid("q must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: Vec<RankedEntry> = index
        .volumes()
        .iter()
        .filter(|v| !(exclude_own_volume && v.volume_id == query.volume_id))
        .map(|v| {
            let ri = v.records[rng.random_range(0..v.records.len())];
            RankedEntry {
                volume_id: v.volume_id.clone(),
                slice_index: index.records()[ri].slice_index,
                score: 0.0,
                record: ri,
            }
        })
        .collect();
    entries.shuffle(&mut rng);
    for (pos, e) in entries.iter_mut().enumerate() {
        e.score = pos as f64;
    }
    let short = q > entries.len();
    entries.truncate(q);
    Ok(RankedResult {
        semantics,
        metric: RankMetric::Random,
        entries,
        short,
    })
}

/// Row label of a benchmark cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euclidean,
    Angular,
    Hamming,
    Brutal,
    /// Not part of the original protocol; a floor reference.
    Random,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Euclidean => "D_E",
            Method::Angular => "D_A",
            Method::Hamming => "D_H",
            Method::Brutal => "Brutal search",
            Method::Random => "Random (baseline)",
        }
    }
}

impl From<Metric> for Method {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Euclidean => Method::Euclidean,
            Metric::Angular => Method::Angular,
            Metric::Hamming => Method::Hamming,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub topq: usize,
    pub metrics: Vec<Metric>,
    pub semantics: Vec<Semantics>,
    pub include_oracle: bool,
    pub include_random: bool,
    pub seed: u64,
    pub exclude_own_volume: bool,
    pub dataset_id: String,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            topq: 10,
            metrics: Metric::ALL.to_vec(),
            semantics: Semantics::ALL.to_vec(),
            include_oracle: true,
            include_random: true,
            seed: 0,
            exclude_own_volume: true,
            dataset_id: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkCell {
    pub method: Method,
    pub semantics: Semantics,
    pub mean: f64,
    /// Population standard deviation over queries.
    pub std: f64,
    /// Per-query averaged Dice, in query order.
    #[serde(skip)]
    pub per_query: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub topq: usize,
    pub seed: u64,
    pub dataset_id: String,
    pub queries: Vec<QueryRef>,
    pub excluded_volumes: Vec<String>,
    pub cells: Vec<BenchmarkCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryRef {
    pub volume_id: String,
    pub slice_index: u32,
}

impl BenchmarkReport {
    pub fn cell(&self, method: Method, semantics: Semantics) -> Option<&BenchmarkCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.semantics == semantics)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    /// Aligned text table: methods as rows, semantics as columns, each cell
    /// `mean ± std`.
    pub fn to_table(&self) -> String {
        let mut semantics: Vec<Semantics> = Vec::new();
        let mut methods: Vec<Method> = Vec::new();
        for c in &self.cells {
            if !semantics.contains(&c.semantics) {
                semantics.push(c.semantics);
            }
            if !methods.contains(&c.method) {
                methods.push(c.method);
            }
        }
        let header: Vec<String> = semantics
            .iter()
            .map(|s| match s {
                Semantics::Normal => "S_normal".to_string(),
                Semantics::Abnormal => "S_abnormal".to_string(),
                Semantics::Sum => "S_sum".to_string(),
            })
            .collect();
        let first_w = methods
            .iter()
            .map(|m| m.label().len())
            .chain(std::iter::once("Distance".len()))
            .max()
            .unwrap_or(8);
        let col_w = header.iter().map(String::len).max().unwrap_or(0).max(11);

        let mut out = String::new();
        let _ = write!(out, "{:<first_w$}", "Distance");
        for h in &header {
            let _ = write!(out, "  {h:>col_w$}");
        }
        out.push('\n');
        for m in &methods {
            let _ = write!(out, "{:<first_w$}", m.label());
            for s in &semantics {
                let cell = match self.cell(*m, *s) {
                    Some(c) => format!("{:.2} ± {:.2}", c.mean, c.std),
                    None => "-".to_string(),
                };
                let _ = write!(out, "  {cell:>col_w$}");
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "top-{} over {} queries ({} volumes without abnormality excluded)",
            self.topq,
            self.queries.len(),
            self.excluded_volumes.len()
        );
        out
    }
}

/// Mean of values summed in descending order, so that elementwise dominance
/// between two equally long lists carries over to their means exactly.
fn sorted_mean(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| b.total_cmp(a));
    values.iter().sum::<f64>() / values.len() as f64
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn retrieved_agreement(
    semantics: Semantics,
    query: &CodeRecord,
    result: &RankedResult,
    index: &ReferenceIndex,
) -> Result<f64> {
    let mut values = result
        .entries
        .iter()
        .map(|e| label_agreement(semantics, query, &index.records()[e.record]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(sorted_mean(&mut values))
}

/// Runs every requested method × semantics for every selected query and
/// reports mean ± standard deviation of per-query averaged Dice.
pub fn retrieval_benchmark(index: &ReferenceIndex, config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if index.volumes().len() < 2 {
        return Err(Error::invalid("retrieval benchmark needs at least two volumes"));
    }
    if config.metrics.iter().any(|&m| !index.has_metric(m)) {
        return Err(Error::invalid(
            "hamming requested but binary codebooks are not attached",
        ));
    }
    let selection = select_queries(index)?;

    let mut methods: Vec<Method> = config.metrics.iter().map(|&m| m.into()).collect();
    if config.include_oracle {
        methods.push(Method::Brutal);
    }
    if config.include_random {
        methods.push(Method::Random);
    }

    // per_query[q][method][semantics]
    let per_query = par::map_slice(&selection.queries, |&qi| -> Result<Vec<Vec<f64>>> {
        let query = &index.records()[qi];
        methods
            .iter()
            .map(|&method| {
                config
                    .semantics
                    .iter()
                    .map(|&semantics| {
                        let result = match method {
                            Method::Brutal => {
                                brutal_search(query, index, semantics, config.topq, config.exclude_own_volume)?
                            }
                            Method::Random => {
                                let seed = config.seed ^ (qi as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                                random_search(query, index, semantics, config.topq, config.exclude_own_volume, seed)?
                            }
                            _ => {
                                let metric = match method {
                                    Method::Euclidean => Metric::Euclidean,
                                    Method::Angular => Metric::Angular,
                                    _ => Metric::Hamming,
                                };
                                let opts = QueryOptions {
                                    semantics,
                                    metric,
                                    q: config.topq,
                                    exclude_own_volume: config.exclude_own_volume,
                                };
                                volume_topq(query, index, &opts)?
                            }
                        };
                        retrieved_agreement(semantics, query, &result, index)
                    })
                    .collect()
            })
            .collect()
    });
    let per_query = per_query.into_iter().collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        for (si, &semantics) in config.semantics.iter().enumerate() {
            let values: Vec<f64> = per_query.iter().map(|q| q[mi][si]).collect();
            let (mean, std) = mean_std(&values);
            cells.push(BenchmarkCell {
                method,
                semantics,
                mean,
                std,
                per_query: values,
            });
        }
    }

    Ok(BenchmarkReport {
        topq: config.topq,
        seed: config.seed,
        dataset_id: config.dataset_id.clone(),
        queries: selection
            .queries
            .iter()
            .map(|&qi| QueryRef {
                volume_id: index.records()[qi].volume_id.clone(),
                slice_index: index.records()[qi].slice_index,
            })
            .collect(),
        excluded_volumes: selection.excluded_volumes,
        cells,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingReport {
    pub k: usize,
    pub d: usize,
    pub e_bits: usize,
    pub repeats: usize,
    /// Mean seconds for all K×K Euclidean distances on continuous rows.
    pub t_euclidean: f64,
    /// Mean seconds for all K×K Hamming distances on packed rows.
    pub t_hamming: f64,
    /// `1 - t_hamming / t_euclidean`.
    pub reduction: f64,
}

/// Times exhaustive K×K distance computation, Euclidean vs Hamming, on the
/// calling thread. Each timing is the mean over `repeats` runs.
pub fn timing_bench(cb: &Codebook, bcb: &BinaryCodebook, repeats: usize) -> Result<TimingReport> {
    let k = cb.k();
    if bcb.k() != k {
        return Err(Error::ShapeMismatch(format!(
            "codebook k = {k}, binary codebook k = {}",
            bcb.k()
        )));
    }
    if repeats == 0 {
        return Err(Error::invalid("repeats must be positive"));
    }
    let euclid = || {
        let mut acc = 0.0;
        for i in 0..k {
            let a = black_box(cb.row(i));
            for j in 0..k {
                acc += euclidean(a, black_box(cb.row(j)));
            }
        }
        black_box(acc);
    };
    let ham = || {
        let mut acc = 0u64;
        for i in 0..k {
            let a = black_box(bcb.row(i));
            for j in 0..k {
                acc += hamming(a, black_box(bcb.row(j))) as u64;
            }
        }
        black_box(acc);
    };
    // one untimed warm-up each
    euclid();
    ham();
    let time = |f: &dyn Fn()| {
        let mut total = 0.0;
        for _ in 0..repeats {
            let start = Instant::now();
            f();
            total += start.elapsed().as_secs_f64();
        }
        // clock granularity guard: a run never reports zero time
        (total / repeats as f64).max(f64::MIN_POSITIVE)
    };
    let t_euclidean = time(&euclid);
    let t_hamming = time(&ham);
    Ok(TimingReport {
        k,
        d: cb.d(),
        e_bits: bcb.e_bits(),
        repeats,
        t_euclidean,
        t_hamming,
        reduction: 1.0 - t_hamming / t_euclidean,
    })
}

/// Count of non-background pixels in a record's label map for `stream`.
pub fn area_of(record: &CodeRecord, stream: Stream) -> usize {
    record.labels(stream).foreground_area()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_mean_dominance_is_exact() {
        let mut a = vec![0.1, 0.7, 0.3];
        let mut b = vec![0.1, 0.7, 0.3];
        b.reverse();
        assert_eq!(sorted_mean(&mut a), sorted_mean(&mut b));
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
