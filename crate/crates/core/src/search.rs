//! Code-level similarity and volume-wise retrieval.
//!
//! The distance between two images under one stream is the sum, over grid
//! cells, of the distance between the code vectors (or binary rows) selected
//! at that cell. Scores are distances: lower means more similar.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, LatentCode, Stream};
use crate::error::{Error, Result};
use crate::hashing::BinaryCodebook;
use crate::kernels;
use crate::metrics::{CategorySet, LabelMap};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Angular,
    Hamming,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Euclidean, Metric::Angular, Metric::Hamming];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Angular => "angular",
            Metric::Hamming => "hamming",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "angular" => Ok(Metric::Angular),
            "hamming" => Ok(Metric::Hamming),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

/// Which codes a similarity looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantics {
    Normal,
    Abnormal,
    Sum,
}

impl Semantics {
    pub const ALL: [Semantics; 3] = [Semantics::Normal, Semantics::Abnormal, Semantics::Sum];

    pub fn as_str(self) -> &'static str {
        match self {
            Semantics::Normal => "normal",
            Semantics::Abnormal => "abnormal",
            Semantics::Sum => "sum",
        }
    }
}

impl fmt::Display for Semantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Semantics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Semantics::Normal),
            "abnormal" => Ok(Semantics::Abnormal),
            "sum" => Ok(Semantics::Sum),
            other => Err(Error::invalid(format!("unknown semantics {other:?}"))),
        }
    }
}

/// A single vector in either representation.
#[derive(Clone, Copy, Debug)]
pub enum VectorRef<'a> {
    Continuous(&'a [f64]),
    Bits(&'a [u64]),
}

/// Distance between two vectors. Euclidean and angular need continuous
/// vectors, Hamming needs bit rows.
pub fn vector_distance(metric: Metric, a: VectorRef<'_>, b: VectorRef<'_>) -> Result<f64> {
    match (metric, a, b) {
        (Metric::Euclidean, VectorRef::Continuous(a), VectorRef::Continuous(b)) => {
            check_len(a.len(), b.len())?;
            Ok(kernels::euclidean(a, b))
        }
        (Metric::Angular, VectorRef::Continuous(a), VectorRef::Continuous(b)) => {
            check_len(a.len(), b.len())?;
            Ok(kernels::angular(a, b))
        }
        (Metric::Hamming, VectorRef::Bits(a), VectorRef::Bits(b)) => {
            check_len(a.len(), b.len())?;
            Ok(kernels::hamming(a, b) as f64)
        }
        (metric, _, _) => Err(Error::invalid(format!(
            "{metric} distance called with the wrong vector representation"
        ))),
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, actual: b });
    }
    Ok(())
}

/// One image slice with both codes and both ground-truth label maps.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeRecord {
    pub volume_id: String,
    pub slice_index: u32,
    pub normal_code: LatentCode,
    pub abnormal_code: LatentCode,
    pub normal_labels: LabelMap,
    pub abnormal_labels: LabelMap,
}

impl CodeRecord {
    pub fn new(
        volume_id: impl Into<String>,
        slice_index: u32,
        normal_code: LatentCode,
        abnormal_code: LatentCode,
        normal_labels: LabelMap,
        abnormal_labels: LabelMap,
    ) -> Result<Self> {
        if normal_code.shape() != abnormal_code.shape() {
            return Err(Error::ShapeMismatch(format!(
                "normal code {:?} vs abnormal code {:?}",
                normal_code.shape(),
                abnormal_code.shape()
            )));
        }
        if normal_labels.category_set() != CategorySet::Normal6
            || abnormal_labels.category_set() != CategorySet::Abnormal3
        {
            return Err(Error::invalid("label maps carry the wrong category sets"));
        }
        Ok(Self {
            volume_id: volume_id.into(),
            slice_index,
            normal_code,
            abnormal_code,
            normal_labels,
            abnormal_labels,
        })
    }

    pub fn code(&self, stream: Stream) -> &LatentCode {
        match stream {
            Stream::Normal => &self.normal_code,
            Stream::Abnormal => &self.abnormal_code,
        }
    }

    pub fn labels(&self, stream: Stream) -> &LabelMap {
        match stream {
            Stream::Normal => &self.normal_labels,
            Stream::Abnormal => &self.abnormal_labels,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&RecordRepr::from(self)).expect("record serialization is infallible")
    }

    pub fn from_json(line: &str) -> Result<Self> {
        let repr: RecordRepr = serde_json::from_str(line).map_err(|e| Error::format("dataset record", e))?;
        repr.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct RecordRepr {
    volume_id: String,
    slice_index: u32,
    normal_code: Vec<Vec<u32>>,
    abnormal_code: Vec<Vec<u32>>,
    normal_labels: Vec<Vec<u8>>,
    abnormal_labels: Vec<Vec<u8>>,
}

impl From<&CodeRecord> for RecordRepr {
    fn from(r: &CodeRecord) -> Self {
        Self {
            volume_id: r.volume_id.clone(),
            slice_index: r.slice_index,
            normal_code: r.normal_code.to_grid(),
            abnormal_code: r.abnormal_code.to_grid(),
            normal_labels: r.normal_labels.to_grid(),
            abnormal_labels: r.abnormal_labels.to_grid(),
        }
    }
}

impl TryFrom<RecordRepr> for CodeRecord {
    type Error = Error;

    fn try_from(r: RecordRepr) -> Result<Self> {
        CodeRecord::new(
            r.volume_id,
            r.slice_index,
            LatentCode::from_grid(&r.normal_code)?,
            LatentCode::from_grid(&r.abnormal_code)?,
            LabelMap::from_grid(&r.normal_labels, CategorySet::Normal6)?,
            LabelMap::from_grid(&r.abnormal_labels, CategorySet::Abnormal3)?,
        )
    }
}

/// An ordered collection of records with unique `(volume_id, slice_index)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    records: Vec<CodeRecord>,
}

impl Dataset {
    pub fn new(records: Vec<CodeRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert((r.volume_id.as_str(), r.slice_index)) {
                return Err(Error::invalid(format!(
                    "duplicate record ({}, {})",
                    r.volume_id, r.slice_index
                )));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[CodeRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<CodeRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct volume ids in sorted order.
    pub fn volume_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.records.iter().map(|r| r.volume_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            out.write_all(r.to_json().as_bytes())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads JSON lines; blank lines are skipped. I/O errors and malformed
    /// records are reported separately.
    pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Result<Self>> {
        let mut records = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match CodeRecord::from_json(&line) {
                Ok(r) => records.push(r),
                Err(e) => return Ok(Err(Error::format("dataset file", format!("line {}: {e}", n + 1)))),
            }
        }
        Ok(Self::new(records))
    }
}

/// Pairwise per-vector distances for one stream and metric.
#[derive(Clone, Debug, PartialEq)]
struct DistanceTable {
    k: usize,
    values: Vec<f64>,
}

impl DistanceTable {
    fn continuous(cb: &Codebook, metric: Metric) -> Self {
        let k = cb.k();
        let values = par::map_range(k * k, |ij| {
            let (a, b) = (cb.row(ij / k), cb.row(ij % k));
            vector_distance(metric, VectorRef::Continuous(a), VectorRef::Continuous(b))
                .expect("rows of one codebook share a dimension")
        });
        Self { k, values }
    }

    fn hamming(bcb: &BinaryCodebook) -> Self {
        let k = bcb.k();
        let values = par::map_range(k * k, |ij| bcb.hamming(ij / k, ij % k) as f64);
        Self { k, values }
    }

    #[inline]
    fn get(&self, a: u32, b: u32) -> f64 {
        self.values[a as usize * self.k + b as usize]
    }
}

/// Records of one volume in ascending slice order.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGroup {
    pub volume_id: String,
    /// Indices into [`ReferenceIndex::records`].
    pub records: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
struct StreamTables {
    euclidean: DistanceTable,
    angular: DistanceTable,
    hamming: Option<DistanceTable>,
}

/// Immutable, query-ready reference collection.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceIndex {
    records: Vec<CodeRecord>,
    volumes: Vec<VolumeGroup>,
    normal: Codebook,
    abnormal: Codebook,
    normal_bits: Option<BinaryCodebook>,
    abnormal_bits: Option<BinaryCodebook>,
    normal_tables: StreamTables,
    abnormal_tables: StreamTables,
}

impl ReferenceIndex {
    /// Groups records by volume and precomputes per-vector distance tables.
    /// Binary codebooks are optional; without them Hamming queries fail.
    pub fn build(
        dataset: Dataset,
        normal: Codebook,
        abnormal: Codebook,
        normal_bits: Option<BinaryCodebook>,
        abnormal_bits: Option<BinaryCodebook>,
    ) -> Result<Self> {
        for (cb, bits) in [(&normal, &normal_bits), (&abnormal, &abnormal_bits)] {
            if let Some(b) = bits {
                if b.k() != cb.k() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} codebook k = {} but binary codebook k = {}",
                        cb.stream(),
                        cb.k(),
                        b.k()
                    )));
                }
            }
        }
        let records = dataset.into_records();
        for r in &records {
            r.normal_code.validate(normal.k())?;
            r.abnormal_code.validate(abnormal.k())?;
        }
        let mut by_volume: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_volume.entry(r.volume_id.as_str()).or_default().push(i);
        }
        let volumes = by_volume
            .into_iter()
            .map(|(id, mut idx)| {
                idx.sort_by_key(|&i| records[i].slice_index);
                VolumeGroup {
                    volume_id: id.to_string(),
                    records: idx,
                }
            })
            .collect();
        let tables = |cb: &Codebook, bits: &Option<BinaryCodebook>| StreamTables {
            euclidean: DistanceTable::continuous(cb, Metric::Euclidean),
            angular: DistanceTable::continuous(cb, Metric::Angular),
            hamming: bits.as_ref().map(DistanceTable::hamming),
        };
        let normal_tables = tables(&normal, &normal_bits);
        let abnormal_tables = tables(&abnormal, &abnormal_bits);
        Ok(Self {
            records,
            volumes,
            normal,
            abnormal,
            normal_bits,
            abnormal_bits,
            normal_tables,
            abnormal_tables,
        })
    }

    pub fn records(&self) -> &[CodeRecord] {
        &self.records
    }

    pub fn volumes(&self) -> &[VolumeGroup] {
        &self.volumes
    }

    pub fn volume(&self, id: &str) -> Option<&VolumeGroup> {
        self.volumes
            .binary_search_by(|v| v.volume_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.volumes[i])
    }

    pub fn codebook(&self, stream: Stream) -> &Codebook {
        match stream {
            Stream::Normal => &self.normal,
            Stream::Abnormal => &self.abnormal,
        }
    }

    pub fn binary_codebook(&self, stream: Stream) -> Option<&BinaryCodebook> {
        match stream {
            Stream::Normal => self.normal_bits.as_ref(),
            Stream::Abnormal => self.abnormal_bits.as_ref(),
        }
    }

    pub fn has_metric(&self, metric: Metric) -> bool {
        metric != Metric::Hamming || (self.normal_bits.is_some() && self.abnormal_bits.is_some())
    }

    fn table(&self, stream: Stream, metric: Metric) -> Result<&DistanceTable> {
        let t = match stream {
            Stream::Normal => &self.normal_tables,
            Stream::Abnormal => &self.abnormal_tables,
        };
        match metric {
            Metric::Euclidean => Ok(&t.euclidean),
            Metric::Angular => Ok(&t.angular),
            Metric::Hamming => t
                .hamming
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("no binary codebook attached for the {stream} stream"))),
        }
    }
}

/// Sum over grid cells of the distance between the selected code vectors.
pub fn code_distance(
    metric: Metric,
    stream: Stream,
    a: &LatentCode,
    b: &LatentCode,
    index: &ReferenceIndex,
) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "codes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let k = index.codebook(stream).k();
    a.validate(k)?;
    b.validate(k)?;
    let table = index.table(stream, metric)?;
    Ok(sum_cells(table, a, b))
}

#[inline]
fn sum_cells(table: &DistanceTable, a: &LatentCode, b: &LatentCode) -> f64 {
    a.indices()
        .iter()
        .zip(b.indices())
        .map(|(&x, &y)| table.get(x, y))
        .sum()
}

/// `S_normal`, `S_abnormal`, or `S_sum = S_normal + S_abnormal`.
pub fn similarity(
    semantics: Semantics,
    metric: Metric,
    query: &CodeRecord,
    reference: &CodeRecord,
    index: &ReferenceIndex,
) -> Result<f64> {
    let normal = || {
        code_distance(
            metric,
            Stream::Normal,
            &query.normal_code,
            &reference.normal_code,
            index,
        )
    };
    let abnormal = || {
        code_distance(
            metric,
            Stream::Abnormal,
            &query.abnormal_code,
            &reference.abnormal_code,
            index,
        )
    };
    match semantics {
        Semantics::Normal => normal(),
        Semantics::Abnormal => abnormal(),
        Semantics::Sum => Ok(normal()? + abnormal()?),
    }
}

/// How a ranked list was scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMetric {
    Euclidean,
    Angular,
    Hamming,
    /// Label-overlap oracle; scores are Dice values, higher is better.
    Brutal,
    /// Seeded random ranking baseline; scores are positions.
    Random,
}

impl From<Metric> for RankMetric {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Euclidean => RankMetric::Euclidean,
            Metric::Angular => RankMetric::Angular,
            Metric::Hamming => RankMetric::Hamming,
        }
    }
}

impl RankMetric {
    pub fn higher_is_better(self) -> bool {
        self == RankMetric::Brutal
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedEntry {
    pub volume_id: String,
    pub slice_index: u32,
    pub score: f64,
    /// Position of the record in the index.
    #[serde(skip)]
    pub record: usize,
}

/// At most one entry per volume, best first.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedResult {
    pub semantics: Semantics,
    pub metric: RankMetric,
    pub entries: Vec<RankedEntry>,
    /// Fewer volumes were available than requested.
    pub short: bool,
}

impl RankedResult {
    /// Scores are monotone in the metric's preferred direction.
    pub fn is_ordered(&self) -> bool {
        self.entries.windows(2).all(|w| {
            if self.metric.higher_is_better() {
                w[0].score >= w[1].score
            } else {
                w[0].score <= w[1].score
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryOptions {
    pub semantics: Semantics,
    pub metric: Metric,
    pub q: usize,
    /// Skip every slice of the query's own volume.
    pub exclude_own_volume: bool,
}

/// Picks the best slice of every eligible volume under `score`, then keeps
/// the best `q` volumes. `better(a, b)` is true when `a` strictly beats `b`.
pub(crate) fn rank_volumes<S, B>(
    index: &ReferenceIndex,
    query_volume: Option<&str>,
    q: usize,
    score: S,
    better: B,
) -> Result<(Vec<RankedEntry>, bool)>
where
    S: Fn(&CodeRecord) -> Result<f64> + Sync + Send,
    B: Fn(f64, f64) -> bool + Sync + Send,
{
    if q == 0 {
        return Err(Error::invalid("q must be positive"));
    }
    let candidates: Vec<&VolumeGroup> = index
        .volumes
        .iter()
        .filter(|v| query_volume != Some(v.volume_id.as_str()))
        .collect();
    let per_volume = par::map_slice(&candidates, |vol| -> Result<Option<RankedEntry>> {
        let mut best: Option<RankedEntry> = None;
        for &ri in &vol.records {
            let s = score(&index.records[ri])?;
            if best.as_ref().is_none_or(|b| better(s, b.score)) {
                best = Some(RankedEntry {
                    volume_id: vol.volume_id.clone(),
                    slice_index: index.records[ri].slice_index,
                    score: s,
                    record: ri,
                });
            }
        }
        Ok(best)
    });
    let mut entries = Vec::with_capacity(per_volume.len());
    for e in per_volume {
        if let Some(e) = e? {
            entries.push(e);
        }
    }
    entries.sort_by(|a, b| {
        let ord = if better(a.score, b.score) {
            std::cmp::Ordering::Less
        } else if better(b.score, a.score) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        };
        ord.then_with(|| a.volume_id.cmp(&b.volume_id))
    });
    let short = q > entries.len();
    entries.truncate(q);
    Ok((entries, short))
}

/// Volume-wise top-`q` retrieval by code distance.
///
/// Each reference volume contributes its closest slice (ties: lowest slice
/// index); volumes are ordered by that distance (ties: volume id). If fewer
/// than `q` volumes exist all are returned and `short` is set.
pub fn volume_topq(query: &CodeRecord, index: &ReferenceIndex, opts: &QueryOptions) -> Result<RankedResult> {
    // Fail early on a missing table rather than once per volume.
    for stream in streams_of(opts.semantics) {
        index.table(*stream, opts.metric)?;
    }
    let exclude = opts.exclude_own_volume.then_some(query.volume_id.as_str());
    let (entries, short) = rank_volumes(
        index,
        exclude,
        opts.q,
        |r| similarity(opts.semantics, opts.metric, query, r, index),
        |a, b| a < b,
    )?;
    Ok(RankedResult {
        semantics: opts.semantics,
        metric: opts.metric.into(),
        entries,
        short,
    })
}

pub(crate) fn streams_of(semantics: Semantics) -> &'static [Stream] {
    match semantics {
        Semantics::Normal => &[Stream::Normal],
        Semantics::Abnormal => &[Stream::Abnormal],
        Semantics::Sum => &[Stream::Normal, Stream::Abnormal],
    }
}
