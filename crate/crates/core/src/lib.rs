//! Similarity search over discrete latent codes.
//!
//! An image is represented by two grids of codebook indices: a *normal* code
//! describing healthy anatomy and an *abnormal* code describing pathology.
//! This crate provides:
//!
//! - [`codebook`]: continuous codebooks, nearest-neighbor vector quantization,
//!   latent loss, EMA codebook learning and codebook statistics.
//! - [`hashing`]: binarization of a codebook with the separating hyperplanes
//!   between every pair of code vectors, and greedy bit-length optimization
//!   that preserves every code vector's Hamming nearest neighbors.
//! - [`search`]: Euclidean / angular / Hamming distance kernels, per-image
//!   similarity over normal, abnormal or summed codes, and volume-wise top-Q
//!   retrieval.
//! - [`metrics`]: Dice, generalized Dice loss, focal loss and Jaccard.
//! - [`eval`]: query selection, the label-overlap oracle ("brutal search"),
//!   the retrieval benchmark and the distance timing harness.
//! - [`synth`]: a deterministic synthetic dataset generator.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default). Every result is bit-identical with or without it and for
//! any thread count.

pub mod codebook;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod kernels;
pub mod metrics;
pub mod par;
pub mod search;
pub mod synth;

pub use codebook::{Codebook, FeatureGrid, LatentCode, Stream};
pub use error::{Error, Result};
pub use hashing::BinaryCodebook;
pub use metrics::{CategorySet, LabelMap, ProbMap};
pub use search::{CodeRecord, Dataset, Metric, RankedResult, ReferenceIndex, Semantics};
