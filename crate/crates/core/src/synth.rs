//! Deterministic synthetic dataset generator.
//!
//! Every volume has an elliptical anatomy footprint made of a core plus five
//! angular sectors (six normal categories) that drift across slices. A volume
//! carries lesions with probability `lesion_rate`: one to three nested blobs
//! whose inner, middle and outer shells get the three abnormal categories.
//!
//! Features are average-pooled one-hot fractions projected by a fixed seeded
//! matrix plus noise. The noise is seeded by a hash of the label map, so equal
//! label maps always produce equal codes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codebook::{learn_codebook, quantize, Codebook, FeatureGrid, LearnConfig, Stream};
use crate::error::{Error, Result};
use crate::metrics::{CategorySet, LabelMap};
use crate::par;
use crate::search::{CodeRecord, Dataset};

pub use crate::eval::area_of;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub volumes: usize,
    pub slices_per_volume: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub label_h: usize,
    pub label_w: usize,
    pub k: usize,
    pub d: usize,
    pub lesion_rate: f64,
    pub seed: u64,
    /// Standard deviation of the feature noise.
    pub noise_std: f64,
    /// Learner epochs for both codebooks.
    pub epochs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            volumes: 40,
            slices_per_volume: 32,
            grid_h: 8,
            grid_w: 8,
            label_h: 64,
            label_w: 64,
            k: 128,
            d: 16,
            lesion_rate: 0.75,
            seed: 0,
            noise_std: 0.05,
            epochs: 10,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("volumes", self.volumes),
            ("slices_per_volume", self.slices_per_volume),
            ("grid_h", self.grid_h),
            ("grid_w", self.grid_w),
            ("label_h", self.label_h),
            ("label_w", self.label_w),
            ("d", self.d),
            ("epochs", self.epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.k < 2 {
            return Err(Error::invalid("k must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.lesion_rate) {
            return Err(Error::invalid("lesion_rate must lie in [0, 1]"));
        }
        if self.label_h < self.grid_h || self.label_w < self.grid_w {
            return Err(Error::invalid("label dimensions must be at least the grid dimensions"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub normal: Codebook,
    pub abnormal: Codebook,
}

/// SplitMix64 finalizer; derives independent sub-seeds.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

fn label_hash(labels: &LabelMap, stream: Stream) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    };
    eat(stream as u8);
    for v in [labels.h() as u64, labels.w() as u64] {
        v.to_le_bytes().into_iter().for_each(&mut eat);
    }
    labels.data().iter().copied().for_each(eat);
    h
}

struct Lesion {
    cy: f64,
    cx: f64,
    radius: f64,
    /// Slice position (in [0, 1]) of the largest cross-section.
    center_t: f64,
    /// Half-width of the slab of slices the lesion occupies.
    half_width: f64,
}

struct VolumeShape {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    tilt: f64,
    phase: f64,
    drift: f64,
    lesions: Vec<Lesion>,
}

impl VolumeShape {
    fn sample(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = (cfg.label_h as f64, cfg.label_w as f64);
        let cy = h / 2.0 + rng.random_range(-0.05..0.05) * h;
        let cx = w / 2.0 + rng.random_range(-0.05..0.05) * w;
        let ay = rng.random_range(0.30..0.42) * h;
        let ax = rng.random_range(0.30..0.42) * w;
        let tilt = rng.random_range(-0.4..0.4);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let drift = rng.random_range(-1.5..1.5);
        let mut lesions = Vec::new();
        if rng.random_bool(cfg.lesion_rate) {
            let n = rng.random_range(1..=3);
            for _ in 0..n {
                // position in anatomy-normalized coordinates, inside the core
                let r = 0.55 * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                lesions.push(Lesion {
                    cy: r * a.sin(),
                    cx: r * a.cos(),
                    radius: rng.random_range(0.18..0.38),
                    center_t: rng.random_range(0.25..0.75),
                    half_width: rng.random_range(0.2..0.45),
                });
            }
        }
        Self {
            cy,
            cx,
            ay,
            ax,
            tilt,
            phase,
            drift,
            lesions,
        }
    }

    /// Normal and abnormal label maps of the slice at position `t` in [0, 1].
    fn render(&self, cfg: &SynthConfig, t: f64) -> (LabelMap, LabelMap) {
        let (lh, lw) = (cfg.label_h, cfg.label_w);
        let scale = 0.55 + 0.45 * (std::f64::consts::PI * t).sin();
        let (ay, ax) = (self.ay * scale, self.ax * scale);
        let (sin_t, cos_t) = self.tilt.sin_cos();
        let phase = self.phase + self.drift * t;
        let sector = std::f64::consts::TAU / 5.0;

        let mut normal = vec![0u8; lh * lw];
        let mut abnormal = vec![0u8; lh * lw];
        for y in 0..lh {
            for x in 0..lw {
                let dy = y as f64 + 0.5 - self.cy;
                let dx = x as f64 + 0.5 - self.cx;
                // anatomy-normalized coordinates
                let u = (cos_t * dx + sin_t * dy) / ax;
                let v = (-sin_t * dx + cos_t * dy) / ay;
                let rho = (u * u + v * v).sqrt();
                if rho >= 1.0 {
                    continue;
                }
                let px = y * lw + x;
                normal[px] = if rho < 0.5 {
                    1
                } else {
                    let ang = (v.atan2(u) - phase).rem_euclid(std::f64::consts::TAU);
                    2 + ((ang / sector) as u8).min(4)
                };
                for lesion in &self.lesions {
                    let s = (t - lesion.center_t) / lesion.half_width;
                    let r = lesion.radius * (1.0 - s * s);
                    if r <= 0.0 {
                        continue;
                    }
                    let dist = ((u - lesion.cx).powi(2) + (v - lesion.cy).powi(2)).sqrt() / r;
                    // shell priority: core > enhancing > edema
                    let cat = if dist < 0.35 {
                        3
                    } else if dist < 0.65 {
                        1
                    } else if dist < 1.0 {
                        2
                    } else {
                        0
                    };
                    let rank = |c: u8| match c {
                        3 => 3,
                        1 => 2,
                        2 => 1,
                        _ => 0,
                    };
                    if rank(cat) > rank(abnormal[px]) {
                        abnormal[px] = cat;
                    }
                }
            }
        }
        (
            LabelMap::new(lh, lw, CategorySet::Normal6, normal).expect("rendered labels are in range"),
            LabelMap::new(lh, lw, CategorySet::Abnormal3, abnormal).expect("rendered labels are in range"),
        )
    }
}

/// Fixed projection from one-hot category fractions to feature space. Row 0
/// (background) is zero.
fn projection(categories: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut p = vec![0.0; (categories + 1) * d];
    for v in &mut p[d..] {
        *v = normal.sample(&mut rng);
    }
    p
}

/// Average-pools the one-hot encoding of `labels` to grid resolution,
/// projects it and adds noise seeded by the label map's hash.
fn features(labels: &LabelMap, stream: Stream, proj: &[f64], cfg: &SynthConfig) -> FeatureGrid {
    let d = cfg.d;
    let categories = labels.category_set().count() as usize;
    let (gh, gw) = (cfg.grid_h, cfg.grid_w);
    let (lh, lw) = (labels.h(), labels.w());
    let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, label_hash(labels, stream)));
    let noise = Normal::new(0.0, cfg.noise_std).expect("validated noise std");
    let mut data = vec![0.0; gh * gw * d];
    let mut frac = vec![0.0; categories + 1];
    for r in 0..gh {
        let (y0, y1) = (r * lh / gh, (r + 1) * lh / gh);
        for c in 0..gw {
            let (x0, x1) = (c * lw / gw, (c + 1) * lw / gw);
            frac.iter_mut().for_each(|f| *f = 0.0);
            for y in y0..y1 {
                for x in x0..x1 {
                    frac[labels.data()[y * lw + x] as usize] += 1.0;
                }
            }
            let area = ((y1 - y0) * (x1 - x0)) as f64;
            let cell = &mut data[(r * gw + c) * d..(r * gw + c + 1) * d];
            for (cat, f) in frac.iter().enumerate().skip(1) {
                if *f == 0.0 {
                    continue;
                }
                let w = f / area;
                for (o, p) in cell.iter_mut().zip(&proj[cat * d..(cat + 1) * d]) {
                    *o += w * p;
                }
            }
            for o in cell.iter_mut() {
                *o += noise.sample(&mut rng);
            }
        }
    }
    FeatureGrid::new(gh, gw, d, data).expect("grid shape is consistent")
}

struct Slice {
    volume: usize,
    slice: usize,
    normal_labels: LabelMap,
    abnormal_labels: LabelMap,
    normal_features: FeatureGrid,
    abnormal_features: FeatureGrid,
}

/// Generates a dataset and learns both codebooks from its features.
/// Output depends only on `config`.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let proj_normal = projection(CategorySet::Normal6.count() as usize, config.d, derive(config.seed, 1));
    let proj_abnormal = projection(
        CategorySet::Abnormal3.count() as usize,
        config.d,
        derive(config.seed, 2),
    );

    let volumes: Vec<Vec<Slice>> = par::map_range(config.volumes, |v| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(config.seed, 1000 + v as u64));
        let shape = VolumeShape::sample(config, &mut rng);
        let n = config.slices_per_volume;
        (0..n)
            .map(|s| {
                let t = if n == 1 { 0.5 } else { s as f64 / (n - 1) as f64 };
                let (normal_labels, abnormal_labels) = shape.render(config, t);
                let normal_features = features(&normal_labels, Stream::Normal, &proj_normal, config);
                let abnormal_features = features(&abnormal_labels, Stream::Abnormal, &proj_abnormal, config);
                Slice {
                    volume: v,
                    slice: s,
                    normal_labels,
                    abnormal_labels,
                    normal_features,
                    abnormal_features,
                }
            })
            .collect()
    });
    let slices: Vec<Slice> = volumes.into_iter().flatten().collect();

    let learn = |stream: Stream, tag: u64| -> Result<Codebook> {
        let mut flat = Vec::with_capacity(slices.len() * config.grid_h * config.grid_w * config.d);
        for s in &slices {
            let grid = match stream {
                Stream::Normal => &s.normal_features,
                Stream::Abnormal => &s.abnormal_features,
            };
            flat.extend_from_slice(grid.as_flat());
        }
        let lc = LearnConfig {
            stream,
            k: config.k,
            epochs: config.epochs,
            seed: derive(config.seed, tag),
            ..LearnConfig::default()
        };
        learn_codebook(&flat, config.d, &lc)
    };
    let normal = learn(Stream::Normal, 3)?;
    let abnormal = learn(Stream::Abnormal, 4)?;

    let records = par::map_slice(&slices, |s| -> Result<CodeRecord> {
        let (normal_code, _) = quantize(&s.normal_features, &normal)?;
        let (abnormal_code, _) = quantize(&s.abnormal_features, &abnormal)?;
        CodeRecord::new(
            volume_id(s.volume),
            s.slice as u32,
            normal_code,
            abnormal_code,
            s.normal_labels.clone(),
            s.abnormal_labels.clone(),
        )
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SynthOutput {
        dataset: Dataset::new(records)?,
        normal,
        abnormal,
    })
}

/// Canonical id of the `v`-th generated volume.
pub fn volume_id(v: usize) -> String {
    format!("v{v:03}")
}

/// Configuration of [`clustered_vectors`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterConfig {
    pub clusters: usize,
    pub per_cluster: usize,
    pub d: usize,
    /// Standard deviation of cluster centers around the origin.
    pub center_std: f64,
    /// Standard deviation of points around their center.
    pub spread: f64,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            clusters: 24,
            per_cluster: 400,
            d: 16,
            center_std: 1.0,
            spread: 0.08,
            seed: 0,
        }
    }
}

/// Gaussian-mixture vectors, row-major, in cluster-interleaved order.
pub fn clustered_vectors(config: &ClusterConfig) -> Result<Vec<f64>> {
    if config.clusters == 0 || config.per_cluster == 0 || config.d == 0 {
        return Err(Error::invalid("clusters, per_cluster and d must be positive"));
    }
    if !(config.center_std.is_finite() && config.center_std >= 0.0 && config.spread.is_finite() && config.spread >= 0.0)
    {
        return Err(Error::invalid("standard deviations must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers_dist = Normal::new(0.0, config.center_std).expect("validated");
    let point_dist = Normal::new(0.0, config.spread).expect("validated");
    let centers: Vec<f64> = (0..config.clusters * config.d)
        .map(|_| centers_dist.sample(&mut rng))
        .collect();
    let mut out = Vec::with_capacity(config.clusters * config.per_cluster * config.d);
    for _ in 0..config.per_cluster {
        for c in 0..config.clusters {
            for j in 0..config.d {
                out.push(centers[c * config.d + j] + point_dist.sample(&mut rng));
            }
        }
    }
    Ok(out)
}
