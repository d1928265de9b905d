//! Label-map overlap metrics and segmentation losses.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower clamp for probabilities inside `log`.
pub const DEFAULT_PROB_CLAMP: f64 = 1e-7;

/// Which label vocabulary a map uses. Id 0 is background in both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategorySet {
    /// Six normal anatomical categories, ids 1..=6.
    Normal6,
    /// Three abnormality categories, ids 1..=3.
    Abnormal3,
}

impl CategorySet {
    pub fn count(self) -> u8 {
        match self {
            CategorySet::Normal6 => 6,
            CategorySet::Abnormal3 => 3,
        }
    }

    /// Foreground ids.
    pub fn categories(self) -> std::ops::RangeInclusive<u8> {
        1..=self.count()
    }
}

/// `h × w` map of category ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    h: usize,
    w: usize,
    set: CategorySet,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, set: CategorySet, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "{h}x{w} label map with {} pixels",
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v > set.count()) {
            return Err(Error::invalid(format!("label {bad} outside {set:?}")));
        }
        Ok(Self { h, w, set, data })
    }

    pub fn background(h: usize, w: usize, set: CategorySet) -> Self {
        Self {
            h,
            w,
            set,
            data: vec![0; h * w],
        }
    }

    pub fn from_grid(grid: &[Vec<u8>], set: CategorySet) -> Result<Self> {
        let h = grid.len();
        let w = grid.first().map_or(0, Vec::len);
        if grid.iter().any(|r| r.len() != w) {
            return Err(Error::ShapeMismatch("ragged label map".into()));
        }
        Self::new(h, w, set, grid.concat())
    }

    pub fn to_grid(&self) -> Vec<Vec<u8>> {
        if self.w == 0 {
            return vec![Vec::new(); self.h];
        }
        self.data.chunks(self.w).map(<[u8]>::to_vec).collect()
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn category_set(&self) -> CategorySet {
        self.set
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn mask(&self, category: u8) -> Vec<bool> {
        self.data.iter().map(|&v| v == category).collect()
    }

    /// Number of non-background pixels.
    pub fn foreground_area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Pixel count per id, index 0 = background.
    pub fn histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.set.count() as usize + 1];
        for &v in &self.data {
            hist[v as usize] += 1;
        }
        hist
    }
}

/// `s × h × w` per-pixel class probabilities, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    s: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl ProbMap {
    /// Checks that every pixel's probabilities lie in `[0, 1]` and sum to 1
    /// within 1e-6.
    pub fn new(s: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != s * h * w {
            return Err(Error::DimensionMismatch {
                expected: s * h * w,
                actual: data.len(),
            });
        }
        if data.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probability outside [0, 1]"));
        }
        let n = h * w;
        for px in 0..n {
            let total: f64 = (0..s).map(|c| data[c * n + px]).sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("pixel {px} probabilities sum to {total}")));
            }
        }
        Ok(Self { s, h, w, data })
    }

    /// Probability 1 on the labelled class of every pixel.
    pub fn one_hot(labels: &LabelMap) -> Self {
        let s = labels.set.count() as usize + 1;
        let n = labels.h * labels.w;
        let mut data = vec![0.0; s * n];
        for (px, &v) in labels.data.iter().enumerate() {
            data[v as usize * n + px] = 1.0;
        }
        Self {
            s,
            h: labels.h,
            w: labels.w,
            data,
        }
    }

    pub fn prob(&self, class: usize, px: usize) -> f64 {
        self.data[class * self.h * self.w + px]
    }

    /// Hard assignment: most probable class per pixel, ties to the lower id.
    pub fn argmax(&self, set: CategorySet) -> Result<LabelMap> {
        let n = self.h * self.w;
        let data = (0..n)
            .map(|px| {
                (0..self.s).fold(0usize, |best, c| {
                    if self.prob(c, px) > self.prob(best, px) {
                        c
                    } else {
                        best
                    }
                }) as u8
            })
            .collect();
        LabelMap::new(self.h, self.w, set, data)
    }
}

/// Dice coefficient `2|a∩b| / (|a|+|b|)`; two empty masks score 1.
pub fn dice(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "masks of {} and {} pixels",
            a.len(),
            b.len()
        )));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    Ok(dice_from_counts(na, nb, both))
}

#[inline]
fn dice_from_counts(na: usize, nb: usize, both: usize) -> f64 {
    if na + nb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (na + nb) as f64
    }
}

/// Per-category pixel counts of two label maps.
struct PairCounts {
    a: Vec<usize>,
    b: Vec<usize>,
    both: Vec<usize>,
}

fn pair_counts(a: &LabelMap, b: &LabelMap) -> Result<PairCounts> {
    if a.set != b.set {
        return Err(Error::invalid(format!(
            "category sets differ: {:?} vs {:?}",
            a.set, b.set
        )));
    }
    if (a.h, a.w) != (b.h, b.w) {
        return Err(Error::ShapeMismatch(format!("{}x{} vs {}x{}", a.h, a.w, b.h, b.w)));
    }
    let n = a.set.count() as usize + 1;
    let mut counts = PairCounts {
        a: vec![0; n],
        b: vec![0; n],
        both: vec![0; n],
    };
    for (&x, &y) in a.data.iter().zip(&b.data) {
        counts.a[x as usize] += 1;
        counts.b[y as usize] += 1;
        if x == y {
            counts.both[x as usize] += 1;
        }
    }
    Ok(counts)
}

/// Mean of per-category Dice over categories present in either map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CategoryDice {
    pub mean: f64,
    /// No foreground in either map; `mean` is 1 by convention.
    pub degenerate: bool,
}

pub fn mean_category_dice(a: &LabelMap, b: &LabelMap) -> Result<CategoryDice> {
    let c = pair_counts(a, b)?;
    let mut sum = 0.0;
    let mut present = 0usize;
    for s in a.set.categories().map(usize::from) {
        if c.a[s] + c.b[s] > 0 {
            sum += dice_from_counts(c.a[s], c.b[s], c.both[s]);
            present += 1;
        }
    }
    Ok(if present == 0 {
        CategoryDice {
            mean: 1.0,
            degenerate: true,
        }
    } else {
        CategoryDice {
            mean: sum / present as f64,
            degenerate: false,
        }
    })
}

/// Generalized Dice loss over foreground categories with weights
/// `w_s = 1 / |gt_s|²`; categories absent from `gt` get weight 0.
pub fn generalized_dice_loss(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    let c = pair_counts(pred, gt)?;
    let (mut num, mut den) = (0.0, 0.0);
    for s in gt.set.categories().map(usize::from) {
        if c.b[s] == 0 {
            continue;
        }
        let w = 1.0 / (c.b[s] as f64).powi(2);
        num += w * c.both[s] as f64;
        den += w * (c.a[s] + c.b[s]) as f64;
    }
    if den == 0.0 {
        return Err(Error::invalid(
            "generalized Dice needs at least one non-empty ground-truth category",
        ));
    }
    Ok(1.0 - 2.0 * num / den)
}

/// Focal loss `-(1/N) Σ_px (1 - p_true)^γ log p_true` with `p` clamped to
/// `[clamp, 1]`. Channels of `prob` are indexed by label id, background
/// included.
pub fn focal_loss(prob: &ProbMap, gt: &LabelMap, gamma: f64) -> Result<f64> {
    focal_loss_clamped(prob, gt, gamma, DEFAULT_PROB_CLAMP)
}

pub fn focal_loss_clamped(prob: &ProbMap, gt: &LabelMap, gamma: f64, clamp: f64) -> Result<f64> {
    if (prob.h, prob.w) != (gt.h, gt.w) {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {}x{} vs labels {}x{}",
            prob.h, prob.w, gt.h, gt.w
        )));
    }
    if prob.s < gt.set.count() as usize + 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} probability channels for {:?}",
            prob.s, gt.set
        )));
    }
    let n = gt.h * gt.w;
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = gt
        .data
        .iter()
        .enumerate()
        .map(|(px, &s)| {
            let p = prob.prob(s as usize, px).clamp(clamp, 1.0);
            (1.0 - p).powf(gamma) * p.ln()
        })
        .sum();
    Ok(-total / n as f64)
}

/// `|a ∩ b| / |a ∪ b|` over index sets; two empty sets score 1.
pub fn jaccard<T: Ord + Copy>(a: &[T], b: &[T]) -> f64 {
    let a: BTreeSet<T> = a.iter().copied().collect();
    let b: BTreeSet<T> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lm(set: CategorySet, grid: &[&[u8]]) -> LabelMap {
        let rows: Vec<Vec<u8>> = grid.iter().map(|r| r.to_vec()).collect();
        LabelMap::from_grid(&rows, set).unwrap()
    }

    #[test]
    fn dice_basics() {
        let a = [true, true, false, false];
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(dice(&[false; 4], &[false; 4]).unwrap(), 1.0);
        assert!(dice(&a, &[true]).is_err());
    }

    #[test]
    fn dice_half_overlap() {
        // |a| = 4, |b| = 4, overlap 2: 2*2 / 8
        let a = [true, true, true, true, false, false];
        let b = [false, false, true, true, true, true];
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn mean_dice_cases() {
        let a = lm(CategorySet::Abnormal3, &[&[1, 1], &[2, 0]]);
        assert_eq!(mean_category_dice(&a, &a).unwrap().mean, 1.0);
        // category 1 matches, category 2 disjoint
        let x = lm(CategorySet::Abnormal3, &[&[1, 2], &[0, 0]]);
        let y = lm(CategorySet::Abnormal3, &[&[1, 0], &[2, 0]]);
        assert_eq!(mean_category_dice(&x, &y).unwrap().mean, 0.5);
        let bg = LabelMap::background(2, 2, CategorySet::Normal6);
        let r = mean_category_dice(&bg, &bg).unwrap();
        assert_eq!(r.mean, 1.0);
        assert!(r.degenerate);
        assert!(mean_category_dice(&a, &bg).is_err());
    }

    #[test]
    fn generalized_dice_cases() {
        let gt = lm(CategorySet::Abnormal3, &[&[1, 1, 1, 1], &[0, 0, 0, 0]]);
        assert_eq!(generalized_dice_loss(&gt, &gt).unwrap(), 0.0);
        let disjoint = lm(CategorySet::Abnormal3, &[&[0, 0, 0, 0], &[1, 1, 1, 1]]);
        assert_eq!(generalized_dice_loss(&disjoint, &gt).unwrap(), 1.0);
        // |gt| = 4, |pred| = 4, overlap 2: w = 1/16, 1 - 2*(2/16)/(8/16)
        let half = lm(CategorySet::Abnormal3, &[&[0, 0, 1, 1], &[1, 1, 0, 0]]);
        assert_eq!(generalized_dice_loss(&half, &gt).unwrap(), 0.5);
        let empty = LabelMap::background(2, 4, CategorySet::Abnormal3);
        assert!(generalized_dice_loss(&gt, &empty).is_err());
    }

    #[test]
    fn focal_cases() {
        let gt = lm(CategorySet::Abnormal3, &[&[0, 1], &[2, 3]]);
        assert_eq!(focal_loss(&ProbMap::one_hot(&gt), &gt, 2.0).unwrap(), 0.0);

        let single = LabelMap::new(1, 1, CategorySet::Abnormal3, vec![1]).unwrap();
        let p = ProbMap::new(4, 1, 1, vec![0.25, 0.5, 0.125, 0.125]).unwrap();
        let expected = -0.25 * 0.5f64.ln();
        let got = focal_loss(&p, &single, 2.0).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.1733).abs() < 1e-4);

        // gamma = 0 is cross-entropy
        let ce = focal_loss(&p, &single, 0.0).unwrap();
        assert!((ce + 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn focal_clamps_zero_probability() {
        let single = LabelMap::new(1, 1, CategorySet::Abnormal3, vec![1]).unwrap();
        let p = ProbMap::new(4, 1, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let v = focal_loss(&p, &single, 2.0).unwrap();
        assert!(v.is_finite());
        assert!((v + (1.0 - 1e-7f64).powi(2) * 1e-7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&[2, 5, 7], &[5, 7, 9]), 0.5);
        assert_eq!(jaccard(&[1, 2], &[2, 1]), 1.0);
        assert_eq!(jaccard(&[1, 2], &[3]), 0.0);
        assert_eq!(jaccard::<u32>(&[], &[]), 1.0);
    }

    #[test]
    fn prob_map_validation_and_argmax() {
        assert!(ProbMap::new(2, 1, 1, vec![0.5, 0.6]).is_err());
        let p = ProbMap::new(4, 1, 2, vec![0.1, 0.7, 0.6, 0.1, 0.2, 0.1, 0.1, 0.1]).unwrap();
        assert_eq!(p.argmax(CategorySet::Abnormal3).unwrap().data(), &[1, 0]);
    }

    fn label_maps() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (1usize..40).prop_flat_map(|n| (prop::collection::vec(0u8..=3, n), prop::collection::vec(0u8..=3, n)))
    }

    proptest! {
        #[test]
        fn dice_and_jaccard_symmetric((a, b) in label_maps()) {
            let ma: Vec<bool> = a.iter().map(|&v| v == 1).collect();
            let mb: Vec<bool> = b.iter().map(|&v| v == 1).collect();
            prop_assert_eq!(dice(&ma, &mb).unwrap(), dice(&mb, &ma).unwrap());
            prop_assert_eq!(jaccard(&a, &b), jaccard(&b, &a));
            if ma.iter().any(|&x| x) {
                prop_assert_eq!(dice(&ma, &ma).unwrap(), 1.0);
            }
        }

        #[test]
        fn mean_dice_relabel_invariant((a, b) in label_maps(), perm in Just([0u8, 3, 1, 2])) {
            let n = a.len();
            let la = LabelMap::new(1, n, CategorySet::Abnormal3, a.clone()).unwrap();
            let lb = LabelMap::new(1, n, CategorySet::Abnormal3, b.clone()).unwrap();
            let pa = LabelMap::new(1, n, CategorySet::Abnormal3, a.iter().map(|&v| perm[v as usize]).collect()).unwrap();
            let pb = LabelMap::new(1, n, CategorySet::Abnormal3, b.iter().map(|&v| perm[v as usize]).collect()).unwrap();
            let x = mean_category_dice(&la, &lb).unwrap().mean;
            let y = mean_category_dice(&pa, &pb).unwrap().mean;
            prop_assert!((x - y).abs() < 1e-12);
        }

        #[test]
        fn generalized_dice_zero_on_match(a in prop::collection::vec(0u8..=3, 1..40)) {
            let gt = LabelMap::new(1, a.len(), CategorySet::Abnormal3, a.clone()).unwrap();
            if gt.foreground_area() > 0 {
                prop_assert_eq!(generalized_dice_loss(&gt, &gt).unwrap(), 0.0);
            }
        }

        #[test]
        fn focal_decreases_with_true_prob(p1 in 0.01f64..0.99, p2 in 0.01f64..0.99, gamma in 0.0f64..4.0) {
            let gt = LabelMap::new(1, 1, CategorySet::Abnormal3, vec![2]).unwrap();
            let mk = |p: f64| ProbMap::new(4, 1, 1, vec![(1.0 - p) / 3.0, (1.0 - p) / 3.0, p, (1.0 - p) / 3.0]).unwrap();
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(focal_loss(&mk(hi), &gt, gamma).unwrap() <= focal_loss(&mk(lo), &gt, gamma).unwrap());
        }
    }
}
