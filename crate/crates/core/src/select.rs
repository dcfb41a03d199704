//! Per-tracker discriminative feature selection over a shared feature stack.

use crate::features::FeatureStack;
use crate::pmf::{Grid2D, EPS_MASS};

/// Number of histogram bins for feature responses in `[0, 1]`.
pub const BINS: usize = 64;
/// Added to background bins in the likelihood ratio.
pub const EPS_LR: f64 = 1e-6;

/// Zero-based bin of a response in `[0, 1]` (one-based bin minus one).
#[inline]
pub fn bin_index(z: f64) -> usize {
    ((z * BINS as f64).floor().max(0.0) as usize).min(BINS - 1)
}

/// Normalized 64-bin histogram of feature responses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureHist {
    bins: [f64; BINS],
}

impl FeatureHist {
    pub fn uniform() -> Self {
        FeatureHist {
            bins: [1.0 / BINS as f64; BINS],
        }
    }

    pub fn delta(bin: usize) -> Self {
        let mut bins = [0.0; BINS];
        bins[bin] = 1.0;
        FeatureHist { bins }
    }

    /// Normalizes raw non-negative counts; `None` when the mass is below
    /// [`EPS_MASS`].
    pub fn from_counts(counts: &[f64; BINS]) -> Option<Self> {
        let s: f64 = counts.iter().sum();
        if !(s > EPS_MASS) {
            return None;
        }
        let mut bins = [0.0; BINS];
        for (b, c) in bins.iter_mut().zip(counts) {
            *b = c / s;
        }
        Some(FeatureHist { bins })
    }

    /// Like [`FeatureHist::from_counts`] but substitutes the uniform
    /// histogram for an empty one.
    pub fn from_counts_or_uniform(counts: &[f64; BINS]) -> Self {
        Self::from_counts(counts).unwrap_or_else(Self::uniform)
    }

    pub fn bins(&self) -> &[f64; BINS] {
        &self.bins
    }
}

/// Feature maps quantized to bin indices, shared read-only by all trackers.
#[derive(Clone, Debug)]
pub struct BinnedStack {
    rows: usize,
    cols: usize,
    ids: Vec<usize>,
    bins: Vec<Vec<u8>>,
}

impl BinnedStack {
    pub fn new(stack: &FeatureStack) -> Self {
        let (rows, cols) = stack.dims();
        let bins = stack
            .maps
            .iter()
            .map(|m| m.values().iter().map(|&z| bin_index(z) as u8).collect())
            .collect();
        BinnedStack {
            rows,
            cols,
            ids: stack.ids.clone(),
            bins,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn feature(&self, index: usize) -> &[u8] {
        &self.bins[index]
    }
}

/// Half-open rectangle `[r0, r1) × [c0, c1)` of frame pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Patch {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl Patch {
    pub fn full(rows: usize, cols: usize) -> Self {
        Patch {
            r0: 0,
            r1: rows,
            c0: 0,
            c1: cols,
        }
    }

    /// A `size`×`size` square centered on `(r, c)`, clipped to the frame.
    pub fn centered(r: usize, c: usize, size: usize, rows: usize, cols: usize) -> Self {
        let h = size / 2;
        Patch {
            r0: r.saturating_sub(h),
            r1: (r + size - h).min(rows),
            c0: c.saturating_sub(h),
            c1: (c + size - h).min(cols),
        }
    }

    pub fn area(&self) -> usize {
        (self.r1 - self.r0) * (self.c1 - self.c0)
    }
}

/// Object (`F`) and local background (`B`) histograms of one binned feature.
///
/// `F` is weighted by the object mask everywhere; `B` by `1 − mask` inside
/// the patch. Empty histograms become uniform.
pub fn class_histograms_binned(
    bins: &[u8],
    cols: usize,
    obj_mask: &Grid2D,
    patch: &Patch,
) -> (FeatureHist, FeatureHist) {
    let mut f = [0.0; BINS];
    let mut b = [0.0; BINS];
    let mask = obj_mask.values();
    for r in patch.r0..patch.r1 {
        let row = r * cols;
        for i in row + patch.c0..row + patch.c1 {
            let w = mask[i];
            let u = bins[i] as usize;
            f[u] += w;
            b[u] += (1.0 - w).max(0.0);
        }
    }
    // object mass outside the patch still counts toward F
    let inside: f64 = f.iter().sum();
    if (inside - obj_mask.sum()).abs() > 1e-12 {
        for (i, &w) in mask.iter().enumerate() {
            let (r, c) = (i / cols, i % cols);
            if w > 0.0 && !(r >= patch.r0 && r < patch.r1 && c >= patch.c0 && c < patch.c1) {
                f[bins[i] as usize] += w;
            }
        }
    }
    (
        FeatureHist::from_counts_or_uniform(&f),
        FeatureHist::from_counts_or_uniform(&b),
    )
}

/// [`class_histograms_binned`] on an unquantized map in `[0, 1]`.
pub fn class_histograms(map: &Grid2D, obj_mask: &Grid2D, patch: &Patch) -> (FeatureHist, FeatureHist) {
    let bins: Vec<u8> = map.values().iter().map(|&z| bin_index(z) as u8).collect();
    class_histograms_binned(&bins, map.cols(), obj_mask, patch)
}

/// Likelihood ratio `F / (B + ε)` per bin, scaled so the largest value among
/// bins present in `bins` is 1. Returns `None` if that maximum is zero.
fn ratio_table(f: &FeatureHist, b: &FeatureHist, present: &[bool; BINS]) -> Option<[f64; BINS]> {
    let mut table = [0.0; BINS];
    let mut max = 0.0f64;
    for u in 0..BINS {
        table[u] = f.bins[u] / (b.bins[u] + EPS_LR);
        if present[u] {
            max = max.max(table[u]);
        }
    }
    if !(max > 0.0) {
        return None;
    }
    for v in &mut table {
        *v /= max;
    }
    Some(table)
}

fn present_bins(bins: &[u8]) -> [bool; BINS] {
    let mut present = [false; BINS];
    for &u in bins {
        present[u as usize] = true;
    }
    present
}

/// Back-projected likelihood ratio of a binned feature, divided by its
/// maximum over pixels; all zeros if the ratio vanishes everywhere.
pub fn likelihood_map_binned(f: &FeatureHist, b: &FeatureHist, bins: &[u8], rows: usize, cols: usize) -> Grid2D {
    match ratio_table(f, b, &present_bins(bins)) {
        Some(t) => Grid2D::from_vec(rows, cols, bins.iter().map(|&u| t[u as usize]).collect())
            .expect("ratios are finite and non-negative"),
        None => Grid2D::zeros(rows, cols),
    }
}

pub fn likelihood_map(f: &FeatureHist, b: &FeatureHist, map: &Grid2D) -> Grid2D {
    let bins: Vec<u8> = map.values().iter().map(|&z| bin_index(z) as u8).collect();
    likelihood_map_binned(f, b, &bins, map.rows(), map.cols())
}

fn kl_bits(p: &[f64; BINS], q: &[f64; BINS]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pu, &qu)| pu > 0.0 && qu > 0.0)
        .map(|(&pu, &qu)| pu * (pu / qu).log2())
        .sum()
}

/// Mutual information (bits) between the binned response and the
/// object/background label, with `p(c = 1) = prior_obj`.
pub fn mmd_score(f: &FeatureHist, b: &FeatureHist, prior_obj: f64) -> f64 {
    if f == b {
        return 0.0;
    }
    let mut mix = [0.0; BINS];
    for u in 0..BINS {
        mix[u] = prior_obj * f.bins[u] + (1.0 - prior_obj) * b.bins[u];
    }
    let i = prior_obj * kl_bits(&f.bins, &mix) + (1.0 - prior_obj) * kl_bits(&b.bins, &mix);
    i.max(0.0)
}

pub fn bhattacharyya(p: &FeatureHist, q: &FeatureHist) -> f64 {
    p.bins
        .iter()
        .zip(&q.bins)
        .map(|(a, b)| (a * b).sqrt())
        .sum::<f64>()
        .min(1.0)
}

/// Normalized elementwise product; keeps `prev` when the product vanishes.
pub fn update_feature_posterior(prev: &FeatureHist, measured: &FeatureHist) -> FeatureHist {
    let mut prod = [0.0; BINS];
    for u in 0..BINS {
        prod[u] = prev.bins[u] * measured.bins[u];
    }
    FeatureHist::from_counts(&prod).unwrap_or(*prev)
}

/// Per-feature evidence gathered for one tracker in one frame.
#[derive(Clone, Debug)]
pub struct FeatureEvidence {
    pub f_m: FeatureHist,
    pub b: FeatureHist,
    pub mmd: f64,
    pub weight: f64,
}

/// The chosen features (as stack indices and ids), their fusion weights and
/// the fused detection map.
#[derive(Clone, Debug)]
pub struct SelectionResult {
    pub chosen: Vec<usize>,
    pub ids: Vec<usize>,
    pub weights: Vec<f64>,
    pub fused: Grid2D,
}

/// Indices of the `n` highest-scoring entries; ties go to the lower index.
pub fn top_n(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// Scores every feature, keeps the top `n` by mutual information and sums
/// their normalized likelihood maps weighted by `mmd × bhattacharyya`.
pub fn select_and_fuse(
    stack: &BinnedStack,
    evidence: &[FeatureEvidence],
    n: usize,
) -> SelectionResult {
    let (rows, cols) = stack.dims();
    let mmd: Vec<f64> = evidence.iter().map(|e| e.mmd).collect();
    let chosen = top_n(&mmd, n.min(evidence.len()));
    let mut fused = vec![0.0; rows * cols];
    let mut weights = Vec::with_capacity(chosen.len());
    for &k in &chosen {
        let e = &evidence[k];
        weights.push(e.weight);
        if !(e.weight > 0.0) {
            continue;
        }
        let bins = stack.feature(k);
        if let Some(t) = ratio_table(&e.f_m, &e.b, &present_bins(bins)) {
            for (acc, &u) in fused.iter_mut().zip(bins) {
                *acc += e.weight * t[u as usize];
            }
        }
    }
    SelectionResult {
        ids: chosen.iter().map(|&k| stack.ids()[k]).collect(),
        chosen,
        weights,
        fused: Grid2D::from_vec(rows, cols, fused).expect("weighted sum of ratios"),
    }
}

/// Builds per-feature evidence for one tracker: histograms under its object
/// mask, the class prior within the patch, MMD scores and temporal weights.
pub fn gather_evidence(
    stack: &BinnedStack,
    obj_mask: &Grid2D,
    patch: &Patch,
    learned: &[FeatureHist],
) -> Vec<FeatureEvidence> {
    let (_, cols) = stack.dims();
    let mut in_patch = 0.0;
    for r in patch.r0..patch.r1 {
        in_patch += obj_mask.row(r)[patch.c0..patch.c1].iter().sum::<f64>();
    }
    let prior = (in_patch / patch.area().max(1) as f64).clamp(1e-12, 1.0 - 1e-12);
    (0..stack.len())
        .map(|k| {
            let (f_m, b) = class_histograms_binned(stack.feature(k), cols, obj_mask, patch);
            let mmd = mmd_score(&f_m, &b, prior);
            let weight = mmd * bhattacharyya(&f_m, &learned[k]);
            FeatureEvidence { f_m, b, mmd, weight }
        })
        .collect()
}
