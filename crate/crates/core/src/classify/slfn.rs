use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{default_ridge, one_hot, rows_to_matrix, train_output_weights, RandomLayer};
use super::scnn::argmax_lowest;
use crate::error::ClassifyError;
use crate::eval::{overlap, sequence_assignment, Detection, GroundTruthRecord, T_D};
use crate::pmf::OrientedBox;
use crate::scenegen::ObjectClass;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlfnConfig {
    pub state_hidden: usize,
    pub shape_hidden: usize,
    /// Bagged state networks; the shape network is one more member.
    pub n_bags: usize,
}

impl Default for SlfnConfig {
    fn default() -> Self {
        SlfnConfig {
            state_hidden: 320,
            shape_hidden: 12800,
            n_bags: 6,
        }
    }
}

/// Standardization by training mean and rms of the mean-subtracted values,
/// either per feature or pooled over all of them.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatNorm {
    pub mean: Vec<f64>,
    pub rms: Vec<f64>,
}

impl FeatNorm {
    pub fn identity(d: usize) -> Self {
        FeatNorm {
            mean: vec![0.0; d],
            rms: vec![1.0; d],
        }
    }

    pub fn fit_per_feature(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let rms = (0..d)
            .map(|j| guard_rms((rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt()))
            .collect();
        FeatNorm { mean, rms }
    }

    /// A single mean and rms shared by every input.
    pub fn fit_global(rows: &[Vec<f64>]) -> Self {
        let count = rows.iter().map(|r| r.len()).sum::<usize>().max(1) as f64;
        let mean = rows.iter().flatten().sum::<f64>() / count;
        let rms = guard_rms((rows.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / count).sqrt());
        FeatNorm {
            mean: vec![mean],
            rms: vec![rms],
        }
    }

    pub fn is_global(&self) -> bool {
        self.mean.len() == 1
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.is_global() {
            x.iter().map(|v| (v - self.mean[0]) / self.rms[0]).collect()
        } else {
            x.iter()
                .zip(self.mean.iter().zip(&self.rms))
                .map(|(v, (m, s))| (v - m) / s)
                .collect()
        }
    }
}

fn guard_rms(r: f64) -> f64 {
    if r > 1e-12 && r.is_finite() {
        r
    } else {
        1.0
    }
}

/// `softmax(v)ᵢ = exp(vᵢ − max v) / Σ`.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Unnormalized state features: classifier softmax, then width, length,
/// unsigned inclination and energy.
pub fn base_features(scores: &[f64], bbox: &OrientedBox, energy: f64) -> Vec<f64> {
    let mut f = softmax(scores);
    f.extend([2.0 * bbox.half_wid, 2.0 * bbox.half_len, bbox.abs_inclination(), energy]);
    f
}

/// All pairwise products `fᵢ·fⱼ` for `i ≤ j`, followed by the features.
pub fn expand_pairs(f: &[f64]) -> Vec<f64> {
    let d = f.len();
    let mut out = Vec::with_capacity(d * (d + 1) / 2 + d);
    for i in 0..d {
        for j in i..d {
            out.push(f[i] * f[j]);
        }
    }
    out.extend_from_slice(f);
    out
}

/// Standardized and pair-expanded state features.
pub fn assemble_slfn_features(scores: &[f64], bbox: &OrientedBox, energy: f64, norm: &FeatNorm) -> Vec<f64> {
    expand_pairs(&norm.apply(&base_features(scores, bbox, energy)))
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Single hidden layer network with frozen sigmoid hidden units.
#[derive(Clone, Debug, PartialEq)]
pub struct SlfnModel {
    pub w_in: RandomLayer,
    /// `hidden × n_classes`.
    pub w_out: DMatrix<f64>,
}

impl SlfnModel {
    pub fn fit(inputs: &[Vec<f64>], labels: &[usize], n_classes: usize, hidden: usize, seed: u64) -> Result<Self, ClassifyError> {
        if inputs.is_empty() {
            return Err(ClassifyError::EmptyTrainingSet);
        }
        let d = inputs[0].len();
        let w_in = RandomLayer::standard(d, hidden, seed);
        let h = w_in.activate(&rows_to_matrix(inputs, d), sigmoid);
        let w_out = train_output_weights(&h, &one_hot(labels, n_classes), default_ridge(&h))?;
        Ok(SlfnModel { w_in, w_out })
    }
}

/// `W'_out · sigmoid(W'_in · feat)`.
pub fn slfn_forward(feat: &[f64], model: &SlfnModel) -> Vec<f64> {
    let x = DMatrix::from_row_slice(1, feat.len(), feat);
    (model.w_in.activate(&x, sigmoid) * &model.w_out).iter().copied().collect()
}

/// Sums the members' softmax outputs; the class is the largest entry with
/// ties going to the lowest id.
pub fn ensemble_predict(per_slfn_scores: &[Vec<f64>]) -> (usize, Vec<f64>) {
    let n = per_slfn_scores.first().map_or(0, |s| s.len());
    let mut combined = vec![0.0; n];
    for s in per_slfn_scores {
        for (c, p) in combined.iter_mut().zip(softmax(s)) {
            *c += p;
        }
    }
    (argmax_lowest(&combined), combined)
}

/// Everything the ensemble sees about one filter in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SefSample {
    pub frame: usize,
    pub sef_id: usize,
    pub bbox: OrientedBox,
    pub energy: f64,
    /// Raw S-CNN scores of the patch at the box center.
    pub scores: Vec<f64>,
    /// Flattened posterior shape.
    pub shape: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlfnTrainingSet {
    pub samples: Vec<SefSample>,
    pub labels: Vec<usize>,
    /// Disjoint index sets covering every sample.
    pub bags: Vec<Vec<usize>>,
}

/// Labels every filter-frame through the sequence-level tracker-to-object
/// mapping. A sample takes its object's class in frames where its box
/// overlaps that object by at least the scoring threshold; everything else
/// is Clutter. Samples are then shuffled into `n_bags` disjoint bags.
pub fn build_slfn_training_set<R: Rng + ?Sized>(
    samples: Vec<SefSample>,
    gts: &[GroundTruthRecord],
    n_bags: usize,
    rng: &mut R,
) -> SlfnTrainingSet {
    let dets: Vec<Detection> = samples
        .iter()
        .map(|s| Detection {
            frame: s.frame,
            sef_id: s.sef_id,
            bbox: s.bbox,
            label: ObjectClass::Clutter,
        })
        .collect();
    let mapping = sequence_assignment(&dets, gts);
    let gt_at: BTreeMap<(usize, usize), &GroundTruthRecord> =
        gts.iter().map(|g| ((g.frame, g.object_id), g)).collect();
    let labels: Vec<usize> = samples
        .iter()
        .map(|s| {
            mapping
                .get(&s.sef_id)
                .and_then(|obj| gt_at.get(&(s.frame, *obj)))
                .filter(|g| overlap(&s.bbox, &g.bbox) >= T_D)
                .map_or(ObjectClass::Clutter.id(), |g| g.class.id())
        })
        .collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let n_bags = n_bags.max(1);
    let bags = (0..n_bags)
        .map(|b| {
            let lo = b * order.len() / n_bags;
            let hi = (b + 1) * order.len() / n_bags;
            let mut bag = order[lo..hi].to_vec();
            bag.sort_unstable();
            bag
        })
        .collect();
    SlfnTrainingSet { samples, labels, bags }
}

/// Bagged state networks plus one shape network.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub n_classes: usize,
    pub state_norm: FeatNorm,
    pub state: Vec<SlfnModel>,
    pub shape_norm: FeatNorm,
    pub shape: SlfnModel,
}

impl Ensemble {
    /// Trains every member; seeds for the frozen layers are `seed + i`.
    pub fn train(set: &SlfnTrainingSet, n_classes: usize, cfg: &SlfnConfig, seed: u64) -> Result<Self, ClassifyError> {
        if set.samples.is_empty() {
            return Err(ClassifyError::EmptyTrainingSet);
        }
        let base: Vec<Vec<f64>> = set
            .samples
            .iter()
            .map(|s| base_features(&s.scores, &s.bbox, s.energy))
            .collect();
        let state_norm = FeatNorm::fit_per_feature(&base);
        let expanded: Vec<Vec<f64>> = base.iter().map(|b| expand_pairs(&state_norm.apply(b))).collect();
        let mut state = Vec::with_capacity(set.bags.len());
        for (i, bag) in set.bags.iter().enumerate() {
            if bag.is_empty() {
                return Err(ClassifyError::EmptyTrainingSet);
            }
            let x: Vec<Vec<f64>> = bag.iter().map(|&j| expanded[j].clone()).collect();
            let y: Vec<usize> = bag.iter().map(|&j| set.labels[j]).collect();
            state.push(SlfnModel::fit(&x, &y, n_classes, cfg.state_hidden, seed + i as u64)?);
        }
        let shapes: Vec<Vec<f64>> = set.samples.iter().map(|s| s.shape.clone()).collect();
        let shape_norm = FeatNorm::fit_global(&shapes);
        let x: Vec<Vec<f64>> = shapes.iter().map(|s| shape_norm.apply(s)).collect();
        let shape = SlfnModel::fit(&x, &set.labels, n_classes, cfg.shape_hidden, seed + set.bags.len() as u64)?;
        Ok(Ensemble {
            n_classes,
            state_norm,
            state,
            shape_norm,
            shape,
        })
    }

    /// Raw outputs of every member.
    pub fn member_scores(&self, scores: &[f64], bbox: &OrientedBox, energy: f64, shape: &[f64]) -> Vec<Vec<f64>> {
        let feat = assemble_slfn_features(scores, bbox, energy, &self.state_norm);
        let mut out: Vec<Vec<f64>> = self.state.iter().map(|m| slfn_forward(&feat, m)).collect();
        out.push(slfn_forward(&self.shape_norm.apply(shape), &self.shape));
        out
    }

    pub fn predict(&self, scores: &[f64], bbox: &OrientedBox, energy: f64, shape: &[f64]) -> (usize, Vec<f64>) {
        ensemble_predict(&self.member_scores(scores, bbox, energy, shape))
    }

    /// [`Ensemble::predict`] for many samples, one matrix product per member.
    pub fn predict_batch(&self, samples: &[SefSample]) -> Vec<(usize, Vec<f64>)> {
        if samples.is_empty() {
            return Vec::new();
        }
        let feats: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| assemble_slfn_features(&s.scores, &s.bbox, s.energy, &self.state_norm))
            .collect();
        let shapes: Vec<Vec<f64>> = samples.iter().map(|s| self.shape_norm.apply(&s.shape)).collect();
        let x_state = rows_to_matrix(&feats, feats[0].len());
        let x_shape = rows_to_matrix(&shapes, shapes[0].len());
        let mut outputs: Vec<DMatrix<f64>> = self
            .state
            .iter()
            .map(|m| m.w_in.activate(&x_state, sigmoid) * &m.w_out)
            .collect();
        outputs.push(self.shape.w_in.activate(&x_shape, sigmoid) * &self.shape.w_out);
        (0..samples.len())
            .map(|i| {
                let members: Vec<Vec<f64>> = outputs.iter().map(|y| y.row(i).iter().copied().collect()).collect();
                ensemble_predict(&members)
            })
            .collect()
    }
}
