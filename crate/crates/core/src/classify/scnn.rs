use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{default_ridge, one_hot, train_output_weights, RandomLayer};
use crate::error::ClassifyError;
use crate::features::{BankPlan, FilterBank};
use crate::pmf::Field;

/// Rows per matrix product when scoring large batches.
const BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScnnConfig {
    pub hidden: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub patch_size: usize,
    pub mask_radius: f64,
    /// Positional jitter applied to training patches (grid pixels).
    pub jitter_sigma: f64,
    pub n_classes: usize,
}

impl Default for ScnnConfig {
    fn default() -> Self {
        ScnnConfig {
            hidden: 12000,
            pool_size: 18,
            pool_stride: 6,
            patch_size: 61,
            mask_radius: 30.0,
            jitter_sigma: 10.0,
            n_classes: 4,
        }
    }
}

impl ScnnConfig {
    /// Pooling windows per patch side.
    pub fn pool_cells(&self) -> usize {
        if self.patch_size < self.pool_size {
            return 0;
        }
        (self.patch_size - self.pool_size) / self.pool_stride.max(1) + 1
    }
}

fn g1(u: f64) -> f64 {
    u * u
}

fn g2(u: f64) -> f64 {
    u.max(0.0).sqrt().sqrt()
}

/// Shallow convolutional network: a fixed filter bank, squared responses,
/// average pooling, a fourth-root compression, a frozen random hidden layer
/// with squared activations, and a linear output layer.
pub struct ScnnModel {
    pub config: ScnnConfig,
    bank: FilterBank,
    plan: BankPlan,
    pub w_in: RandomLayer,
    /// `hidden × n_classes`.
    pub w_out: DMatrix<f64>,
}

impl ScnnModel {
    /// A model with frozen input weights drawn from `seed` and zero output
    /// weights.
    pub fn new(config: ScnnConfig, bank: FilterBank, seed: u64) -> Self {
        let fan_in = bank.count() * config.pool_cells().pow(2);
        let w_in = RandomLayer::standard(fan_in, config.hidden, seed);
        Self::from_parts(config, bank, w_in, None)
    }

    pub(crate) fn from_parts(config: ScnnConfig, bank: FilterBank, w_in: RandomLayer, w_out: Option<DMatrix<f64>>) -> Self {
        let plan = BankPlan::new(&bank, config.patch_size, config.patch_size);
        let w_out = w_out.unwrap_or_else(|| DMatrix::zeros(config.hidden, config.n_classes));
        ScnnModel {
            config,
            bank,
            plan,
            w_in,
            w_out,
        }
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.w_in.fan_in()
    }

    /// `g₂(pool(g₁(filter(x))))`, ordered by filter, then pooling row, then
    /// pooling column.
    pub fn pooled_features(&self, patch: &Field) -> Vec<f64> {
        let n = self.config.patch_size;
        assert_eq!(patch.dims(), (n, n), "patch must be {n}x{n}");
        let (p, s, cells) = (self.config.pool_size, self.config.pool_stride, self.config.pool_cells());
        let norm = 1.0 / (p * p) as f64;
        let mut out = Vec::with_capacity(self.feature_dim());
        for resp in self.plan.responses(patch) {
            // summed-area table of the squared response
            let mut sat = vec![0.0; (n + 1) * (n + 1)];
            for r in 0..n {
                let mut run = 0.0;
                for c in 0..n {
                    run += g1(resp.get(r, c));
                    sat[(r + 1) * (n + 1) + c + 1] = sat[r * (n + 1) + c + 1] + run;
                }
            }
            for pr in 0..cells {
                for pc in 0..cells {
                    let (r0, c0) = (pr * s, pc * s);
                    let (r1, c1) = (r0 + p, c0 + p);
                    let sum = sat[r1 * (n + 1) + c1] - sat[r0 * (n + 1) + c1] - sat[r1 * (n + 1) + c0]
                        + sat[r0 * (n + 1) + c0];
                    out.push(g2(sum * norm));
                }
            }
        }
        out
    }

    fn feature_matrix(&self, patches: &[Field]) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = patches.par_iter().map(|p| self.pooled_features(p)).collect();
        let d = self.feature_dim();
        DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c])
    }

    /// Hidden activations, one row per patch.
    pub fn hidden_activations(&self, patches: &[Field]) -> DMatrix<f64> {
        self.w_in.activate(&self.feature_matrix(patches), g1)
    }

    /// Raw output scores for each patch.
    pub fn scores_batch(&self, patches: &[Field]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(BATCH) {
            let y = self.hidden_activations(chunk) * &self.w_out;
            out.extend(y.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()));
        }
        out
    }

    pub fn predict(&self, patch: &Field) -> usize {
        argmax_lowest(&scnn_forward(patch, self))
    }

    /// Solves the output layer on labeled patches and returns the training
    /// accuracy. Class balancing is the caller's job.
    pub fn fit(&mut self, patches: &[Field], labels: &[usize]) -> Result<f64, ClassifyError> {
        if patches.is_empty() {
            return Err(ClassifyError::EmptyTrainingSet);
        }
        if patches.len() != labels.len() {
            return Err(ClassifyError::Dimension(format!(
                "{} patches but {} labels",
                patches.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.config.n_classes) {
            return Err(ClassifyError::Dimension(format!("label {l} out of range")));
        }
        let h = self.hidden_activations(patches);
        let y = one_hot(labels, self.config.n_classes);
        self.w_out = train_output_weights(&h, &y, default_ridge(&h))?;
        let pred = &h * &self.w_out;
        let correct = pred
            .row_iter()
            .zip(labels)
            .filter(|(r, &l)| argmax_lowest(&r.iter().copied().collect::<Vec<_>>()) == l)
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Fraction of patches whose predicted class matches the label.
    pub fn accuracy(&self, patches: &[Field], labels: &[usize]) -> f64 {
        if patches.is_empty() {
            return 0.0;
        }
        let correct = self
            .scores_batch(patches)
            .iter()
            .zip(labels)
            .filter(|(s, &l)| argmax_lowest(s) == l)
            .count();
        correct as f64 / patches.len() as f64
    }
}

/// `W_out · g₁(W_in · g₂(pool(g₁(filter(x)))))`.
pub fn scnn_forward(patch: &Field, model: &ScnnModel) -> Vec<f64> {
    let f = model.pooled_features(patch);
    let x = DMatrix::from_row_slice(1, f.len(), &f);
    let y = model.w_in.activate(&x, g1) * &model.w_out;
    y.iter().copied().collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
