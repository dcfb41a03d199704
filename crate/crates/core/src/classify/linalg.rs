use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::ClassifyError;

/// Ridge used when none is given: `1e−6 · trace(HᵀH) / cols(H)`.
pub fn default_ridge(h: &DMatrix<f64>) -> f64 {
    1e-6 * h.norm_squared() / h.ncols().max(1) as f64
}

/// Output weights minimizing `‖H·W − Y‖² + ridge·‖W‖²`.
///
/// Solves the `cols × cols` normal equations, or the equivalent
/// `rows × rows` system `W = Hᵀ (H Hᵀ + ridge·I)⁻¹ Y` when there are fewer
/// rows than columns.
pub fn train_output_weights(h: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>, ClassifyError> {
    if h.nrows() != y.nrows() {
        return Err(ClassifyError::Dimension(format!(
            "activations have {} rows, targets {}",
            h.nrows(),
            y.nrows()
        )));
    }
    if h.nrows() == 0 {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    let singular = ClassifyError::SingularSystem { ridge };
    if h.nrows() < h.ncols() {
        let mut g = h * h.transpose();
        for i in 0..g.nrows() {
            g[(i, i)] += ridge;
        }
        let a = g.cholesky().ok_or(singular)?.solve(y);
        Ok(h.tr_mul(&a))
    } else {
        let mut g = h.tr_mul(h);
        for i in 0..g.nrows() {
            g[(i, i)] += ridge;
        }
        let w = g.cholesky().ok_or(singular)?.solve(&h.tr_mul(y));
        if w.iter().all(|v| v.is_finite()) {
            Ok(w)
        } else {
            Err(ClassifyError::SingularSystem { ridge })
        }
    }
}

/// A frozen random input layer, stored as `fan_in × hidden` so a batch of
/// input rows multiplies on the right. Only the seed and scale need saving.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomLayer {
    pub seed: u64,
    pub scale: f64,
    pub weights: DMatrix<f64>,
}

impl RandomLayer {
    /// Zero-mean Gaussian weights with standard deviation `scale`.
    pub fn new(fan_in: usize, hidden: usize, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, scale).expect("finite scale");
        let weights = DMatrix::from_fn(fan_in, hidden, |_, _| n.sample(&mut rng));
        RandomLayer { seed, scale, weights }
    }

    /// Weights scaled by `1/sqrt(fan_in)`.
    pub fn standard(fan_in: usize, hidden: usize, seed: u64) -> Self {
        Self::new(fan_in, hidden, seed, 1.0 / (fan_in.max(1) as f64).sqrt())
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.weights.ncols()
    }

    /// `g(X · W)` for input rows `x`.
    pub fn activate(&self, x: &DMatrix<f64>, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut h = x * &self.weights;
        h.apply(|v| *v = g(*v));
        h
    }
}

/// One-hot target rows.
pub fn one_hot(labels: &[usize], n_classes: usize) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), n_classes, |r, c| if labels[r] == c { 1.0 } else { 0.0 })
}

pub fn rows_to_matrix(rows: &[Vec<f64>], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c])
}
