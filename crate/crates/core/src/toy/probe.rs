// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-form ridge-regularized least-squares linear probe.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::store::ActivationTensor;

/// Per-sample feature vectors: layer activations concatenated in layer order.
pub fn features(tensors: &[ActivationTensor]) -> Vec<Vec<f64>> {
    let samples = tensors.first().map_or(0, ActivationTensor::samples);
    (0..samples)
        .map(|s| {
            tensors
                .iter()
                .flat_map(|t| t.row(s).iter().map(|&v| f64::from(v)))
                .collect()
        })
        .collect()
}

/// Linear map from features (plus a bias) to one score per class.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    num_features: usize,
    num_classes: usize,
    /// `(num_features + 1) x num_classes`; the last row is the bias.
    weights: DMatrix<f64>,
}

impl LinearProbe {
    /// Solves `(X^T X + ridge * I) W = X^T Y` for one-hot targets `Y`.
    /// The bias row is not regularized.
    pub fn fit(x: &[Vec<f64>], labels: &[u32], num_classes: usize, ridge: f64) -> Result<Self> {
        let s = x.len();
        if s == 0 || s != labels.len() {
            return Err(Error::Shape(format!("{s} feature rows for {} labels", labels.len())));
        }
        let f = x[0].len();
        let design = DMatrix::from_fn(s, f + 1, |i, j| if j == f { 1.0 } else { x[i][j] });
        let targets = DMatrix::from_fn(s, num_classes, |i, k| if labels[i] as usize == k { 1.0 } else { 0.0 });
        let mut gram = design.transpose() * &design;
        for j in 0..f {
            gram[(j, j)] += ridge;
        }
        let rhs = design.transpose() * targets;
        let chol = gram.cholesky().ok_or(Error::SingularProbe)?;
        let weights = chol.solve(&rhs);
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::SingularProbe);
        }
        Ok(LinearProbe {
            num_features: f,
            num_classes,
            weights,
        })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.num_features);
        (0..self.num_classes)
            .map(|k| {
                let col = self.weights.column(k);
                x.iter().zip(col.iter()).map(|(a, w)| a * w).sum::<f64>() + col[self.num_features]
            })
            .collect()
    }

    /// Argmax of the scores; the lowest class index wins ties.
    pub fn predict(&self, x: &[f64]) -> u32 {
        let scores = self.scores(x);
        let mut best = 0;
        for (k, &v) in scores.iter().enumerate() {
            if v > scores[best] {
                best = k;
            }
        }
        best as u32
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Vec<u32> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_points() {
        let x = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![5.0, 5.0], vec![5.1, 4.9], vec![0.0, 9.0], vec![0.2, 9.1]];
        let y = vec![0, 0, 1, 1, 2, 2];
        let probe = LinearProbe::fit(&x, &y, 3, 1e-6).unwrap();
        assert_eq!(probe.predict_all(&x), y);
    }

    #[test]
    fn singular_without_ridge() {
        // duplicated feature column makes X^T X singular
        let x = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        assert!(matches!(LinearProbe::fit(&x, &[0, 1, 0], 2, 0.0), Err(Error::SingularProbe)));
        assert!(LinearProbe::fit(&x, &[0, 1, 0], 2, 1e-3).is_ok());
    }
}
