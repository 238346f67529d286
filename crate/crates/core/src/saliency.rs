//! Per-weight importance scores for the mask-based pruners.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Which rule produced a score matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Magnitude,
    ActivationNorm,
    InverseDiag,
}

/// Importance scores, same shape as the weight matrix; larger keeps.
#[derive(Debug, Clone)]
pub struct SaliencyMatrix {
    pub scores: Matrix,
    pub metric: Metric,
}

/// `|W[i][j]|`.
pub fn magnitude_scores(w: &Matrix) -> SaliencyMatrix {
    let mut scores = Matrix::zeros(w.rows(), w.cols());
    for r in 0..w.rows() {
        for c in 0..w.cols() {
            scores.set(r, c, w.get(r, c).abs());
        }
    }
    SaliencyMatrix { scores, metric: Metric::Magnitude }
}

/// Euclidean norms of the activation columns.
pub fn column_norms(x: &Matrix) -> Vec<f64> {
    let mut sumsq = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (c, v) in x.row(r).iter().enumerate() {
            sumsq[c] += v * v;
        }
    }
    sumsq.into_iter().map(libm::sqrt).collect()
}

/// `|W[i][j]| * ||X[:, j]||_2` with `x` the unweighted concatenation of the
/// calibration rows.
pub fn wanda_scores(w: &Matrix, x: &Matrix) -> Result<SaliencyMatrix> {
    if x.cols() != w.cols() {
        return Err(Error::dim(format!(
            "activations have {} columns, weights {}",
            x.cols(),
            w.cols()
        )));
    }
    wanda_scores_from_norms(w, &column_norms(x))
}

/// Same rule, from precomputed column norms; lets callers stream the norms
/// instead of materializing the concatenated activations.
pub fn wanda_scores_from_norms(w: &Matrix, norms: &[f64]) -> Result<SaliencyMatrix> {
    if norms.len() != w.cols() {
        return Err(Error::dim("one norm per weight column required"));
    }
    let mut scores = Matrix::zeros(w.rows(), w.cols());
    for r in 0..w.rows() {
        for (c, &n) in norms.iter().enumerate() {
            scores.set(r, c, w.get(r, c).abs() * n);
        }
    }
    Ok(SaliencyMatrix { scores, metric: Metric::ActivationNorm })
}

/// Weighted variant of the activation-norm rule, kept for ablations: column
/// norms are square roots of the weight-averaged squared norms.
pub fn weighted_column_norms(examples: &[(&Matrix, f64)]) -> Result<Vec<f64>> {
    let width = match examples.first() {
        Some((x, _)) => x.cols(),
        None => return Err(Error::value("no examples given")),
    };
    let mut sumsq = vec![0.0; width];
    let mut total = 0.0;
    for (x, weight) in examples {
        if x.cols() != width {
            return Err(Error::dim("examples disagree on feature width"));
        }
        if *weight < 0.0 || !weight.is_finite() {
            return Err(Error::value("weights must be finite and >= 0"));
        }
        total += weight;
        for r in 0..x.rows() {
            for (c, v) in x.row(r).iter().enumerate() {
                sumsq[c] += weight * v * v;
            }
        }
    }
    if total == 0.0 {
        return Err(Error::value("all example weights are zero"));
    }
    Ok(sumsq.into_iter().map(|s| libm::sqrt(s / total)).collect())
}

/// `W[i][j]^2 / inv_diag[j]` with `inv_diag` the diagonal of the inverse
/// (damped) Hessian. Non-positive or non-finite entries are rejected.
pub fn sparsegpt_scores(w: &Matrix, inv_diag: &[f64]) -> Result<SaliencyMatrix> {
    if inv_diag.len() != w.cols() {
        return Err(Error::dim("one inverse-diagonal entry per weight column required"));
    }
    for (c, &d) in inv_diag.iter().enumerate() {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::value(format!("inverse diagonal entry {c} is {d}, must be > 0")));
        }
    }
    let mut scores = Matrix::zeros(w.rows(), w.cols());
    for r in 0..w.rows() {
        for (c, &d) in inv_diag.iter().enumerate() {
            let v = w.get(r, c);
            scores.set(r, c, v * v / d);
        }
    }
    Ok(SaliencyMatrix { scores, metric: Metric::InverseDiag })
}
