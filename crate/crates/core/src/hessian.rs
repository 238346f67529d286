//! Streaming weighted Hessian accumulation and its Cholesky-based inverse
//! factor.
//!
//! The accumulator keeps a running weighted mean of per-example `2 X^T X`
//! terms: with running weight sum `A`, each example updates
//! `H += (alpha / A) * (2 X^T X - H)`. Feeding two pools whose examples
//! carry constant weights `alpha` and `1 - alpha` therefore lands exactly on
//! the closed-form mixture of the per-pool means when the pools have equal
//! counts, while never materializing more than one d*d buffer.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, invert_lower};
use crate::matrix::Matrix;

/// Running weighted mean of `2 X^T X` over a stream of weighted examples.
#[derive(Debug, Clone)]
pub struct HessianState {
    dim: usize,
    h: Matrix,
    weight_sum: f64,
    n_seen: usize,
}

impl HessianState {
    pub fn new(dim: usize) -> Self {
        HessianState { dim, h: Matrix::zeros(dim, dim), weight_sum: 0.0, n_seen: 0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    /// Folds one activation matrix (rows are positions, columns features)
    /// into the running mean. A zero weight counts the example as seen but
    /// leaves the state untouched.
    pub fn accumulate(&mut self, x: &Matrix, alpha: f64) -> Result<()> {
        if x.cols() != self.dim {
            return Err(Error::dim(format!(
                "activation has {} features, state expects {}",
                x.cols(),
                self.dim
            )));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::value(format!("example weight {alpha} must be finite and >= 0")));
        }
        if !x.is_all_finite() {
            return Err(Error::value("activation contains non-finite entries"));
        }
        self.n_seen += 1;
        if alpha == 0.0 {
            return Ok(());
        }
        self.weight_sum += alpha;
        let g = x.gram();
        let w = alpha / self.weight_sum;
        // 2g and h are both bitwise symmetric, so the elementwise update
        // preserves symmetry exactly.
        for i in 0..self.dim {
            for j in 0..self.dim {
                let cur = self.h.get(i, j);
                self.h.set(i, j, cur + w * (2.0 * g.get(i, j) - cur));
            }
        }
        Ok(())
    }

    /// The accumulated Hessian. Errors when no weight has been folded in.
    pub fn finalize(&self) -> Result<Matrix> {
        if self.weight_sum == 0.0 {
            return Err(Error::value("no weighted examples accumulated"));
        }
        Ok(self.h.clone())
    }

    /// Combines two partial accumulations as if their streams had been
    /// concatenated: weight sums add, Hessians average weighted by them.
    pub fn merge(a: &HessianState, b: &HessianState) -> Result<HessianState> {
        if a.dim != b.dim {
            return Err(Error::dim("merging states of different dimension"));
        }
        let weight_sum = a.weight_sum + b.weight_sum;
        let mut h = Matrix::zeros(a.dim, a.dim);
        if weight_sum > 0.0 {
            h.add_scaled(&a.h, a.weight_sum / weight_sum)?;
            h.add_scaled(&b.h, b.weight_sum / weight_sum)?;
        }
        Ok(HessianState { dim: a.dim, h, weight_sum, n_seen: a.n_seen + b.n_seen })
    }
}

/// Closed-form two-pool mixture `alpha * h_domain + (1 - alpha) * h_generic`.
/// The endpoints return the corresponding input unchanged.
pub fn mix(h_domain: &Matrix, h_generic: &Matrix, alpha: f64) -> Result<Matrix> {
    if h_domain.rows() != h_generic.rows() || h_domain.cols() != h_generic.cols() {
        return Err(Error::dim("mixing Hessians of different shape"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::value(format!("alpha {alpha} outside [0, 1]")));
    }
    if alpha == 1.0 {
        return Ok(h_domain.clone());
    }
    if alpha == 0.0 {
        return Ok(h_generic.clone());
    }
    let mut out = Matrix::zeros(h_domain.rows(), h_domain.cols());
    out.add_scaled(h_domain, alpha)?;
    out.add_scaled(h_generic, 1.0 - alpha)?;
    Ok(out)
}

/// Adds relative dampening: `lambda = rel_damp * mean(diag(h))`, falling back
/// to `lambda = rel_damp` when the mean diagonal is zero. Returns the damped
/// matrix and the lambda used.
pub fn dampen(h: &Matrix, rel_damp: f64) -> Result<(Matrix, f64)> {
    if h.rows() != h.cols() {
        return Err(Error::dim("dampening a non-square matrix"));
    }
    if !rel_damp.is_finite() || rel_damp < 0.0 {
        return Err(Error::value(format!("rel_damp {rel_damp} must be finite and >= 0")));
    }
    let n = h.rows();
    let mut mean = 0.0;
    for i in 0..n {
        mean += h.get(i, i);
    }
    mean /= n as f64;
    let lambda = if mean == 0.0 { rel_damp } else { rel_damp * mean };
    let mut out = h.clone();
    for i in 0..n {
        out.set(i, i, out.get(i, i) + lambda);
    }
    Ok((out, lambda))
}

/// Columns of `h` whose diagonal is exactly zero, i.e. features with no
/// activation mass anywhere in the calibration stream.
pub fn dead_columns(h: &Matrix) -> Vec<usize> {
    (0..h.cols()).filter(|&c| h.get(c, c) == 0.0).collect()
}

/// Upper-triangular factor `T` with `T^T T = H^-1`, plus the per-column
/// diagonal the compression kernels consume.
#[derive(Debug, Clone)]
pub struct InvHessianFactor {
    t: Matrix,
    diag: Vec<f64>,
    dead: Vec<usize>,
    damp: f64,
}

impl InvHessianFactor {
    pub fn dim(&self) -> usize {
        self.t.rows()
    }

    /// Row `c` of the factor; entries before `c` are zero.
    pub fn row(&self, c: usize) -> &[f64] {
        self.t.row(c)
    }

    /// `d_c = T[c, c]`.
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Sorted column indices that carried no activation mass.
    pub fn dead(&self) -> &[usize] {
        &self.dead
    }

    pub fn is_dead(&self, c: usize) -> bool {
        self.dead.binary_search(&c).is_ok()
    }

    pub fn damp(&self) -> f64 {
        self.damp
    }

    /// Dense `H^-1 = T^T T`, symmetric by construction.
    pub fn full_inverse(&self) -> Matrix {
        self.t.gram()
    }

    /// Inverse Hessian of the trailing support `{s..}` once every earlier
    /// column has left the problem: `(H[s.., s..])^-1 = (T[s.., s..])^T T[s.., s..]`.
    pub fn trailing_inverse(&self, s: usize) -> Matrix {
        self.t.trailing(s).gram()
    }
}

/// Factors the damped Hessian into the upper-triangular `T` with
/// `T^T T = H^-1`. Dead columns get their diagonal replaced by one first so
/// the factorization cannot produce NaN; they surface in the factor with a
/// unit diagonal and must be pruned by the caller.
pub fn invert_cholesky(h_damped: &Matrix, dead: &[usize], damp: f64) -> Result<InvHessianFactor> {
    let n = h_damped.rows();
    if h_damped.cols() != n {
        return Err(Error::dim("factoring a non-square matrix"));
    }
    let mut work = h_damped.clone();
    for &c in dead {
        if c >= n {
            return Err(Error::dim(format!("dead column {c} outside 0..{n}")));
        }
        work.set(c, c, 1.0);
    }
    let l = cholesky_lower(&work)?;
    let hinv = invert_lower(&l).gram();
    // Upper factor of the inverse: H^-1 = C C^T with C lower, so T = C^T.
    let c = cholesky_lower(&hinv)?;
    let t = c.transpose();
    let diag = (0..n).map(|i| t.get(i, i)).collect();
    let mut dead = dead.to_vec();
    dead.sort_unstable();
    dead.dedup();
    Ok(InvHessianFactor { t, diag, dead, damp })
}
