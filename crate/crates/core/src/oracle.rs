//! Reference pruners used to check the production kernels: a greedy
//! exact-update pruner and a brute-force support enumerator. Both work from
//! the Hessian directly and share nothing with the streaming compression
//! path.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, solve_with_cholesky, spd_inverse};
use crate::matrix::Matrix;

/// Output of a reference pruner.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub w_hat: Matrix,
    pub mask: Matrix,
    /// `0.5 * sum_rows delta^T H delta`; equals the squared activation
    /// reconstruction error when `h = 2 X^T X`.
    pub loss: f64,
}

/// Least-squares refit of one weight row on `support`, all other columns
/// forced to zero: solves `H[S,S] w_S = (H w)_S`.
fn refit_row(w: &[f64], h: &Matrix, support: &[usize]) -> Result<Vec<f64>> {
    let n = w.len();
    let s = support.len();
    let mut hss = Matrix::zeros(s, s);
    for (i, &a) in support.iter().enumerate() {
        for (j, &b) in support.iter().enumerate() {
            hss.set(i, j, h.get(a, b));
        }
    }
    let mut rhs = vec![0.0; s];
    for (i, &a) in support.iter().enumerate() {
        let mut acc = 0.0;
        for (c, &wc) in w.iter().enumerate() {
            acc += h.get(a, c) * wc;
        }
        rhs[i] = acc;
    }
    let l = cholesky_lower(&hss)?;
    let sol = solve_with_cholesky(&l, &rhs);
    let mut out = vec![0.0; n];
    for (i, &a) in support.iter().enumerate() {
        out[a] = sol[i];
    }
    Ok(out)
}

fn row_loss(w: &[f64], w_hat: &[f64], h: &Matrix) -> f64 {
    let n = w.len();
    let delta: Vec<f64> = w.iter().zip(w_hat).map(|(a, b)| b - a).collect();
    let mut q = 0.0;
    for i in 0..n {
        let mut hi = 0.0;
        for j in 0..n {
            hi += h.get(i, j) * delta[j];
        }
        q += delta[i] * hi;
    }
    0.5 * q
}

fn check_inputs(w: &Matrix, h: &Matrix, k: usize) -> Result<()> {
    if h.rows() != h.cols() || h.rows() != w.cols() {
        return Err(Error::dim("Hessian shape does not match weight columns"));
    }
    if k > w.cols() {
        return Err(Error::value("cannot prune more columns than exist"));
    }
    Ok(())
}

/// Greedy exact pruner: per row, repeatedly drops the column with the
/// smallest `w_m^2 / [H_S^-1]_mm` on the surviving support, applying the
/// exact compensating update each step, and finishes with a least-squares
/// refit on the final support. Ties pick the lower column index.
pub fn greedy_obs_oracle(w: &Matrix, h: &Matrix, k: usize) -> Result<OracleResult> {
    check_inputs(w, h, k)?;
    let n = w.cols();
    let mut w_hat = Matrix::zeros(w.rows(), n);
    let mut mask = Matrix::zeros(w.rows(), n);
    let mut loss = 0.0;
    for r in 0..w.rows() {
        let mut support: Vec<usize> = (0..n).collect();
        let mut cur = w.row(r).to_vec();
        for _ in 0..k {
            let inv = spd_inverse(&submatrix(h, &support))?;
            let mut best = 0usize;
            let mut best_score = f64::INFINITY;
            for (i, &c) in support.iter().enumerate() {
                let score = cur[c] * cur[c] / inv.get(i, i);
                if score < best_score {
                    best_score = score;
                    best = i;
                }
            }
            // Exact single-column update on the surviving support.
            let m = best;
            let wm = cur[support[m]];
            let dmm = inv.get(m, m);
            for (i, &c) in support.iter().enumerate() {
                cur[c] -= wm / dmm * inv.get(i, m);
            }
            cur[support[m]] = 0.0;
            support.remove(m);
        }
        let refit = refit_row(w.row(r), h, &support)?;
        loss += row_loss(w.row(r), &refit, h);
        for &c in &support {
            mask.set(r, c, 1.0);
        }
        w_hat.row_mut(r).copy_from_slice(&refit);
    }
    Ok(OracleResult { w_hat, mask, loss })
}

/// Brute-force pruner: per row, enumerates every support of size `n - k`,
/// refits each and keeps the cheapest. Ties resolve to the lexicographically
/// smallest mask, which the ascending enumeration order yields for free.
/// Guarded to `n <= 12`.
pub fn exhaustive_mask_oracle(w: &Matrix, h: &Matrix, k: usize) -> Result<OracleResult> {
    check_inputs(w, h, k)?;
    let n = w.cols();
    if n > 12 {
        return Err(Error::config("exhaustive oracle is limited to 12 columns"));
    }
    let mut w_hat = Matrix::zeros(w.rows(), n);
    let mut mask = Matrix::zeros(w.rows(), n);
    let mut loss = 0.0;
    for r in 0..w.rows() {
        let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
        let mut zeros: Vec<usize> = (0..k).collect();
        loop {
            let support: Vec<usize> = (0..n).filter(|c| !zeros.contains(c)).collect();
            let refit = refit_row(w.row(r), h, &support)?;
            let cost = row_loss(w.row(r), &refit, h);
            if best.as_ref().is_none_or(|(b, _, _)| cost < *b) {
                best = Some((cost, support, refit));
            }
            if !next_combination(&mut zeros, n) {
                break;
            }
        }
        let (cost, support, refit) = best.expect("at least one support enumerated");
        loss += cost;
        for &c in &support {
            mask.set(r, c, 1.0);
        }
        w_hat.row_mut(r).copy_from_slice(&refit);
    }
    Ok(OracleResult { w_hat, mask, loss })
}

fn submatrix(h: &Matrix, idx: &[usize]) -> Matrix {
    let s = idx.len();
    let mut out = Matrix::zeros(s, s);
    for (i, &a) in idx.iter().enumerate() {
        for (j, &b) in idx.iter().enumerate() {
            out.set(i, j, h.get(a, b));
        }
    }
    out
}

/// Advances a sorted index combination to its lexicographic successor.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - (k - i) {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
