//! Small dense factorizations: Cholesky, triangular inverse, SPD solves.
//! Everything is column-pivoting-free and deterministic; problem sizes here
//! are a few hundred at most.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Lower Cholesky factor `L` with `L * L^T = a`. Reads only the lower
/// triangle of `a`. Fails with the offending column when a pivot is not
/// strictly positive.
pub fn cholesky_lower(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dim("cholesky of non-square matrix"));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            let v = l.get(j, k);
            d -= v * v;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::numerical("non-positive pivot in Cholesky", j, d));
        }
        let d = libm::sqrt(d);
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix, by forward substitution per column.
pub fn invert_lower(l: &Matrix) -> Matrix {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    for c in 0..n {
        let mut x = vec![0.0; n];
        x[c] = 1.0;
        for i in c..n {
            let mut s = x[i];
            for k in c..i {
                s -= l.get(i, k) * x[k];
            }
            x[i] = s / l.get(i, i);
        }
        for i in c..n {
            inv.set(i, c, x[i]);
        }
    }
    inv
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
/// Symmetric by construction: returns `(L^-1)^T * (L^-1)`.
pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    let l = cholesky_lower(a)?;
    Ok(invert_lower(&l).gram())
}

/// Solves `a * x = b` for SPD `a` given its lower Cholesky factor.
pub fn solve_with_cholesky(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.get(k, i) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    y
}

/// Round half to even, the rounding used by the quantizer.
pub fn round_half_even(x: f64) -> f64 {
    let t = libm::floor(x);
    let d = x - t;
    if d > 0.5 {
        t + 1.0
    } else if d < 0.5 {
        t
    } else if libm::fmod(t, 2.0) == 0.0 {
        t
    } else {
        t + 1.0
    }
}
