//! One-shot layer compression: error-compensating pruning, grouped symmetric
//! quantization, and the joint pass that does both.
//!
//! All kernels consume the upper-triangular factor `T` (with
//! `T^T T = H^-1`): its diagonal feeds saliencies, its trailing Gram gives
//! the inverse Hessian of whatever support is still free, and its rows drive
//! the column-walk updates of the quantizer.
//!
//! Mask selection always happens per fixed window of [`SELECTION_WINDOW`]
//! columns from the weights as they stand when the window opens, so masks do
//! not depend on `block_size`. Within a window, pruned columns are eliminated
//! with exact compensating updates over everything still free (kept columns
//! of the same window included); `block_size` only batches those
//! eliminations, which changes results by float reassociation at most.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hessian::InvHessianFactor;
use crate::linalg::{cholesky_lower, round_half_even, solve_with_cholesky};
use crate::matrix::Matrix;
use crate::saliency::SaliencyMatrix;

/// Width of the mask-selection window; also the span inside which kept
/// columns keep receiving compensation before freezing.
pub const SELECTION_WINDOW: usize = 128;

/// Target sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum SparsitySpec {
    /// Per row and selection window, prune `ceil(fraction * width)` columns.
    Unstructured { fraction: f64 },
    /// Keep `n` of every aligned group of `m` columns.
    NOfM { n: usize, m: usize },
}

impl SparsitySpec {
    pub fn validate(&self, cols: usize) -> Result<()> {
        match *self {
            SparsitySpec::Unstructured { fraction } => {
                if !fraction.is_finite() || !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::config(format!("sparsity fraction {fraction} outside [0, 1]")));
                }
            }
            SparsitySpec::NOfM { n, m } => {
                if m == 0 || n > m {
                    return Err(Error::config(format!("{n}:{m} is not a valid keep pattern")));
                }
                if cols % m != 0 {
                    return Err(Error::config(format!("group size {m} does not divide {cols} columns")));
                }
            }
        }
        Ok(())
    }

    fn group_align(&self) -> usize {
        match *self {
            SparsitySpec::NOfM { m, .. } => m,
            SparsitySpec::Unstructured { .. } => 1,
        }
    }
}

/// Symmetric grouped quantization settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantSpec {
    pub bits: u32,
    /// Columns per scale group; anything >= the column count means one group
    /// per row.
    pub group_size: usize,
    pub symmetric: bool,
    pub clip_search: bool,
    /// Shrink factors tried on the max-abs scale, best squared error wins,
    /// ties keep the larger shrink.
    pub clip_grid: Vec<f64>,
}

impl Default for QuantSpec {
    fn default() -> Self {
        QuantSpec {
            bits: 4,
            group_size: 128,
            symmetric: true,
            clip_search: true,
            clip_grid: default_clip_grid(),
        }
    }
}

/// The default shrink grid 1.00, 0.95, ... 0.50.
pub fn default_clip_grid() -> Vec<f64> {
    (0..11).map(|i| 1.0 - 0.05 * i as f64).collect()
}

impl QuantSpec {
    /// The largest representable magnitude step count: grid is
    /// `{-qmax .. qmax} * scale`, leaving the extra negative code unused.
    pub fn qmax(&self) -> f64 {
        ((1u32 << (self.bits - 1)) - 1) as f64
    }

    /// Checks the settings and returns the effective group width for `cols`.
    pub fn validate(&self, cols: usize) -> Result<usize> {
        if !(2..=8).contains(&self.bits) {
            return Err(Error::config(format!("bits {} outside 2..=8", self.bits)));
        }
        if !self.symmetric {
            return Err(Error::config("only symmetric quantization is supported"));
        }
        if self.group_size == 0 {
            return Err(Error::config("group_size must be positive"));
        }
        if self.clip_grid.is_empty() {
            return Err(Error::config("clip grid is empty"));
        }
        for &s in &self.clip_grid {
            if !s.is_finite() || !(s > 0.0) || s > 1.0 {
                return Err(Error::config(format!("clip grid entry {s} outside (0, 1]")));
            }
        }
        if self.group_size >= cols {
            Ok(cols)
        } else if cols % self.group_size == 0 {
            Ok(self.group_size)
        } else {
            Err(Error::config(format!(
                "group_size {} divides neither {cols} columns nor spans the row",
                self.group_size
            )))
        }
    }
}

/// Result of any compression kernel.
#[derive(Debug, Clone)]
pub struct CompressedLayer {
    pub w_hat: Matrix,
    /// Same shape as the weights, 1.0 kept / 0.0 pruned.
    pub mask: Matrix,
    /// Row-major per-(row, group) scales; empty when nothing was quantized.
    pub scales: Vec<f64>,
    pub n_groups: usize,
    /// Sum of the incremental elimination costs `0.5 * resid^2 / d^2`; equals
    /// `0.5 * sum_rows delta^T H_damped delta` and, at zero dampening, the
    /// squared activation reconstruction error. Zero for mask-only kernels.
    pub layer_error: f64,
    pub sparsity: Option<SparsitySpec>,
    pub quant: Option<QuantSpec>,
}

impl CompressedLayer {
    pub fn scale(&self, row: usize, group: usize) -> f64 {
        self.scales[row * self.n_groups + group]
    }
}

/// Prunes one column `m` of a single weight row using the full inverse
/// Hessian: returns the compensated row and the cost
/// `0.5 * w_m^2 / hinv[m, m]`.
pub fn obs_prune_single(w: &[f64], hinv: &Matrix, m: usize) -> Result<(Vec<f64>, f64)> {
    let n = w.len();
    if hinv.rows() != n || hinv.cols() != n {
        return Err(Error::dim("inverse Hessian does not match row length"));
    }
    if m >= n {
        return Err(Error::value(format!("column {m} outside row of {n}")));
    }
    let dmm = hinv.get(m, m);
    if !(dmm > 0.0) || !dmm.is_finite() {
        return Err(Error::numerical("inverse Hessian diagonal not positive", m, dmm));
    }
    let wm = w[m];
    let mut out = w.to_vec();
    for (c, v) in out.iter_mut().enumerate() {
        *v -= wm / dmm * hinv.get(c, m);
    }
    out[m] = 0.0;
    Ok((out, 0.5 * wm * wm / dmm))
}

/// Selection windows covering `0..n`, at most [`SELECTION_WINDOW`] wide and
/// aligned to the n:m group size when one is in play.
fn selection_windows(n: usize, align: usize) -> Vec<(usize, usize)> {
    let width = if align > 1 {
        (SELECTION_WINDOW - SELECTION_WINDOW % align).max(align)
    } else {
        SELECTION_WINDOW
    };
    let mut out = Vec::new();
    let mut s = 0;
    while s < n {
        let e = (s + width).min(n);
        out.push((s, e));
        s = e;
    }
    out
}

fn unstructured_quota(fraction: f64, width: usize) -> usize {
    let t = fraction * width as f64;
    let q = libm::ceil(t - 1e-9);
    (q.max(0.0) as usize).min(width)
}

/// Columns of `s..e` to prune for one row, ascending. Scores are the exact
/// single-prune costs on the current support, `w^2 / r0[c, c]` with `r0` the
/// trailing inverse Hessian at `s`; dead columns sort first, then lower
/// score, then lower index.
fn choose_pruned(
    row: &[f64],
    factor: &InvHessianFactor,
    r0: &Matrix,
    s: usize,
    e: usize,
    spec: &SparsitySpec,
) -> Vec<usize> {
    let mut cand: Vec<(usize, f64, bool)> = (s..e)
        .map(|c| {
            let v = row[c];
            (c, v * v / r0.get(c - s, c - s), factor.is_dead(c))
        })
        .collect();
    let mut pruned = match *spec {
        SparsitySpec::Unstructured { fraction } => {
            let quota = unstructured_quota(fraction, e - s);
            sort_prune_order(&mut cand);
            cand.iter().take(quota).map(|&(c, _, _)| c).collect::<Vec<_>>()
        }
        SparsitySpec::NOfM { n, m } => {
            let mut out = Vec::with_capacity((e - s) / m * (m - n));
            for g in (s..e).step_by(m) {
                let mut group: Vec<(usize, f64, bool)> =
                    cand[g - s..g - s + m].to_vec();
                sort_prune_order(&mut group);
                out.extend(group.iter().take(m - n).map(|&(c, _, _)| c));
            }
            out
        }
    };
    pruned.sort_unstable();
    pruned
}

fn sort_prune_order(cand: &mut [(usize, f64, bool)]) {
    cand.sort_by(|a, b| b.2.cmp(&a.2).then(a.1.total_cmp(&b.1)).then(a.0.cmp(&b.0)));
}

/// Eliminates `pruned` (absolute, ascending, all within one window starting
/// at `s`) from one row with exact compensation over every still-free column
/// of `s..`, processing in chunks of `block_size`. `r0` is the inverse
/// Hessian of the trailing support at `s`.
fn eliminate_row(
    row: &mut [f64],
    loss: &mut f64,
    r0: &Matrix,
    s: usize,
    pruned: &[usize],
    block_size: usize,
) -> Result<()> {
    if pruned.is_empty() {
        return Ok(());
    }
    let mut alive: Vec<usize> = (0..r0.rows()).collect();
    let mut rr = r0.clone();
    let chunks: Vec<&[usize]> = pruned.chunks(block_size).collect();
    let last = chunks.len() - 1;
    for (ci, chunk) in chunks.into_iter().enumerate() {
        let pos: Vec<usize> = chunk
            .iter()
            .map(|&c| alive.binary_search(&(c - s)).expect("pruned column already eliminated"))
            .collect();
        let q = pos.len();
        let mut m = Matrix::zeros(q, q);
        for (i, &a) in pos.iter().enumerate() {
            for (j, &b) in pos.iter().enumerate() {
                m.set(i, j, rr.get(a, b));
            }
        }
        let rhs: Vec<f64> = chunk.iter().map(|&c| row[c]).collect();
        let l = cholesky_lower(&m)?;
        let y = solve_with_cholesky(&l, &rhs);
        for (a, b) in rhs.iter().zip(&y) {
            *loss += 0.5 * a * b;
        }
        for (ai, &a) in alive.iter().enumerate() {
            let mut delta = 0.0;
            for (b, &p) in pos.iter().enumerate() {
                delta += rr.get(ai, p) * y[b];
            }
            row[s + a] -= delta;
        }
        for &c in chunk {
            row[c] = 0.0;
        }
        if ci == last {
            break;
        }
        // Downdate the inverse to the support without this chunk.
        let keep: Vec<usize> = (0..alive.len()).filter(|i| !pos.contains(i)).collect();
        let mut z = Matrix::zeros(q, keep.len());
        for (kj, &aj) in keep.iter().enumerate() {
            let col: Vec<f64> = pos.iter().map(|&p| rr.get(p, aj)).collect();
            let sol = solve_with_cholesky(&l, &col);
            for (i, v) in sol.into_iter().enumerate() {
                z.set(i, kj, v);
            }
        }
        let mut next = Matrix::zeros(keep.len(), keep.len());
        for (ki, &ai) in keep.iter().enumerate() {
            for (kj, &aj) in keep.iter().enumerate() {
                let mut v = rr.get(ai, aj);
                for (b, &p) in pos.iter().enumerate() {
                    v -= rr.get(ai, p) * z.get(b, kj);
                }
                next.set(ki, kj, v);
            }
        }
        rr = next;
        alive = keep.into_iter().map(|i| alive[i]).collect();
    }
    Ok(())
}

fn check_layer_inputs(w: &Matrix, factor: &InvHessianFactor, block_size: usize) -> Result<()> {
    if factor.dim() != w.cols() {
        return Err(Error::dim(format!(
            "factor dimension {} does not match {} weight columns",
            factor.dim(),
            w.cols()
        )));
    }
    if block_size == 0 {
        return Err(Error::config("block_size must be positive"));
    }
    if !w.is_all_finite() {
        return Err(Error::value("weights contain non-finite entries"));
    }
    Ok(())
}

fn finite_check(out: &Matrix) -> Result<()> {
    for r in 0..out.rows() {
        for (c, v) in out.row(r).iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numerical("non-finite compressed weight", c, *v));
            }
        }
    }
    Ok(())
}

/// Error-compensating pruner. Masks are chosen per (row, selection window)
/// from the weights at window start; pruned columns are then eliminated with
/// exact updates over all still-free columns, kept columns freeze when their
/// window closes.
pub fn sparsegpt_prune(
    w: &Matrix,
    factor: &InvHessianFactor,
    spec: &SparsitySpec,
    block_size: usize,
) -> Result<CompressedLayer> {
    check_layer_inputs(w, factor, block_size)?;
    spec.validate(w.cols())?;
    let n = w.cols();
    let mut w_hat = w.clone();
    for &c in factor.dead() {
        for r in 0..w_hat.rows() {
            w_hat.set(r, c, 0.0);
        }
    }
    let mut mask = Matrix::zeros(w.rows(), n);
    for r in 0..w.rows() {
        mask.row_mut(r).fill(1.0);
    }
    let mut layer_error = 0.0;
    for (s, e) in selection_windows(n, spec.group_align()) {
        let r0 = factor.trailing_inverse(s);
        for r in 0..w.rows() {
            let pruned = choose_pruned(w_hat.row(r), factor, &r0, s, e, spec);
            for &c in &pruned {
                mask.set(r, c, 0.0);
            }
            let mut loss = 0.0;
            eliminate_row(w_hat.row_mut(r), &mut loss, &r0, s, &pruned, block_size)?;
            layer_error += loss;
        }
    }
    finite_check(&w_hat)?;
    Ok(CompressedLayer {
        w_hat,
        mask,
        scales: Vec::new(),
        n_groups: 0,
        layer_error,
        sparsity: Some(spec.clone()),
        quant: None,
    })
}

/// Masks from precomputed saliency scores, no compensation: the baselines.
/// Same per-(row, window) quota rule as the compensating pruner; ties prune
/// the lower column index.
pub fn mask_only_compress(
    w: &Matrix,
    saliency: &SaliencyMatrix,
    spec: &SparsitySpec,
) -> Result<CompressedLayer> {
    if saliency.scores.rows() != w.rows() || saliency.scores.cols() != w.cols() {
        return Err(Error::dim("saliency shape does not match weights"));
    }
    spec.validate(w.cols())?;
    let n = w.cols();
    let mut w_hat = w.clone();
    let mut mask = Matrix::zeros(w.rows(), n);
    for r in 0..w.rows() {
        mask.row_mut(r).fill(1.0);
    }
    for (s, e) in selection_windows(n, spec.group_align()) {
        for r in 0..w.rows() {
            let mut cand: Vec<(usize, f64, bool)> =
                (s..e).map(|c| (c, saliency.scores.get(r, c), false)).collect();
            let pruned: Vec<usize> = match *spec {
                SparsitySpec::Unstructured { fraction } => {
                    let quota = unstructured_quota(fraction, e - s);
                    sort_prune_order(&mut cand);
                    cand.iter().take(quota).map(|&(c, _, _)| c).collect()
                }
                SparsitySpec::NOfM { n: keep, m } => {
                    let mut out = Vec::new();
                    for g in (s..e).step_by(m) {
                        let mut group = cand[g - s..g - s + m].to_vec();
                        sort_prune_order(&mut group);
                        out.extend(group.iter().take(m - keep).map(|&(c, _, _)| c));
                    }
                    out
                }
            };
            for c in pruned {
                mask.set(r, c, 0.0);
                w_hat.set(r, c, 0.0);
            }
        }
    }
    Ok(CompressedLayer {
        w_hat,
        mask,
        scales: Vec::new(),
        n_groups: 0,
        layer_error: 0.0,
        sparsity: Some(spec.clone()),
        quant: None,
    })
}

/// Best symmetric scale for one group of values: max-abs over qmax, then an
/// optional shrink-grid search minimizing the squared round-trip error.
/// Ties keep the larger shrink; an all-zero group returns scale 0.
pub fn clip_search(group: &[f64], spec: &QuantSpec) -> f64 {
    let qmax = spec.qmax();
    let mut max_abs = 0.0;
    for &v in group {
        if v.abs() > max_abs {
            max_abs = v.abs();
        }
    }
    if max_abs == 0.0 {
        return 0.0;
    }
    let base = max_abs / qmax;
    if !spec.clip_search {
        return base;
    }
    let mut shrinks = spec.clip_grid.clone();
    shrinks.sort_by(|a, b| b.total_cmp(a));
    let mut best_scale = base;
    let mut best_err = f64::INFINITY;
    for shrink in shrinks {
        let scale = shrink * base;
        let mut err = 0.0;
        for &v in group {
            let d = v - quantize_value(v, scale, qmax);
            err += d * d;
        }
        if err < best_err {
            best_err = err;
            best_scale = scale;
        }
    }
    best_scale
}

/// Dequantized value of `v` on the symmetric grid of `scale`.
fn quantize_value(v: f64, scale: f64, qmax: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let q = round_half_even(v / scale).clamp(-qmax, qmax);
    q * scale
}

/// Block cut points 0..n: multiples of `block_size` plus every extra
/// boundary, so scale groups and selection windows always start a block and
/// see fully propagated weights.
fn block_cuts(n: usize, block_size: usize, extras: &[usize]) -> Vec<usize> {
    let mut cuts: Vec<usize> = (0..=n).step_by(block_size).collect();
    if *cuts.last().unwrap() != n {
        cuts.push(n);
    }
    for &step in extras {
        if step == 0 {
            continue;
        }
        let mut b = 0;
        while b < n {
            cuts.push(b);
            b += step;
        }
    }
    cuts.sort_unstable();
    cuts.dedup();
    cuts
}

/// Column-walk engine shared by the quantizer and the joint pass. When
/// `sparsity` is given, masks are selected at window starts and pruned
/// columns turn into zero targets; everything else quantizes against its
/// group scale. Residuals propagate rightward through the factor rows.
fn quant_walk(
    w: &Matrix,
    factor: &InvHessianFactor,
    quant: &QuantSpec,
    sparsity: Option<&SparsitySpec>,
    block_size: usize,
) -> Result<CompressedLayer> {
    check_layer_inputs(w, factor, block_size)?;
    let n = w.cols();
    let rows = w.rows();
    let group = quant.validate(n)?;
    if let Some(spec) = sparsity {
        spec.validate(n)?;
    }
    let qmax = quant.qmax();
    let n_groups = n / group;
    let mut scales = vec![0.0; rows * n_groups];
    let mut w_hat = w.clone();
    for &c in factor.dead() {
        for r in 0..rows {
            w_hat.set(r, c, 0.0);
        }
    }
    let mut mask = Matrix::zeros(rows, n);
    for r in 0..rows {
        mask.row_mut(r).fill(1.0);
    }
    let windows = sparsity.map(|spec| selection_windows(n, spec.group_align()));
    let mut extras = vec![group];
    if let Some(ws) = &windows {
        extras.extend(ws.iter().map(|&(s, e)| e - s));
    }
    let cuts = block_cuts(n, block_size, &extras);
    let mut layer_error = 0.0;
    let mut err_buf = Matrix::zeros(rows, block_size.min(n));

    for win in cuts.windows(2) {
        let (b1, b2) = (win[0], win[1]);
        for c in b1..b2 {
            if let (Some(spec), Some(ws)) = (sparsity, &windows) {
                if let Some(&(s, e)) = ws.iter().find(|&&(s, _)| s == c) {
                    let r0 = factor.trailing_inverse(s);
                    for r in 0..rows {
                        for pc in choose_pruned(w_hat.row(r), factor, &r0, s, e, spec) {
                            mask.set(r, pc, 0.0);
                        }
                    }
                }
            }
            if c % group == 0 {
                let g = c / group;
                for r in 0..rows {
                    let row = w_hat.row(r);
                    if sparsity.is_some() {
                        // Pruned positions carry no quantization error, so
                        // they stay out of the scale statistics.
                        let kept: Vec<f64> = (c..c + group)
                            .filter(|&j| mask.get(r, j) == 1.0)
                            .map(|j| row[j])
                            .collect();
                        scales[r * n_groups + g] = clip_search(&kept, quant);
                    } else {
                        scales[r * n_groups + g] = clip_search(&row[c..c + group], quant);
                    }
                }
            }
            let d = factor.diag()[c];
            let trow = factor.row(c);
            for r in 0..rows {
                let scale = scales[r * n_groups + c / group];
                let v = w_hat.get(r, c);
                let target =
                    if mask.get(r, c) == 0.0 { 0.0 } else { quantize_value(v, scale, qmax) };
                let resid = v - target;
                let e = resid / d;
                layer_error += 0.5 * e * e;
                let row = w_hat.row_mut(r);
                for j in c + 1..b2 {
                    row[j] -= e * trow[j];
                }
                row[c] = target;
                err_buf.set(r, c - b1, e);
            }
        }
        for r in 0..rows {
            for j in b2..n {
                let mut acc = 0.0;
                for c in b1..b2 {
                    acc += err_buf.get(r, c - b1) * factor.row(c)[j];
                }
                let v = w_hat.get(r, j);
                w_hat.set(r, j, v - acc);
            }
        }
    }
    finite_check(&w_hat)?;
    Ok(CompressedLayer {
        w_hat,
        mask,
        scales,
        n_groups,
        layer_error,
        sparsity: sparsity.cloned(),
        quant: Some(quant.clone()),
    })
}

/// Grouped symmetric quantizer with rightward error propagation.
pub fn gptq_quantize(
    w: &Matrix,
    factor: &InvHessianFactor,
    spec: &QuantSpec,
    block_size: usize,
) -> Result<CompressedLayer> {
    quant_walk(w, factor, spec, None, block_size)
}

/// One pass doing both: per column the pruning decision comes first, pruned
/// entries propagate their full value as error, survivors quantize against
/// scales computed from kept positions only. One factor serves throughout.
pub fn joint_compress(
    w: &Matrix,
    factor: &InvHessianFactor,
    sparsity: &SparsitySpec,
    quant: &QuantSpec,
    block_size: usize,
) -> Result<CompressedLayer> {
    quant_walk(w, factor, quant, Some(sparsity), block_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hessian::{dampen, dead_columns, invert_cholesky};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn factor_of(h: &Matrix) -> InvHessianFactor {
        let dead = dead_columns(h);
        invert_cholesky(h, &dead, 0.0).unwrap()
    }

    fn running_example() -> (Matrix, InvHessianFactor) {
        let w = Matrix::from_rows(&[vec![3.0, 1.0]]).unwrap();
        let h = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 2.0]]).unwrap();
        (w, factor_of(&h))
    }

    fn random_correlated_layer(
        rng: &mut ChaCha8Rng,
        rows: usize,
        cols: usize,
        samples: usize,
    ) -> (Matrix, Matrix, Matrix) {
        // Activations z * A with a random square mixer, giving a dense
        // well-conditioned Hessian; returns (W, X, H = 2 X^T X).
        let a = Matrix::from_vec(
            cols,
            cols,
            (0..cols * cols).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.4).collect(),
        )
        .unwrap();
        let z = Matrix::from_vec(
            samples,
            cols,
            (0..samples * cols).map(|_| rng.sample(StandardNormal)).collect(),
        )
        .unwrap();
        let mut x = z.matmul(&a).unwrap();
        for r in 0..samples {
            for c in 0..cols {
                let v = x.get(r, c) + 0.2 * z.get(r, c);
                x.set(r, c, v);
            }
        }
        let w = Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect(),
        )
        .unwrap();
        let mut h = x.gram();
        h.scale(2.0);
        (w, x, h)
    }

    fn recon_error(w: &Matrix, w_hat: &Matrix, x: &Matrix) -> f64 {
        let delta = w.sub(w_hat).unwrap();
        x.matmul_transpose(&delta).unwrap().frob_sq()
    }

    #[test]
    fn obs_single_prune_matches_hand_values() {
        let (w, f) = running_example();
        let hinv = f.full_inverse();
        let (w2, eps2) = obs_prune_single(w.row(0), &hinv, 1).unwrap();
        assert!((w2[0] - 3.5).abs() < 1e-12);
        assert_eq!(w2[1], 0.0);
        assert!((eps2 - 0.5).abs() < 1e-12);
        let (w1, eps1) = obs_prune_single(w.row(0), &hinv, 0).unwrap();
        assert_eq!(w1[0], 0.0);
        assert!((w1[1] - 4.0).abs() < 1e-12);
        assert!((eps1 - 9.0).abs() < 1e-12);
    }

    #[test]
    fn pruner_refits_kept_column_in_running_example() {
        let (w, f) = running_example();
        for block in [1, 128] {
            let out =
                sparsegpt_prune(&w, &f, &SparsitySpec::Unstructured { fraction: 0.5 }, block)
                    .unwrap();
            assert_eq!(out.mask.row(0), &[1.0, 0.0]);
            assert!((out.w_hat.get(0, 0) - 3.5).abs() < 1e-10);
            assert_eq!(out.w_hat.get(0, 1), 0.0);
            assert!((out.layer_error - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn two_of_four_masks_follow_saliency_groups() {
        // Identity Hessian, so saliency is w^2: values chosen to score
        // 4,3,2,1 | 8,5,7,6.
        let scores = [4.0f64, 3.0, 2.0, 1.0, 8.0, 5.0, 7.0, 6.0];
        let w = Matrix::from_vec(1, 8, scores.iter().map(|s| libm::sqrt(*s)).collect()).unwrap();
        let f = factor_of(&Matrix::identity(8));
        let out = sparsegpt_prune(&w, &f, &SparsitySpec::NOfM { n: 2, m: 4 }, 128).unwrap();
        assert_eq!(out.mask.row(0), &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        // Identity Hessian means no compensation: kept values survive.
        for c in 0..8 {
            let expect = if out.mask.get(0, c) == 1.0 { w.get(0, c) } else { 0.0 };
            assert_eq!(out.w_hat.get(0, c), expect);
        }
    }

    #[test]
    fn single_prune_equals_full_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (w, x, h) = random_correlated_layer(&mut rng, 1, 6, 24);
            let f = factor_of(&h);
            let out = sparsegpt_prune(
                &w,
                &f,
                &SparsitySpec::Unstructured { fraction: 1.0 / 6.0 },
                128,
            )
            .unwrap();
            let pruned: Vec<usize> =
                (0..6).filter(|&c| out.mask.get(0, c) == 0.0).collect();
            assert_eq!(pruned.len(), 1);
            let (refit, eps) = obs_prune_single(w.row(0), &f.full_inverse(), pruned[0]).unwrap();
            for c in 0..6 {
                assert!((out.w_hat.get(0, c) - refit[c]).abs() < 1e-8);
            }
            assert!((out.layer_error - eps).abs() < 1e-8);
            // The elimination tally matches the true activation error.
            let true_err = recon_error(&w, &out.w_hat, &x);
            assert!((out.layer_error - true_err).abs() <= 1e-8 * true_err.max(1.0));
        }
    }

    #[test]
    fn block_size_changes_nothing_but_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, _, h) = random_correlated_layer(&mut rng, 16, 16, 48);
        let f = factor_of(&h);
        let spec = SparsitySpec::Unstructured { fraction: 0.5 };
        let a = sparsegpt_prune(&w, &f, &spec, 1).unwrap();
        let b = sparsegpt_prune(&w, &f, &spec, 128).unwrap();
        assert_eq!(a.mask.max_abs_diff(&b.mask), 0.0);
        assert!(a.w_hat.max_abs_diff(&b.w_hat) <= 1e-4);
    }

    #[test]
    fn dead_columns_are_pruned_first() {
        // Column 1 never fires.
        let x = Matrix::from_rows(&[vec![1.0, 0.0, 0.5, 2.0], vec![-1.0, 0.0, 1.0, 0.25]])
            .unwrap();
        let mut h = x.gram();
        h.scale(2.0);
        let dead = dead_columns(&h);
        let (hd, lambda) = dampen(&h, 0.01).unwrap();
        let f = invert_cholesky(&hd, &dead, lambda).unwrap();
        let w = Matrix::from_rows(&[vec![5.0, 9.0, 4.0, 3.0]]).unwrap();
        let out =
            sparsegpt_prune(&w, &f, &SparsitySpec::Unstructured { fraction: 0.25 }, 128).unwrap();
        assert_eq!(out.mask.get(0, 1), 0.0);
        assert_eq!(out.w_hat.get(0, 1), 0.0);
        assert!(out.w_hat.is_all_finite());
    }

    #[test]
    fn clip_search_disabled_returns_max_abs_scale() {
        let spec = QuantSpec { clip_search: false, group_size: 4, ..QuantSpec::default() };
        let s = clip_search(&[0.7, -0.35, 0.1], &spec);
        assert!((s - 0.1).abs() < 1e-15);
        assert_eq!(clip_search(&[0.0, 0.0], &spec), 0.0);
    }

    #[test]
    fn clip_search_shrinks_scale_on_outlier_group() {
        // 62 entries sit exactly on the grid of scale 0.95 but 0.15 off the
        // grid of scale 1.0; the lone outlier only loses 0.35 by saturating.
        let mut group = vec![2.85; 62];
        group.push(7.0);
        group.push(0.0);
        let spec = QuantSpec { group_size: 64, ..QuantSpec::default() };
        let qmax = spec.qmax();
        let base = 7.0 / qmax;
        let chosen = clip_search(&group, &spec);
        assert!((chosen - 0.95).abs() < 1e-12, "chosen scale {chosen}");
        let err =
            |s: f64| group.iter().map(|&v| (v - quantize_value(v, s, qmax)).powi(2)).sum::<f64>();
        assert!(err(chosen) < err(base));
    }

    #[test]
    fn quantizer_reproduces_hand_rounding() {
        let w = Matrix::from_rows(&[vec![0.7, -0.35, 0.1, 0.0]]).unwrap();
        let f = factor_of(&Matrix::identity(4));
        let spec = QuantSpec { group_size: 4, clip_search: false, ..QuantSpec::default() };
        let out = gptq_quantize(&w, &f, &spec, 128).unwrap();
        assert_eq!(out.n_groups, 1);
        let scale = out.scale(0, 0);
        assert!((scale - 0.1).abs() < 1e-15);
        let codes: Vec<f64> = (0..4).map(|c| out.w_hat.get(0, c) / scale).collect();
        assert!((codes[0] - 7.0).abs() < 1e-12);
        assert!((codes[1] - -4.0).abs() < 1e-12);
        assert!((codes[2] - 1.0).abs() < 1e-12);
        assert_eq!(out.w_hat.get(0, 3), 0.0);
    }

    #[test]
    fn on_grid_weights_pass_through_unchanged() {
        // Binary-exact grid: scale 0.125, codes 7, -4, 1, 0.
        let w = Matrix::from_rows(&[vec![0.875, -0.5, 0.125, 0.0]]).unwrap();
        let f = factor_of(&Matrix::identity(4));
        let spec = QuantSpec { group_size: 4, clip_search: false, ..QuantSpec::default() };
        let out = gptq_quantize(&w, &f, &spec, 128).unwrap();
        assert_eq!(out.w_hat.max_abs_diff(&w), 0.0);
        assert_eq!(out.layer_error, 0.0);
    }

    #[test]
    fn quant_error_bounded_by_half_scale_without_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = Matrix::from_vec(4, 16, (0..64).map(|_| rng.sample(StandardNormal)).collect())
            .unwrap();
        let f = factor_of(&Matrix::identity(16));
        let spec = QuantSpec { group_size: 8, clip_search: false, ..QuantSpec::default() };
        let out = gptq_quantize(&w, &f, &spec, 128).unwrap();
        for r in 0..4 {
            for c in 0..16 {
                let s = out.scale(r, c / 8);
                assert!((out.w_hat.get(r, c) - w.get(r, c)).abs() <= s / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn propagation_beats_plain_rounding_on_correlated_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = QuantSpec { group_size: 2, clip_search: false, ..QuantSpec::default() };
        let qmax = spec.qmax();
        let mut wins = 0;
        for _ in 0..100 {
            let (w, x, h) = random_correlated_layer(&mut rng, 1, 2, 16);
            let f = factor_of(&h);
            let out = gptq_quantize(&w, &f, &spec, 128).unwrap();
            let mut rtn = w.clone();
            let scale = clip_search(w.row(0), &spec);
            for c in 0..2 {
                rtn.set(0, c, quantize_value(w.get(0, c), scale, qmax));
            }
            if recon_error(&w, &out.w_hat, &x) <= recon_error(&w, &rtn, &x) + 1e-12 {
                wins += 1;
            }
        }
        assert!(wins >= 90, "propagation won only {wins}/100");
    }

    #[test]
    fn joint_pass_is_two_of_four_and_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (w, _, h) = random_correlated_layer(&mut rng, 4, 16, 48);
        let f = factor_of(&h);
        let quant = QuantSpec { group_size: 8, ..QuantSpec::default() };
        let out =
            joint_compress(&w, &f, &SparsitySpec::NOfM { n: 2, m: 4 }, &quant, 128).unwrap();
        for r in 0..4 {
            for g in (0..16).step_by(4) {
                let ones: f64 = (g..g + 4).map(|c| out.mask.get(r, c)).sum();
                assert_eq!(ones, 2.0);
            }
            for c in 0..16 {
                let v = out.w_hat.get(r, c);
                if out.mask.get(r, c) == 0.0 {
                    assert_eq!(v, 0.0);
                } else {
                    let s = out.scale(r, c / 8);
                    if s == 0.0 {
                        assert_eq!(v, 0.0);
                    } else {
                        let code = v / s;
                        assert!((code - round_half_even(code)).abs() < 1e-9);
                        assert!(code.abs() <= quant.qmax() + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn joint_error_dominates_single_objective_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let quant = QuantSpec { group_size: 8, ..QuantSpec::default() };
        let spec = SparsitySpec::NOfM { n: 2, m: 4 };
        let mut joint_vs_prune = 0;
        let mut joint_vs_quant = 0;
        let trials = 50;
        for _ in 0..trials {
            let (w, x, h) = random_correlated_layer(&mut rng, 4, 8, 32);
            let f = factor_of(&h);
            let joint = joint_compress(&w, &f, &spec, &quant, 128).unwrap();
            let prune = sparsegpt_prune(&w, &f, &spec, 128).unwrap();
            let q = gptq_quantize(&w, &f, &quant, 128).unwrap();
            let je = recon_error(&w, &joint.w_hat, &x);
            if je >= recon_error(&w, &prune.w_hat, &x) - 1e-12 {
                joint_vs_prune += 1;
            }
            if je >= recon_error(&w, &q.w_hat, &x) - 1e-12 {
                joint_vs_quant += 1;
            }
        }
        assert!(joint_vs_prune * 2 > trials, "joint < prune-only on most trials");
        assert!(joint_vs_quant * 2 > trials, "joint < quant-only on most trials");
    }

    #[test]
    fn spec_validation_errors() {
        let w = Matrix::zeros(2, 8);
        let f = factor_of(&Matrix::identity(8));
        assert!(matches!(
            sparsegpt_prune(&w, &f, &SparsitySpec::Unstructured { fraction: 1.5 }, 128),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            sparsegpt_prune(&w, &f, &SparsitySpec::NOfM { n: 2, m: 3 }, 128),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            sparsegpt_prune(&w, &f, &SparsitySpec::Unstructured { fraction: 0.5 }, 0),
            Err(Error::Config(_))
        ));
        let bad_bits = QuantSpec { bits: 1, ..QuantSpec::default() };
        assert!(matches!(gptq_quantize(&w, &f, &bad_bits, 128), Err(Error::Config(_))));
        let asym = QuantSpec { symmetric: false, ..QuantSpec::default() };
        assert!(matches!(gptq_quantize(&w, &f, &asym, 128), Err(Error::Config(_))));
        let bad_group = QuantSpec { group_size: 3, ..QuantSpec::default() };
        assert!(matches!(gptq_quantize(&w, &f, &bad_group, 128), Err(Error::Config(_))));
        let f2 = factor_of(&Matrix::identity(4));
        assert!(matches!(
            sparsegpt_prune(&w, &f2, &SparsitySpec::Unstructured { fraction: 0.5 }, 128),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn scale_invariance_of_masks_under_hessian_scaling() {
        // 2 X^T X versus X^T X with proportional dampening: identical masks
        // and outputs.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (w, _, h2) = random_correlated_layer(&mut rng, 4, 8, 32);
        let mut h1 = h2.clone();
        h1.scale(0.5);
        let spec = SparsitySpec::Unstructured { fraction: 0.5 };
        let make = |h: &Matrix| {
            let (hd, lambda) = dampen(h, 0.01).unwrap();
            invert_cholesky(&hd, &[], lambda).unwrap()
        };
        let a = sparsegpt_prune(&w, &make(&h2), &spec, 128).unwrap();
        let b = sparsegpt_prune(&w, &make(&h1), &spec, 128).unwrap();
        assert_eq!(a.mask.max_abs_diff(&b.mask), 0.0);
        assert!(a.w_hat.max_abs_diff(&b.w_hat) < 1e-10);
    }
}
