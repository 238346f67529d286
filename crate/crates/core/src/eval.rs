//! Quality metrics and a synthetic two-domain benchmark for the
//! calibration-weighting ablation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::calib::{ExamplePool, MixedSet};
use crate::compress::{QuantSpec, SparsitySpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pipeline::{compress_stack, Layer, LayerStack, Method, RunConfig};

/// Squared activation reconstruction error `||X (W - W_hat)^T||_F^2`.
pub fn reconstruction_error(w: &Matrix, w_hat: &Matrix, x: &Matrix) -> Result<f64> {
    let delta = w.sub(w_hat)?;
    Ok(x.matmul_transpose(&delta)?.frob_sq())
}

/// Reconstruction error averaged over a weighted calibration set:
/// `sum_i (alpha_i / A) ||X_i (W - W_hat)^T||_F^2`.
pub fn weighted_activation_error(w: &Matrix, w_hat: &Matrix, set: &MixedSet) -> Result<f64> {
    let a = set.weight_sum();
    if a <= 0.0 {
        return Err(Error::value("mixed set has zero total weight"));
    }
    let delta = w.sub(w_hat)?;
    let mut err = 0.0;
    for ex in set.examples() {
        if ex.weight == 0.0 {
            continue;
        }
        err += ex.weight / a * ex.x.matmul_transpose(&delta)?.frob_sq();
    }
    Ok(err)
}

/// Mean squared difference between two equal-shape matrices.
pub fn mse(a: &Matrix, b: &Matrix) -> Result<f64> {
    let d = a.sub(b)?;
    Ok(d.frob_sq() / (d.rows() * d.cols()) as f64)
}

/// Zero accounting for a 0/1 mask, grouped in blocks of `m` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityStats {
    pub zero_fraction: f64,
    /// `kept_histogram[k]` counts groups keeping exactly `k` entries.
    pub kept_histogram: Vec<usize>,
}

impl SparsityStats {
    /// True when every group keeps exactly `n` entries.
    pub fn is_exact_n_of_m(&self, n: usize) -> bool {
        self.kept_histogram
            .iter()
            .enumerate()
            .all(|(k, &count)| k == n || count == 0)
    }
}

pub fn sparsity_stats(mask: &Matrix, m: usize) -> Result<SparsityStats> {
    if m == 0 || mask.cols() % m != 0 {
        return Err(Error::config(format!("group size {m} does not divide {} columns", mask.cols())));
    }
    let mut zeros = 0usize;
    let mut hist = vec![0usize; m + 1];
    for r in 0..mask.rows() {
        let row = mask.row(r);
        for g in (0..mask.cols()).step_by(m) {
            let mut kept = 0usize;
            for &v in &row[g..g + m] {
                if v == 0.0 {
                    zeros += 1;
                } else if v == 1.0 {
                    kept += 1;
                } else {
                    return Err(Error::value(format!("mask entry {v} is not 0 or 1")));
                }
            }
            hist[kept] += 1;
        }
    }
    Ok(SparsityStats {
        zero_fraction: zeros as f64 / (mask.rows() * mask.cols()) as f64,
        kept_histogram: hist,
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; 0 when either input has no rank variance.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "length mismatch");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / libm::sqrt(sxx * syy)
}

/// Shape of the synthetic two-domain experiment: a random dense teacher, a
/// generic isotropic input distribution, and a domain distribution with
/// extra variance along a few fixed directions.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchConfig {
    pub dim: usize,
    pub layers: usize,
    pub spike_dims: usize,
    /// Variance multiplier along each spike direction.
    pub spike_strength: f64,
    /// Calibration examples per pool.
    pub n_examples: usize,
    pub example_rows: usize,
    pub heldout_rows: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dim: 64,
            layers: 3,
            spike_dims: 4,
            spike_strength: 10.0,
            n_examples: 32,
            example_rows: 16,
            heldout_rows: 256,
            seed: 0,
        }
    }
}

/// Generated two-domain experiment data.
#[derive(Debug, Clone)]
pub struct TwoDomainBench {
    pub config: BenchConfig,
    pub teacher: LayerStack,
    pub domain_pool: ExamplePool,
    pub generic_pool: ExamplePool,
    pub heldout_domain: Matrix,
    pub heldout_generic: Matrix,
}

fn gauss(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal) * sd).collect(),
    )
    .unwrap()
}

fn orthonormal_directions(dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for prev in &dirs {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (vi, pi) in v.iter_mut().zip(prev) {
                *vi -= dot * pi;
            }
        }
        let norm = libm::sqrt(v.iter().map(|a| a * a).sum());
        if norm < 1e-8 {
            return Err(Error::numerical("degenerate spike direction", dirs.len(), norm));
        }
        for vi in &mut v {
            *vi /= norm;
        }
        dirs.push(v);
    }
    Ok(dirs)
}

fn sample_spiked(
    rng: &mut ChaCha8Rng,
    rows: usize,
    dirs: &[Vec<f64>],
    strength: f64,
    dim: usize,
) -> Matrix {
    let gain = libm::sqrt(strength) - 1.0;
    let mut x = gauss(rng, rows, dim, 1.0);
    for r in 0..rows {
        let row = x.row_mut(r);
        for v in dirs {
            let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            for (xi, vi) in row.iter_mut().zip(v) {
                *xi += gain * dot * vi;
            }
        }
    }
    x
}

impl TwoDomainBench {
    pub fn generate(config: BenchConfig) -> Result<Self> {
        if config.dim == 0 || config.layers == 0 {
            return Err(Error::config("benchmark needs at least one layer and one dimension"));
        }
        if config.spike_dims > config.dim {
            return Err(Error::config("more spike directions than dimensions"));
        }
        if !(config.spike_strength >= 1.0) {
            return Err(Error::config("spike strength below 1 would invert the domains"));
        }
        if config.n_examples == 0 || config.example_rows == 0 || config.heldout_rows == 0 {
            return Err(Error::config("benchmark sample counts must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dim;
        let sd = libm::sqrt(2.0 / d as f64);
        let layers = (0..config.layers)
            .map(|i| Layer::new(format!("layer{i}"), gauss(&mut rng, d, d, sd)))
            .collect();
        let teacher = LayerStack::new(layers)?;
        let dirs = orthonormal_directions(d, config.spike_dims, &mut rng)?;
        let domain_pool = ExamplePool::new(
            (0..config.n_examples)
                .map(|_| {
                    sample_spiked(&mut rng, config.example_rows, &dirs, config.spike_strength, d)
                })
                .collect(),
        )?;
        let generic_pool = ExamplePool::new(
            (0..config.n_examples)
                .map(|_| gauss(&mut rng, config.example_rows, d, 1.0))
                .collect(),
        )?;
        let heldout_domain =
            sample_spiked(&mut rng, config.heldout_rows, &dirs, config.spike_strength, d);
        let heldout_generic = gauss(&mut rng, config.heldout_rows, d, 1.0);
        Ok(TwoDomainBench {
            config,
            teacher,
            domain_pool,
            generic_pool,
            heldout_domain,
            heldout_generic,
        })
    }
}

/// One row of the calibration-mix ablation.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationRow {
    pub label: String,
    pub alpha: f64,
    pub in_domain_mse: f64,
    pub generic_mse: f64,
    pub average_mse: f64,
}

fn ablation_config(alpha: f64) -> RunConfig {
    RunConfig {
        method: Method::SparseGpt { cross_calibration: true },
        alpha,
        rel_damp: 0.01,
        block_size: 128,
        sparsity: SparsitySpec::Unstructured { fraction: 0.5 },
        quant: QuantSpec::default(),
    }
}

/// Compresses the teacher at mix weight `alpha` and measures held-out output
/// MSE against the dense teacher on both domains.
pub fn ablation_at(bench: &TwoDomainBench, alpha: f64) -> Result<(f64, f64)> {
    let cfg = ablation_config(alpha);
    let out = compress_stack(&bench.teacher, Some(&bench.domain_pool), &bench.generic_pool, &cfg)?;
    let dense_dom = bench.teacher.forward(&bench.heldout_domain)?;
    let dense_gen = bench.teacher.forward(&bench.heldout_generic)?;
    let comp_dom = out.stack.forward(&bench.heldout_domain)?;
    let comp_gen = out.stack.forward(&bench.heldout_generic)?;
    Ok((mse(&comp_dom, &dense_dom)?, mse(&comp_gen, &dense_gen)?))
}

/// The three-point mix ablation: mixed (0.8), domain-only (1.0),
/// generic-only (0.0).
pub fn run_two_domain_ablation(bench: &TwoDomainBench) -> Result<Vec<AblationRow>> {
    let grid: [(&str, f64); 3] = [("mixed", 0.8), ("domain-only", 1.0), ("generic-only", 0.0)];
    let mut rows = Vec::with_capacity(grid.len());
    for (label, alpha) in grid {
        let (in_domain_mse, generic_mse) = ablation_at(bench, alpha)?;
        rows.push(AblationRow {
            label: String::from(label),
            alpha,
            in_domain_mse,
            generic_mse,
            average_mse: 0.5 * (in_domain_mse + generic_mse),
        });
    }
    Ok(rows)
}
