//! Calibration pools: segment sampling and the weighted two-pool mix that
//! drives the Hessian accumulator.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Ordered list of example matrices sharing one feature width.
#[derive(Debug, Clone)]
pub struct ExamplePool {
    examples: Vec<Matrix>,
    width: usize,
}

impl ExamplePool {
    pub fn new(examples: Vec<Matrix>) -> Result<Self> {
        let width = match examples.first() {
            Some(m) => m.cols(),
            None => return Ok(ExamplePool { examples, width: 0 }),
        };
        for (i, m) in examples.iter().enumerate() {
            if m.cols() != width {
                return Err(Error::dim(format!(
                    "pool example {i} has width {}, expected {width}",
                    m.cols()
                )));
            }
        }
        Ok(ExamplePool { examples, width })
    }

    pub fn examples(&self) -> &[Matrix] {
        &self.examples
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn total_rows(&self) -> usize {
        self.examples.iter().map(Matrix::rows).sum()
    }
}

/// Origin of a calibration example inside a mixed set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Domain,
    Generic,
}

/// One calibration example with its accumulation weight.
#[derive(Debug, Clone)]
pub struct WeightedExample {
    pub x: Matrix,
    pub weight: f64,
    pub source: Source,
}

/// Weighted calibration set mixing a domain pool (weight `alpha`) with a
/// generic pool (weight `1 - alpha`), in a fixed interleaved order.
#[derive(Debug, Clone)]
pub struct MixedSet {
    examples: Vec<WeightedExample>,
    alpha: f64,
    n_domain: usize,
    n_generic: usize,
}

impl MixedSet {
    pub fn examples(&self) -> &[WeightedExample] {
        &self.examples
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_domain(&self) -> usize {
        self.n_domain
    }

    pub fn n_generic(&self) -> usize {
        self.n_generic
    }

    /// Left-to-right sum of the example weights.
    pub fn weight_sum(&self) -> f64 {
        self.examples.iter().map(|e| e.weight).sum()
    }
}

/// Cuts `n` segments of `seg_len` rows from the pool: examples are
/// concatenated in a seeded random order into one stream and consecutive
/// windows are taken from the front, truncating the example that straddles
/// the final cut.
pub fn sample_segments(
    pool: &ExamplePool,
    n: usize,
    seg_len: usize,
    seed: u64,
) -> Result<Vec<Matrix>> {
    if n == 0 || seg_len == 0 {
        return Err(Error::config("segment count and length must be positive"));
    }
    let available = pool.total_rows();
    let needed = n * seg_len;
    if available < needed {
        return Err(Error::PoolTooSmall { needed, available });
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let width = pool.width();
    let mut segments = Vec::with_capacity(n);
    let mut current: Vec<f64> = Vec::with_capacity(seg_len * width);
    let mut rows_in_current = 0usize;
    'outer: for &idx in &order {
        let ex = &pool.examples()[idx];
        for r in 0..ex.rows() {
            current.extend_from_slice(ex.row(r));
            rows_in_current += 1;
            if rows_in_current == seg_len {
                segments.push(Matrix::from_vec(seg_len, width, core::mem::take(&mut current))?);
                rows_in_current = 0;
                current.reserve(seg_len * width);
                if segments.len() == n {
                    break 'outer;
                }
            }
        }
    }
    Ok(segments)
}

/// Builds the weighted calibration set: domain examples carry `alpha`,
/// generic ones `1 - alpha`, interleaved domain-first with the longer pool's
/// tail appended. Zero-weight examples stay in the set; the accumulator
/// skips them.
pub fn build_mixed_set(
    domain: &ExamplePool,
    generic: &ExamplePool,
    alpha: f64,
) -> Result<MixedSet> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(Error::config(format!("alpha {alpha} outside [0, 1]")));
    }
    if alpha > 0.0 && domain.is_empty() {
        return Err(Error::config("alpha > 0 requires a non-empty domain pool"));
    }
    if alpha < 1.0 && generic.is_empty() {
        return Err(Error::config("alpha < 1 requires a non-empty generic pool"));
    }
    if !domain.is_empty() && !generic.is_empty() && domain.width() != generic.width() {
        return Err(Error::dim(format!(
            "domain width {} != generic width {}",
            domain.width(),
            generic.width()
        )));
    }
    let mut examples = Vec::with_capacity(domain.len() + generic.len());
    let mut d = domain.examples().iter();
    let mut g = generic.examples().iter();
    loop {
        match (d.next(), g.next()) {
            (None, None) => break,
            (dx, gx) => {
                if let Some(x) = dx {
                    examples.push(WeightedExample { x: x.clone(), weight: alpha, source: Source::Domain });
                }
                if let Some(x) = gx {
                    examples.push(WeightedExample {
                        x: x.clone(),
                        weight: 1.0 - alpha,
                        source: Source::Generic,
                    });
                }
            }
        }
    }
    Ok(MixedSet { examples, alpha, n_domain: domain.len(), n_generic: generic.len() })
}
