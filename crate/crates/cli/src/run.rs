//! Orchestration shared by the CLI subcommands: model and pool loading,
//! compression runs, curvature dumps, the oracle self-check, and the
//! two-domain demo.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use hessforge_core::calib::{sample_segments, ExamplePool};
use hessforge_core::compress::{sparsegpt_prune, SparsitySpec};
use hessforge_core::eval::{
    run_two_domain_ablation, AblationRow, BenchConfig, TwoDomainBench,
};
use hessforge_core::hessian::{dampen, dead_columns, invert_cholesky, HessianState};
use hessforge_core::linalg::spd_inverse;
use hessforge_core::oracle::{exhaustive_mask_oracle, greedy_obs_oracle};
use hessforge_core::pipeline::{
    compress_stack, embed, weighted_stream, LayerStack, RunConfig, StackOutcome,
};
use hessforge_core::Matrix;

use crate::container::{read_container, write_container};
use crate::manifest::{load_manifest, Manifest};
use crate::pools::{load_pool, PoolKind};

pub struct LoadedModel {
    pub manifest: Manifest,
    pub tensors: BTreeMap<String, Matrix>,
    pub stack: LayerStack,
    pub embedding: Option<Matrix>,
}

pub fn load_model(model: &Path, manifest_path: &Path) -> Result<LoadedModel> {
    let manifest = load_manifest(manifest_path)
        .with_context(|| format!("reading manifest {}", manifest_path.display()))?;
    let tensors = read_container(model)
        .with_context(|| format!("reading model container {}", model.display()))?;
    let (stack, embedding) = manifest.resolve(&tensors)?;
    Ok(LoadedModel { manifest, tensors, stack, embedding })
}

#[derive(Debug, Clone, Copy)]
pub struct SegmentOptions {
    pub samples: usize,
    pub seg_len: usize,
    pub seed: u64,
}

/// Loads one calibration pool, optionally resampling fixed-length segments
/// and mapping the examples through the model embedding.
pub fn prepare_pool(
    path: &Path,
    kind: PoolKind,
    embedding: Option<&Matrix>,
    segments: Option<SegmentOptions>,
) -> Result<ExamplePool> {
    let mut pool = load_pool(path, kind)
        .with_context(|| format!("reading {kind} pool {}", path.display()))?;
    if let Some(s) = segments {
        pool = ExamplePool::new(sample_segments(&pool, s.samples, s.seg_len, s.seed)?)?;
    }
    if let Some(u) = embedding {
        let embedded: hessforge_core::Result<Vec<Matrix>> =
            pool.examples().iter().map(|x| embed(x, u)).collect();
        pool = ExamplePool::new(embedded?)?;
    }
    Ok(pool)
}

/// Replaces the manifest's weight tensors with the compressed ones; every
/// other tensor passes through untouched.
pub fn write_compressed_model(
    model: &LoadedModel,
    outcome: &StackOutcome,
    out: &Path,
) -> Result<()> {
    let mut tensors = model.tensors.clone();
    for (ml, layer) in model.manifest.layers.iter().zip(&outcome.stack.layers) {
        tensors.insert(ml.weight_tensor.clone(), layer.weights.clone());
    }
    write_container(out, &tensors)
        .with_context(|| format!("writing compressed model {}", out.display()))?;
    Ok(())
}

pub fn write_report_json(report: &impl Serialize, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing report {}", path.display()))?;
    Ok(())
}

pub fn run_compression(
    model: &LoadedModel,
    domain: Option<&ExamplePool>,
    generic: &ExamplePool,
    cfg: &RunConfig,
) -> Result<StackOutcome> {
    Ok(compress_stack(&model.stack, domain, generic, cfg)?)
}

#[derive(Debug, Serialize)]
pub struct HessianLayerReport {
    pub name: String,
    pub dim: usize,
    pub lambda: f64,
    pub examples: usize,
    pub weight_sum: f64,
    pub dead_columns: usize,
}

#[derive(Debug, Serialize)]
pub struct HessianReport {
    pub alpha: Option<f64>,
    pub rel_damp: f64,
    pub layers: Vec<HessianLayerReport>,
}

/// Accumulates each layer's weighted Hessian over the dense model, returning
/// the matrices (as `hessian/<layer>` tensors) and the dampening scalars.
pub fn dump_hessians(
    stack: &LayerStack,
    domain: Option<&ExamplePool>,
    generic: &ExamplePool,
    alpha: f64,
    rel_damp: f64,
) -> Result<(BTreeMap<String, Matrix>, HessianReport)> {
    let cc = domain.is_some();
    let mut dom_acts: Vec<Matrix> = domain.map(|p| p.examples().to_vec()).unwrap_or_default();
    let mut gen_acts: Vec<Matrix> = generic.examples().to_vec();
    let mut tensors = BTreeMap::new();
    let mut layers = Vec::new();
    let n_layers = stack.layers.len();
    for (li, layer) in stack.layers.iter().enumerate() {
        let stream = weighted_stream(cc, alpha, &dom_acts, &gen_acts)?;
        let mut state = HessianState::new(layer.weights.cols());
        for ex in &stream {
            state.accumulate(&ex.x, ex.weight)?;
        }
        let h = state.finalize()?;
        let (_, lambda) = dampen(&h, rel_damp)?;
        layers.push(HessianLayerReport {
            name: layer.name.clone(),
            dim: h.rows(),
            lambda,
            examples: state.n_seen(),
            weight_sum: state.weight_sum(),
            dead_columns: dead_columns(&h).len(),
        });
        tensors.insert(format!("hessian/{}", layer.name), h);
        if li + 1 < n_layers {
            for acts in [&mut dom_acts, &mut gen_acts] {
                for x in acts.iter_mut() {
                    let mut next = x.matmul_transpose(&layer.weights)?;
                    next.relu();
                    *x = next;
                }
            }
        }
    }
    Ok((tensors, HessianReport { alpha: cc.then_some(alpha), rel_damp, layers }))
}

#[derive(Debug)]
pub struct OracleCheck {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    pub required: usize,
}

impl OracleCheck {
    pub fn ok(&self) -> bool {
        self.passed >= self.required
    }
}

fn random_layer(rng: &mut ChaCha8Rng, cols: usize) -> (Matrix, Matrix) {
    let samples = cols + 6;
    let x = Matrix::from_vec(
        samples,
        cols,
        (0..samples * cols).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap();
    let w = Matrix::from_vec(1, cols, (0..cols).map(|_| rng.sample(StandardNormal)).collect())
        .unwrap();
    let mut h = x.gram();
    h.scale(2.0);
    (w, h)
}

/// Deterministic self-checks of the compression engine against the
/// brute-force oracles.
pub fn oracle_checks() -> Result<Vec<OracleCheck>> {
    let trials = 20;
    let mut greedy_dominated = 0;
    let mut engine_near_greedy = 0;
    let mut single_exact = 0;
    let mut factor_consistent = 0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let (w, h) = random_layer(&mut rng, 8);
        let exhaustive = exhaustive_mask_oracle(&w, &h, 3)?;
        let greedy = greedy_obs_oracle(&w, &h, 3)?;
        if exhaustive.loss <= greedy.loss + 1e-9 {
            greedy_dominated += 1;
        }

        let factor = invert_cholesky(&h, &[], 0.0)?;
        let engine = sparsegpt_prune(&w, &factor, &SparsitySpec::Unstructured { fraction: 0.375 }, 1)?;
        if engine.layer_error <= 2.0 * greedy.loss + 1e-9 {
            engine_near_greedy += 1;
        }

        let single = sparsegpt_prune(&w, &factor, &SparsitySpec::Unstructured { fraction: 0.125 }, 1)?;
        let best_one = exhaustive_mask_oracle(&w, &h, 1)?;
        if (single.layer_error - best_one.loss).abs() <= 1e-7 * best_one.loss.max(1e-12) {
            single_exact += 1;
        }

        let full = factor.trailing_inverse(3);
        let mut sub = Matrix::zeros(5, 5);
        for i in 0..5 {
            for j in 0..5 {
                sub.set(i, j, h.get(i + 3, j + 3));
            }
        }
        let direct = spd_inverse(&sub)?;
        if full.max_abs_diff(&direct) <= 1e-8 * direct.max_abs().max(1.0) {
            factor_consistent += 1;
        }
    }
    Ok(vec![
        OracleCheck { name: "exhaustive-dominates-greedy", passed: greedy_dominated, total: trials, required: trials },
        OracleCheck { name: "engine-within-2x-of-greedy", passed: engine_near_greedy, total: trials, required: trials * 9 / 10 },
        OracleCheck { name: "single-prune-is-optimal", passed: single_exact, total: trials, required: trials },
        OracleCheck { name: "trailing-inverse-identity", passed: factor_consistent, total: trials, required: trials },
    ])
}

#[derive(Debug, Serialize)]
pub struct DemoSeedResult {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Serialize)]
pub struct DemoReport {
    pub config: BenchConfig,
    pub seeds: usize,
    pub median: Vec<AblationRow>,
    pub per_seed: Vec<DemoSeedResult>,
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs the two-domain ablation over several seeds (in parallel) and medians
/// the rows per label.
pub fn run_demo(seeds: usize) -> Result<DemoReport> {
    anyhow::ensure!(seeds > 0, "need at least one seed");
    let base = BenchConfig::default();
    let per_seed: Vec<DemoSeedResult> = (0..seeds as u64)
        .into_par_iter()
        .map(|seed| -> Result<DemoSeedResult> {
            let bench = TwoDomainBench::generate(BenchConfig { seed, ..BenchConfig::default() })?;
            Ok(DemoSeedResult { seed, rows: run_two_domain_ablation(&bench)? })
        })
        .collect::<Result<_>>()?;

    let mut median_rows = Vec::new();
    for (i, proto) in per_seed[0].rows.iter().enumerate() {
        let mut ins: Vec<f64> = per_seed.iter().map(|s| s.rows[i].in_domain_mse).collect();
        let mut gens: Vec<f64> = per_seed.iter().map(|s| s.rows[i].generic_mse).collect();
        let mut avgs: Vec<f64> = per_seed.iter().map(|s| s.rows[i].average_mse).collect();
        median_rows.push(AblationRow {
            label: proto.label.clone(),
            alpha: proto.alpha,
            in_domain_mse: median(&mut ins),
            generic_mse: median(&mut gens),
            average_mse: median(&mut avgs),
        });
    }
    Ok(DemoReport { config: base, seeds, median: median_rows, per_seed })
}
