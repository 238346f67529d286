//! Whole-stack driver: streams calibration activations through the layers,
//! accumulates each layer's weighted curvature, compresses the layer, then
//! feeds the compressed outputs forward as the next layer's inputs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::calib::{build_mixed_set, ExamplePool, Source, WeightedExample};
use crate::compress::{
    gptq_quantize, joint_compress, mask_only_compress, sparsegpt_prune, CompressedLayer,
    QuantSpec, SparsitySpec,
};
use crate::error::{Error, Result};
use crate::hessian::{dampen, dead_columns, invert_cholesky, HessianState};
use crate::matrix::Matrix;
use crate::saliency::{magnitude_scores, wanda_scores_from_norms, weighted_column_norms};

/// One dense layer applied as `y = x W^T`, weights `out_features x
/// in_features`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub weights: Matrix,
}

impl Layer {
    pub fn new(name: impl Into<String>, weights: Matrix) -> Self {
        Layer { name: name.into(), weights }
    }

    pub fn in_features(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weights.rows()
    }
}

/// A chain of dense layers with ReLU between consecutive layers and a linear
/// final output.
#[derive(Debug, Clone)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("layer stack is empty"));
        }
        for pair in layers.windows(2) {
            if pair[1].in_features() != pair[0].out_features() {
                return Err(Error::dim(format!(
                    "layer {} expects {} inputs but {} produces {}",
                    pair[1].name,
                    pair[1].in_features(),
                    pair[0].name,
                    pair[0].out_features()
                )));
            }
        }
        Ok(LayerStack { layers })
    }

    pub fn in_features(&self) -> usize {
        self.layers[0].in_features()
    }

    pub fn out_features(&self) -> usize {
        self.layers[self.layers.len() - 1].out_features()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.matmul_transpose(&self.layers[0].weights)?;
        for layer in &self.layers[1..] {
            h.relu();
            h = h.matmul_transpose(&layer.weights)?;
        }
        Ok(h)
    }
}

/// Maps raw inputs through an embedding matrix: `x U`.
pub fn embed(x: &Matrix, u: &Matrix) -> Result<Matrix> {
    x.matmul(u)
}

/// Compression method. Cross-calibrating variants weight a domain pool
/// against the generic pool; the rest calibrate on the generic pool alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Magnitude,
    Wanda,
    SparseGpt { cross_calibration: bool },
    Gptq { cross_calibration: bool },
    Joint { cross_calibration: bool },
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Magnitude => "magnitude",
            Method::Wanda => "wanda",
            Method::SparseGpt { cross_calibration: false } => "sparsegpt",
            Method::SparseGpt { cross_calibration: true } => "sparsegpt-cc",
            Method::Gptq { cross_calibration: false } => "gptq",
            Method::Gptq { cross_calibration: true } => "gptq-cc",
            Method::Joint { cross_calibration: false } => "joint",
            Method::Joint { cross_calibration: true } => "joint-cc",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Ok(match s {
            "magnitude" => Method::Magnitude,
            "wanda" => Method::Wanda,
            "sparsegpt" => Method::SparseGpt { cross_calibration: false },
            "sparsegpt-cc" => Method::SparseGpt { cross_calibration: true },
            "gptq" => Method::Gptq { cross_calibration: false },
            "gptq-cc" => Method::Gptq { cross_calibration: true },
            "joint" => Method::Joint { cross_calibration: false },
            _ => {
                return Err(Error::config(format!("unknown method '{s}'")));
            }
        })
    }

    pub fn cross_calibration(&self) -> bool {
        matches!(
            self,
            Method::SparseGpt { cross_calibration: true }
                | Method::Gptq { cross_calibration: true }
                | Method::Joint { cross_calibration: true }
        )
    }

    pub fn prunes(&self) -> bool {
        !matches!(self, Method::Gptq { .. })
    }

    pub fn quantizes(&self) -> bool {
        matches!(self, Method::Gptq { .. } | Method::Joint { .. })
    }
}

/// Settings for one compression run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    /// Domain weight for cross-calibrating methods; ignored otherwise.
    pub alpha: f64,
    pub rel_damp: f64,
    pub block_size: usize,
    pub sparsity: SparsitySpec,
    pub quant: QuantSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::SparseGpt { cross_calibration: false },
            alpha: 0.8,
            rel_damp: 0.01,
            block_size: 128,
            sparsity: SparsitySpec::NOfM { n: 2, m: 4 },
            quant: QuantSpec::default(),
        }
    }
}

/// Per-layer entry of a [`RunReport`].
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerReport {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    /// `0.5 * sum_rows delta^T H delta` against the undamped weighted
    /// Hessian, i.e. the weighted activation reconstruction error.
    pub error: f64,
    pub zero_fraction: f64,
    pub lambda: f64,
    pub examples: usize,
    pub weight_sum: f64,
}

/// Summary of one compression run; serializes to stable JSON (no wall-clock
/// data, so identical runs give identical bytes).
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunReport {
    pub method: String,
    pub alpha: Option<f64>,
    pub rel_damp: f64,
    pub block_size: usize,
    pub sparsity: Option<SparsitySpec>,
    pub quant: Option<QuantSpec>,
    pub layers: Vec<LayerReport>,
    pub total_error: f64,
}

/// Everything a compression run produces.
#[derive(Debug, Clone)]
pub struct StackOutcome {
    pub stack: LayerStack,
    pub layers: Vec<CompressedLayer>,
    pub report: RunReport,
}

/// The per-layer calibration stream: the interleaved weighted mix when
/// cross-calibrating, otherwise the generic activations at unit weight.
pub fn weighted_stream(
    cc: bool,
    alpha: f64,
    dom_acts: &[Matrix],
    gen_acts: &[Matrix],
) -> Result<Vec<WeightedExample>> {
    if cc {
        let dpool = ExamplePool::new(dom_acts.to_vec())?;
        let gpool = ExamplePool::new(gen_acts.to_vec())?;
        Ok(build_mixed_set(&dpool, &gpool, alpha)?.examples().to_vec())
    } else {
        Ok(gen_acts
            .iter()
            .map(|x| WeightedExample { x: x.clone(), weight: 1.0, source: Source::Generic })
            .collect())
    }
}

/// Compresses every layer in order with the configured method, propagating
/// calibration activations through the already-compressed prefix.
pub fn compress_stack(
    stack: &LayerStack,
    domain: Option<&ExamplePool>,
    generic: &ExamplePool,
    cfg: &RunConfig,
) -> Result<StackOutcome> {
    let cc = cfg.method.cross_calibration();
    let name = cfg.method.as_str();
    if cc && domain.is_none() {
        return Err(Error::config(format!("method {name} requires a domain pool")));
    }
    if !cc && domain.is_some() {
        return Err(Error::config(format!("method {name} calibrates on the generic pool only")));
    }
    if generic.is_empty() {
        return Err(Error::config("generic calibration pool is empty"));
    }
    if let Some(d) = domain {
        if d.is_empty() {
            return Err(Error::config("domain calibration pool is empty"));
        }
        if d.width() != stack.in_features() {
            return Err(Error::dim(format!(
                "domain pool width {} does not match {} input features",
                d.width(),
                stack.in_features()
            )));
        }
    }
    if generic.width() != stack.in_features() {
        return Err(Error::dim(format!(
            "generic pool width {} does not match {} input features",
            generic.width(),
            stack.in_features()
        )));
    }

    let mut dom_acts: Vec<Matrix> = domain.map(|p| p.examples().to_vec()).unwrap_or_default();
    let mut gen_acts: Vec<Matrix> = generic.examples().to_vec();
    let n_layers = stack.layers.len();
    let mut out_layers = Vec::with_capacity(n_layers);
    let mut outcomes = Vec::with_capacity(n_layers);
    let mut reports = Vec::with_capacity(n_layers);
    let mut total_error = 0.0;

    for (li, layer) in stack.layers.iter().enumerate() {
        let w = &layer.weights;
        let stream = weighted_stream(cc, cfg.alpha, &dom_acts, &gen_acts)?;
        let mut state = HessianState::new(w.cols());
        for ex in &stream {
            state.accumulate(&ex.x, ex.weight)?;
        }
        let h = state.finalize()?;

        let compressed = match cfg.method {
            Method::Magnitude => mask_only_compress(w, &magnitude_scores(w), &cfg.sparsity)?,
            Method::Wanda => {
                let pairs: Vec<(&Matrix, f64)> = gen_acts.iter().map(|x| (x, 1.0)).collect();
                let norms = weighted_column_norms(&pairs)?;
                mask_only_compress(w, &wanda_scores_from_norms(w, &norms)?, &cfg.sparsity)?
            }
            method => {
                let dead = dead_columns(&h);
                let (hd, lambda) = dampen(&h, cfg.rel_damp)?;
                let factor = invert_cholesky(&hd, &dead, lambda)?;
                match method {
                    Method::SparseGpt { .. } => {
                        sparsegpt_prune(w, &factor, &cfg.sparsity, cfg.block_size)?
                    }
                    Method::Gptq { .. } => gptq_quantize(w, &factor, &cfg.quant, cfg.block_size)?,
                    Method::Joint { .. } => {
                        joint_compress(w, &factor, &cfg.sparsity, &cfg.quant, cfg.block_size)?
                    }
                    Method::Magnitude | Method::Wanda => unreachable!(),
                }
            }
        };

        let delta = w.sub(&compressed.w_hat)?;
        let dh = delta.matmul(&h)?;
        let mut error = 0.0;
        for r in 0..delta.rows() {
            let a = delta.row(r);
            let b = dh.row(r);
            let mut acc = 0.0;
            for (x, y) in a.iter().zip(b) {
                acc += x * y;
            }
            error += 0.5 * acc;
        }
        total_error += error;

        let zeros = compressed
            .mask
            .as_slice()
            .iter()
            .filter(|&&v| v == 0.0)
            .count();
        let lambda = if matches!(cfg.method, Method::Magnitude | Method::Wanda) {
            0.0
        } else {
            dampen(&h, cfg.rel_damp)?.1
        };
        reports.push(LayerReport {
            name: layer.name.clone(),
            in_features: w.cols(),
            out_features: w.rows(),
            error,
            zero_fraction: zeros as f64 / (w.rows() * w.cols()) as f64,
            lambda,
            examples: state.n_seen(),
            weight_sum: state.weight_sum(),
        });
        out_layers.push(Layer::new(layer.name.clone(), compressed.w_hat.clone()));

        if li + 1 < n_layers {
            let w_hat = &compressed.w_hat;
            for acts in [&mut dom_acts, &mut gen_acts] {
                for x in acts.iter_mut() {
                    let mut next = x.matmul_transpose(w_hat)?;
                    next.relu();
                    *x = next;
                }
            }
        }
        outcomes.push(compressed);
    }

    let report = RunReport {
        method: String::from(name),
        alpha: if cc { Some(cfg.alpha) } else { None },
        rel_damp: cfg.rel_damp,
        block_size: cfg.block_size,
        sparsity: cfg.method.prunes().then(|| cfg.sparsity.clone()),
        quant: cfg.method.quantizes().then(|| cfg.quant.clone()),
        layers: reports,
        total_error,
    };
    Ok(StackOutcome { stack: LayerStack::new(out_layers)?, layers: outcomes, report })
}
