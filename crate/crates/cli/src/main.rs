use std::path::PathBuf;
use std::process::exit;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use hessforge::container::write_container;
use hessforge::pools::PoolKind;
use hessforge::run::{
    dump_hessians, load_model, oracle_checks, prepare_pool, run_compression, run_demo,
    write_compressed_model, write_report_json, SegmentOptions,
};
use hessforge_core::compress::{QuantSpec, SparsitySpec};
use hessforge_core::pipeline::{Method, RunConfig};

#[derive(Parser)]
#[command(name = "hessforge", version, about = "Calibration-weighted one-shot pruning and quantization")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Accumulate and dump each layer's calibration Hessian
    Hessian(HessianArgs),
    /// Prune layer weights (magnitude | wanda | sparsegpt | sparsegpt-cc)
    Prune(PruneArgs),
    /// Quantize layer weights (gptq | gptq-cc)
    Quantize(QuantizeArgs),
    /// Prune and quantize in one pass
    Joint(JointArgs),
    /// Check the engine against brute-force oracles
    OracleCheck,
    /// Synthetic two-domain calibration-mixing experiment
    DemoTwoDomain(DemoArgs),
    /// Pretty-print a report file
    Report(ReportArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Model tensor container
    #[arg(long)]
    model: PathBuf,
    /// Model manifest JSON
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct PoolArgs {
    /// Generic calibration pool container
    #[arg(long)]
    generic: PathBuf,
    /// Domain calibration pool container (cross-calibration methods only)
    #[arg(long)]
    domain: Option<PathBuf>,
    /// Resample this many segments per pool (requires --seg-len)
    #[arg(long)]
    samples: Option<usize>,
    /// Rows per resampled segment (requires --samples)
    #[arg(long)]
    seg_len: Option<usize>,
    /// Seed for segment resampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OutputArgs {
    /// Output path for the result container
    #[arg(long)]
    out: PathBuf,
    /// Output path for the report JSON
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SparsityArgs {
    /// Unstructured sparsity fraction in [0, 1]
    #[arg(long)]
    sparsity: Option<f64>,
    /// Structured pattern n:m, keeping n of every m columns
    #[arg(long)]
    pattern: Option<String>,
}

#[derive(Args)]
struct QuantArgs {
    /// Quantization bit width
    #[arg(long, default_value_t = 4)]
    bits: u32,
    /// Columns sharing one scale
    #[arg(long, default_value_t = 128)]
    group_size: usize,
    /// Keep the plain max-abs scale instead of searching the shrink grid
    #[arg(long)]
    no_clip_search: bool,
}

#[derive(Args)]
struct HessianArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    pools: PoolArgs,
    /// Domain weight when a domain pool is given
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    /// Relative dampening reported per layer
    #[arg(long, default_value_t = 0.01)]
    damp: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct PruneArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    pools: PoolArgs,
    /// magnitude | wanda | sparsegpt | sparsegpt-cc
    #[arg(long, default_value = "sparsegpt")]
    method: String,
    #[command(flatten)]
    sparsity: SparsityArgs,
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    damp: f64,
    /// Columns eliminated per exact update batch
    #[arg(long, default_value_t = 128)]
    block: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct QuantizeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    pools: PoolArgs,
    /// gptq | gptq-cc
    #[arg(long, default_value = "gptq")]
    method: String,
    #[command(flatten)]
    quant: QuantArgs,
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    damp: f64,
    #[arg(long, default_value_t = 128)]
    block: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct JointArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    pools: PoolArgs,
    #[command(flatten)]
    sparsity: SparsityArgs,
    #[command(flatten)]
    quant: QuantArgs,
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    damp: f64,
    #[arg(long, default_value_t = 128)]
    block: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct DemoArgs {
    /// Number of benchmark seeds to aggregate
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Optional path for the demo report JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON file to pretty-print
    file: PathBuf,
}

fn usage_error(flag: &str, msg: impl AsRef<str>) -> ! {
    eprintln!("error: invalid use of {flag}: {}", msg.as_ref());
    exit(2);
}

fn parse_method(s: &str, allowed: &[&str], flag_context: &str) -> Method {
    if !allowed.contains(&s) {
        usage_error("--method", format!("{flag_context} accepts {}", allowed.join(" | ")));
    }
    match Method::parse(s) {
        Ok(m) => m,
        Err(_) => usage_error("--method", format!("unknown method '{s}'")),
    }
}

fn check_alpha(alpha: f64) {
    if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
        usage_error("--alpha", "must lie in [0, 1]");
    }
}

fn sparsity_spec(args: &SparsityArgs) -> SparsitySpec {
    match (&args.sparsity, &args.pattern) {
        (Some(_), Some(_)) => usage_error("--pattern", "conflicts with --sparsity"),
        (Some(f), None) => {
            if !f.is_finite() || !(0.0..=1.0).contains(f) {
                usage_error("--sparsity", "must lie in [0, 1]");
            }
            SparsitySpec::Unstructured { fraction: *f }
        }
        (None, Some(p)) => {
            let parts: Vec<&str> = p.split(':').collect();
            let parsed = if parts.len() == 2 {
                match (parts[0].parse::<usize>(), parts[1].parse::<usize>()) {
                    (Ok(n), Ok(m)) => Some((n, m)),
                    _ => None,
                }
            } else {
                None
            };
            match parsed {
                Some((n, m)) if m > 0 && n <= m => SparsitySpec::NOfM { n, m },
                _ => usage_error("--pattern", "expected n:m with n <= m, like 2:4"),
            }
        }
        (None, None) => SparsitySpec::Unstructured { fraction: 0.5 },
    }
}

fn quant_spec(args: &QuantArgs) -> QuantSpec {
    if !(2..=8).contains(&args.bits) {
        usage_error("--bits", "must lie in 2..=8");
    }
    if args.group_size == 0 {
        usage_error("--group-size", "must be positive");
    }
    QuantSpec {
        bits: args.bits,
        group_size: args.group_size,
        clip_search: !args.no_clip_search,
        ..QuantSpec::default()
    }
}

fn segment_options(pools: &PoolArgs) -> Option<SegmentOptions> {
    match (pools.samples, pools.seg_len) {
        (Some(samples), Some(seg_len)) => {
            if samples == 0 {
                usage_error("--samples", "must be positive");
            }
            if seg_len == 0 {
                usage_error("--seg-len", "must be positive");
            }
            Some(SegmentOptions { samples, seg_len, seed: pools.seed })
        }
        (Some(_), None) => usage_error("--seg-len", "required when --samples is given"),
        (None, Some(_)) => usage_error("--samples", "required when --seg-len is given"),
        (None, None) => None,
    }
}

fn check_domain_flag(method: Method, pools: &PoolArgs) {
    if method.cross_calibration() && pools.domain.is_none() {
        usage_error("--domain", format!("required by method {}", method.as_str()));
    }
    if !method.cross_calibration() && pools.domain.is_some() {
        usage_error(
            "--domain",
            format!("method {} calibrates on the generic pool only", method.as_str()),
        );
    }
}

fn check_block(block: usize) {
    if block == 0 {
        usage_error("--block", "must be positive");
    }
}

fn run_compress_cmd(
    model_args: &ModelArgs,
    pool_args: &PoolArgs,
    output: &OutputArgs,
    cfg: RunConfig,
) -> Result<()> {
    let model = load_model(&model_args.model, &model_args.manifest)?;
    let segments = segment_options(pool_args);
    let generic =
        prepare_pool(&pool_args.generic, PoolKind::Generic, model.embedding.as_ref(), segments)?;
    let domain = match &pool_args.domain {
        Some(p) => {
            Some(prepare_pool(p, PoolKind::Domain, model.embedding.as_ref(), segments)?)
        }
        None => None,
    };
    let t0 = Instant::now();
    let outcome = run_compression(&model, domain.as_ref(), &generic, &cfg)?;
    eprintln!(
        "compressed {} layers in {:.1} ms",
        outcome.stack.layers.len(),
        t0.elapsed().as_secs_f64() * 1e3
    );
    write_compressed_model(&model, &outcome, &output.out)?;
    if let Some(path) = &output.report {
        write_report_json(&outcome.report, path)?;
    }
    println!("method {}", outcome.report.method);
    for lr in &outcome.report.layers {
        println!(
            "layer {}: error {:.6e}, zeros {:.2}%",
            lr.name,
            lr.error,
            lr.zero_fraction * 100.0
        );
    }
    println!("total error {:.6e}", outcome.report.total_error);
    Ok(())
}

fn cmd_hessian(args: &HessianArgs) -> Result<()> {
    check_alpha(args.alpha);
    if args.damp < 0.0 {
        usage_error("--damp", "must be non-negative");
    }
    let model = load_model(&args.model.model, &args.model.manifest)?;
    let segments = segment_options(&args.pools);
    let generic =
        prepare_pool(&args.pools.generic, PoolKind::Generic, model.embedding.as_ref(), segments)?;
    let domain = match &args.pools.domain {
        Some(p) => Some(prepare_pool(p, PoolKind::Domain, model.embedding.as_ref(), segments)?),
        None => None,
    };
    let (tensors, report) =
        dump_hessians(&model.stack, domain.as_ref(), &generic, args.alpha, args.damp)?;
    write_container(&args.output.out, &tensors)?;
    if let Some(path) = &args.output.report {
        write_report_json(&report, path)?;
    }
    for lr in &report.layers {
        println!(
            "hessian {}: dim {}, lambda {:.6e}, examples {}, dead columns {}",
            lr.name, lr.dim, lr.lambda, lr.examples, lr.dead_columns
        );
    }
    Ok(())
}

fn cmd_prune(args: &PruneArgs) -> Result<()> {
    let method =
        parse_method(&args.method, &["magnitude", "wanda", "sparsegpt", "sparsegpt-cc"], "prune");
    check_alpha(args.alpha);
    check_block(args.block);
    check_domain_flag(method, &args.pools);
    let cfg = RunConfig {
        method,
        alpha: args.alpha,
        rel_damp: args.damp,
        block_size: args.block,
        sparsity: sparsity_spec(&args.sparsity),
        quant: QuantSpec::default(),
    };
    run_compress_cmd(&args.model, &args.pools, &args.output, cfg)
}

fn cmd_quantize(args: &QuantizeArgs) -> Result<()> {
    let method = parse_method(&args.method, &["gptq", "gptq-cc"], "quantize");
    check_alpha(args.alpha);
    check_block(args.block);
    check_domain_flag(method, &args.pools);
    let cfg = RunConfig {
        method,
        alpha: args.alpha,
        rel_damp: args.damp,
        block_size: args.block,
        sparsity: SparsitySpec::Unstructured { fraction: 0.0 },
        quant: quant_spec(&args.quant),
    };
    run_compress_cmd(&args.model, &args.pools, &args.output, cfg)
}

fn cmd_joint(args: &JointArgs) -> Result<()> {
    let method = Method::Joint { cross_calibration: false };
    check_alpha(args.alpha);
    check_block(args.block);
    check_domain_flag(method, &args.pools);
    let cfg = RunConfig {
        method,
        alpha: args.alpha,
        rel_damp: args.damp,
        block_size: args.block,
        sparsity: sparsity_spec(&args.sparsity),
        quant: quant_spec(&args.quant),
    };
    run_compress_cmd(&args.model, &args.pools, &args.output, cfg)
}

fn cmd_oracle_check() -> Result<()> {
    let checks = oracle_checks()?;
    let mut all_ok = true;
    for c in &checks {
        let verdict = if c.ok() { "pass" } else { "FAIL" };
        println!("check {}: {} ({}/{})", c.name, verdict, c.passed, c.total);
        all_ok &= c.ok();
    }
    if !all_ok {
        anyhow::bail!("oracle checks failed");
    }
    Ok(())
}

fn cmd_demo(args: &DemoArgs) -> Result<()> {
    if args.seeds == 0 {
        usage_error("--seeds", "must be positive");
    }
    let t0 = Instant::now();
    let report = run_demo(args.seeds)?;
    eprintln!("ran {} seeds in {:.1} ms", args.seeds, t0.elapsed().as_secs_f64() * 1e3);
    println!(
        "two-domain ablation, median held-out MSE vs the dense teacher over {} seeds",
        report.seeds
    );
    println!("{:<14} {:>6} {:>14} {:>14} {:>14}", "label", "alpha", "in-domain", "generic", "average");
    for row in &report.median {
        println!(
            "{:<14} {:>6.2} {:>14.6} {:>14.6} {:>14.6}",
            row.label, row.alpha, row.in_domain_mse, row.generic_mse, row.average_mse
        );
    }
    if let Some(path) = &args.out {
        write_report_json(&report, path)?;
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let raw = std::fs::read(&args.file)?;
    let value: serde_json::Value = serde_json::from_slice(&raw)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn init_threads() {
    if let Ok(raw) = std::env::var("HESSFORGE_THREADS") {
        match raw.parse::<usize>() {
            Ok(0) => {}
            Ok(n) => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            Err(_) => usage_error("HESSFORGE_THREADS", "must be a non-negative integer"),
        }
    }
}

fn main() {
    init_threads();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Hessian(args) => cmd_hessian(args),
        Cmd::Prune(args) => cmd_prune(args),
        Cmd::Quantize(args) => cmd_quantize(args),
        Cmd::Joint(args) => cmd_joint(args),
        Cmd::OracleCheck => cmd_oracle_check(),
        Cmd::DemoTwoDomain(args) => cmd_demo(args),
        Cmd::Report(args) => cmd_report(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        exit(1);
    }
}
