//! `dq` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 I/O failure,
//! 4 a training run that was required to stay finite did not.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{run_experiment, write_losses_csv, ExperimentConfig, Precision, RunKind, Task};
use crate::pipeline::{quantize_tensor_with, QuantSummary, QuantizedTensor};
use crate::qlinalg::matmul_sweep;
use crate::quantizer::{CoeffPrecision, QuantConfig, Rounding, DEFAULT_BLOCK_SIZE, DEFAULT_EPSILON, DEFAULT_LAMBDA};
use crate::sparsifier::SparsityConfig;
use crate::tensor::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_ASSERTION: i32 = 4;

/// Environment variable capping the number of sweep worker threads.
pub const THREADS_ENV: &str = "DQ_NUM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dq", version, about = "Denoising affine quantization and sparsification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a DQT1 tensor into a DQZ1 container and print metrics as JSON.
    Quantize(QuantizeArgs),
    /// Reconstruct a DQZ1 container back into a DQT1 tensor.
    Dequantize(DequantizeArgs),
    /// Quantize one tensor over a grid of settings and write CSV.
    Sweep(SweepArgs),
    /// Blockwise quantized matmul errors over a grid, as JSON.
    MatmulSweep(MatmulSweepArgs),
    /// Train the small MLP under several lambdas and write reports as JSON.
    Train(TrainArgs),
    /// Write a seeded random tensor.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SparsityMode {
    TowardMean,
    Zero,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CoeffArg {
    Full,
    E5m2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoundingArg {
    HalfToEven,
    HalfAwayFromZero,
}

#[derive(Debug, Clone, Args)]
pub struct QuantFlags {
    #[arg(long, default_value_t = 4)]
    pub bits: u8,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value = "full")]
    pub coeff: CoeffArg,
    #[arg(long, value_enum, default_value = "half-to-even")]
    pub rounding: RoundingArg,
}

impl QuantFlags {
    fn config(&self) -> Result<QuantConfig> {
        let cfg = QuantConfig::with_bits(self.bits)
            .block_size(self.block_size)
            .lambda(self.lambda)
            .epsilon(self.epsilon)
            .rounding(rounding(self.rounding))
            .coeff_precision(coeff(self.coeff));
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SparsityFlags {
    /// Fraction of each block to replace, or `M:N` for structured sparsity.
    #[arg(long)]
    pub sparsity: Option<String>,
    /// Keep M of every N consecutive weights.
    #[arg(long, value_name = "M:N")]
    pub mn: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<SparsityMode>,
}

impl SparsityFlags {
    fn config(&self) -> Result<Option<SparsityConfig>> {
        let structured = |s: &str| -> Result<SparsityConfig> {
            let cfg: SparsityConfig = s.parse()?;
            if cfg.is_structured() {
                Ok(cfg)
            } else {
                Err(Error::config(format!("expected M:N, got {s:?}")))
            }
        };
        let cfg = match (&self.mn, &self.sparsity, self.mode) {
            (Some(mn), None, None | Some(SparsityMode::Structured)) => Some(structured(mn)?),
            (Some(_), Some(_), _) => return Err(Error::config("give either --mn or --sparsity, not both")),
            (Some(_), None, Some(_)) => return Err(Error::config("--mn implies --mode structured")),
            (None, Some(s), mode) if s.contains(':') => match mode {
                None | Some(SparsityMode::Structured) => Some(structured(s)?),
                Some(_) => return Err(Error::config("an M:N pattern needs --mode structured")),
            },
            (None, Some(s), mode) => {
                let fraction: f64 = s.parse().map_err(|_| Error::config(format!("bad sparsity fraction {s:?}")))?;
                Some(match mode.unwrap_or(SparsityMode::TowardMean) {
                    SparsityMode::TowardMean => SparsityConfig::TowardMean { fraction },
                    SparsityMode::Zero => SparsityConfig::ZeroMask { fraction },
                    SparsityMode::Structured => return Err(Error::config("structured mode needs --mn M:N")),
                })
            }
            (None, None, Some(_)) => return Err(Error::config("--mode needs --sparsity or --mn")),
            (None, None, None) => None,
        };
        if let Some(c) = &cfg {
            c.validate()?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// DQT1 input tensor.
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Blocked axis; defaults to the last one.
    #[arg(long)]
    pub axis: Option<usize>,
    #[command(flatten)]
    pub quant: QuantFlags,
    #[command(flatten)]
    pub sparsity: SparsityFlags,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DequantizeArgs {
    /// DQZ1 input container.
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub axis: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u8, 2, 4, 8])]
    pub bits: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 128, 512])]
    pub block_size: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_LAMBDA])]
    pub lambda: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Sparsity fractions, swept together with the other axes.
    #[arg(long, value_delimiter = ',')]
    pub sparsity: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_name = "M:N")]
    pub mn: Vec<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "toward-mean")]
    pub mode: Vec<SparsityMode>,
    #[arg(long, value_enum, default_value = "full")]
    pub coeff: CoeffArg,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatmulSweepArgs {
    /// Left operand; a seeded Gaussian matrix when absent.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Right operand; a seeded Gaussian matrix when absent.
    #[arg(long)]
    pub w: Option<PathBuf>,
    /// `rows,inner,cols` of the generated operands.
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 512, 64])]
    pub dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u8, 2, 4, 8])]
    pub bits: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 128, 512])]
    pub block_size: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_LAMBDA])]
    pub lambda: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "synthetic-regression")]
    pub task: Task,
    /// Activation and weight bits: one value for both, or `A W`.
    #[arg(long, num_args = 1..=2, default_values_t = [1u8, 1])]
    pub bits: Vec<u8>,
    /// Overrides the activation half of --bits.
    #[arg(long)]
    pub act_bits: Option<u8>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 1.0])]
    pub lambda: Vec<f64>,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,
    #[command(flatten)]
    pub sparsity: SparsityFlags,
    #[arg(long)]
    pub no_baseline: bool,
    /// Reports JSON destination; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-step losses as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dist {
    Gaussian,
    Uniform,
    HeavyTailed,
    Constant,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',', required = true)]
    pub shape: Vec<usize>,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub dist: Dist,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Metrics printed by `quantize`.
#[derive(Debug, Serialize)]
pub struct QuantizeReport {
    pub shape: Vec<usize>,
    pub axis: usize,
    pub config: QuantConfig,
    pub sparsity: Option<SparsityConfig>,
    #[serde(flatten)]
    pub summary: QuantSummary,
}

/// One row of `sweep` output.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub bits: u8,
    pub block_size: usize,
    pub lambda: f64,
    pub sparsity: String,
    pub mse: f64,
    pub max_abs_err: f64,
    pub effective_bits: f64,
    pub mean_kappa: f64,
    pub max_kappa: f64,
    pub degenerate_blocks: usize,
}

fn rounding(r: RoundingArg) -> Rounding {
    match r {
        RoundingArg::HalfToEven => Rounding::HalfToEven,
        RoundingArg::HalfAwayFromZero => Rounding::HalfAwayFromZero,
    }
}

fn coeff(c: CoeffArg) -> CoeffPrecision {
    match c {
        CoeffArg::Full => CoeffPrecision::Full,
        CoeffArg::E5m2 => CoeffPrecision::E5m2,
    }
}

/// Run the CLI on `std::env::args` and return the process exit code.
pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Quantize(a) => cmd_quantize(&a),
        Command::Dequantize(a) => cmd_dequantize(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::MatmulSweep(a) => cmd_matmul_sweep(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Gen(a) => cmd_gen(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("dq: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn default_axis(t: &Tensor, axis: Option<usize>) -> Result<usize> {
    match axis {
        Some(a) => Ok(a),
        None if t.rank() > 0 => Ok(t.rank() - 1),
        None => Err(Error::ShapeMismatch("a scalar has no axis to block".into())),
    }
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => {
            let mut out = io::stdout().lock();
            writeln!(out, "{text}")?;
        }
    }
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Thread pool honouring `DQ_NUM_THREADS`.
fn pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::config(e.to_string()))
}

pub fn cmd_quantize(a: &QuantizeArgs) -> Result<i32> {
    let cfg = a.quant.config()?;
    let sparsity = a.sparsity.config()?;
    let t = Tensor::load(&a.input)?;
    let axis = default_axis(&t, a.axis)?;
    let (qt, summary) = quantize_tensor_with(&t, axis, &cfg, sparsity.as_ref())?;
    qt.save(&a.out)?;
    let report = QuantizeReport { shape: t.shape().to_vec(), axis, config: cfg, sparsity, summary };
    if let Some(p) = &a.report {
        write_json(&report, Some(p))?;
    }
    write_json(&report, None)?;
    Ok(EXIT_OK)
}

pub fn cmd_dequantize(a: &DequantizeArgs) -> Result<i32> {
    QuantizedTensor::load(&a.input)?.dequantize().save(&a.out)?;
    Ok(EXIT_OK)
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let t = Tensor::load(&a.input)?;
    let axis = default_axis(&t, a.axis)?;
    let mut patterns: Vec<Option<SparsityConfig>> = Vec::new();
    for &f in &a.sparsity {
        for mode in &a.mode {
            patterns.push(Some(match mode {
                SparsityMode::TowardMean => SparsityConfig::TowardMean { fraction: f },
                SparsityMode::Zero => SparsityConfig::ZeroMask { fraction: f },
                SparsityMode::Structured => return Err(Error::config("structured patterns are given with --mn")),
            }));
        }
    }
    for mn in &a.mn {
        patterns.push(Some(mn.parse()?));
    }
    if patterns.is_empty() {
        patterns.push(None);
    }
    let mut grid = Vec::new();
    for &bits in &a.bits {
        for &bs in &a.block_size {
            for &lambda in &a.lambda {
                for p in &patterns {
                    let cfg = QuantConfig::with_bits(bits)
                        .block_size(bs)
                        .lambda(lambda)
                        .epsilon(a.epsilon)
                        .coeff_precision(coeff(a.coeff));
                    cfg.validate()?;
                    if let Some(s) = p {
                        s.validate()?;
                    }
                    grid.push((cfg, *p));
                }
            }
        }
    }
    let rows: Vec<SweepRow> = pool()?.install(|| {
        grid.par_iter()
            .map(|(cfg, sp)| {
                let (_, s) = quantize_tensor_with(&t, axis, cfg, sp.as_ref())?;
                Ok(SweepRow {
                    bits: cfg.bits,
                    block_size: cfg.block_size,
                    lambda: cfg.lambda,
                    sparsity: sp.map_or("none".to_string(), |s| s.to_string()),
                    mse: s.mse,
                    max_abs_err: s.max_abs_err,
                    effective_bits: s.effective_bits,
                    mean_kappa: s.mean_kappa,
                    max_kappa: s.max_kappa,
                    degenerate_blocks: s.degenerate_blocks,
                })
            })
            .collect::<Result<_>>()
    })?;
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(EXIT_OK)
}

fn gaussian_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect())
}

pub fn cmd_matmul_sweep(a: &MatmulSweepArgs) -> Result<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let [n, k, o] = a.dims[..] else {
        return Err(Error::config(format!("--dims needs rows,inner,cols, got {:?}", a.dims)));
    };
    let x = match &a.x {
        Some(p) => Tensor::load(p)?,
        None => gaussian_tensor(vec![n, k], &mut rng)?,
    };
    let w = match &a.w {
        Some(p) => Tensor::load(p)?,
        None => gaussian_tensor(vec![k, o], &mut rng)?,
    };
    let reports = pool()?.install(|| matmul_sweep(&x, &w, &a.bits, &a.block_size, &a.lambda))?;
    write_json(&reports, a.out.as_deref())?;
    Ok(EXIT_OK)
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let (act, weight) = match a.bits[..] {
        [b] => (b, b),
        [act, weight] => (act, weight),
        _ => return Err(Error::config("--bits takes one or two values")),
    };
    let cfg = ExperimentConfig {
        task: a.task,
        precision: Precision { act_bits: a.act_bits.unwrap_or(act), weight_bits: weight },
        lambdas: a.lambda.clone(),
        steps: a.steps,
        seed: a.seed,
        lr: a.lr,
        block_size: a.block_size,
        sparsity: a.sparsity.config()?,
        float_baseline: !a.no_baseline,
        ..ExperimentConfig::default()
    };
    let reports = pool()?.install(|| run_experiment(&cfg))?;
    write_json(&reports, a.report.as_deref())?;
    if let Some(p) = &a.out {
        write_losses_csv(&reports, BufWriter::new(File::create(p)?))?;
    }
    // Runs without regularization are recorded but not held to finiteness.
    let failed: Vec<&RunKind> = reports
        .iter()
        .filter(|r| !r.finite && r.run != RunKind::Quantized { lambda: 0.0 })
        .map(|r| &r.run)
        .collect();
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("dq: non-finite training runs: {failed:?}");
        Ok(EXIT_ASSERTION)
    }
}

pub fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let n: usize = a.shape.iter().product();
    let data: Vec<f32> = match a.dist {
        Dist::Gaussian => (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
        Dist::Uniform => (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        Dist::HeavyTailed => {
            let t = StudentT::new(2.0f32).map_err(|e| Error::config(e.to_string()))?;
            (0..n).map(|_| t.sample(&mut rng)).collect()
        }
        Dist::Constant => vec![rng.random_range(-1.0f32..1.0); n],
    };
    Tensor::new(a.shape.clone(), data)?.save(&a.out)?;
    Ok(EXIT_OK)
}
