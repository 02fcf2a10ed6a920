use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quantizer::{QuantConfig, DEFAULT_BLOCK_SIZE};
use crate::sparsifier::SparsityConfig;

use super::layer::{Mode, QuantLinearLayer};
use super::matrix::Matrix;
use super::optim::OptimizerState;
use super::task::{Dataset, Task, FEATURES};

/// Activation and weight bit widths, as in `A1W1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Precision {
    pub act_bits: u8,
    pub weight_bits: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub precision: Precision,
    pub lambdas: Vec<f64>,
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub samples: usize,
    pub block_size: usize,
    pub sparsity: Option<SparsityConfig>,
    /// Also train an unquantized copy from the same initialization.
    pub float_baseline: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::SyntheticRegression,
            precision: Precision { act_bits: 1, weight_bits: 1 },
            lambdas: vec![0.0, 0.01, 1.0],
            steps: 2000,
            seed: 0,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            hidden: 32,
            samples: 256,
            block_size: DEFAULT_BLOCK_SIZE,
            sparsity: None,
            float_baseline: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if self.hidden == 0 || self.samples == 0 {
            return Err(Error::config("hidden width and sample count must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for &lambda in &self.lambdas {
            self.quant_config(self.precision.weight_bits, lambda).validate()?;
            self.quant_config(self.precision.act_bits, lambda).validate()?;
        }
        if let Some(s) = &self.sparsity {
            s.validate()?;
        }
        Ok(())
    }

    fn quant_config(&self, bits: u8, lambda: f64) -> QuantConfig {
        QuantConfig::with_bits(bits).lambda(lambda).block_size(self.block_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunKind {
    Float,
    Quantized { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRunReport {
    pub run: RunKind,
    pub task: Task,
    pub precision: Option<Precision>,
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub block_size: usize,
    pub sparsity: Option<SparsityConfig>,
    /// Training loss before each update. Stops at the first non-finite value.
    pub losses: Vec<f64>,
    pub initial_loss: f64,
    /// Loss after the last update.
    pub final_loss: f64,
    pub finite: bool,
}

/// Two quantized linear layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: QuantLinearLayer,
    pub output: QuantLinearLayer,
    relu_mask: Vec<bool>,
}

impl Mlp {
    pub fn new(hidden: QuantLinearLayer, output: QuantLinearLayer) -> Result<Self> {
        if hidden.out_features() != output.in_features() {
            return Err(Error::ShapeMismatch(format!(
                "hidden layer emits {}, output layer takes {}",
                hidden.out_features(),
                output.in_features()
            )));
        }
        Ok(Mlp { hidden, output, relu_mask: Vec::new() })
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        let h = self.hidden.forward(x, mode)?;
        self.relu_mask = h.data.iter().map(|&v| v > 0.0).collect();
        self.output.forward(&h.map(|v| v.max(0.0)), mode)
    }

    /// Gradients for `[W1, b1, W2, b2]`.
    pub fn backward(&self, upstream: &Matrix) -> Result<[Vec<f64>; 4]> {
        let g2 = self.output.backward(upstream)?;
        let mut gh = g2.input;
        for (g, &on) in gh.data.iter_mut().zip(&self.relu_mask) {
            if !on {
                *g = 0.0;
            }
        }
        let g1 = self.hidden.backward(&gh)?;
        Ok([g1.weight.data, g1.bias, g2.weight.data, g2.bias])
    }

    fn step(&mut self, opt: &mut OptimizerState, grads: &[Vec<f64>; 4]) -> Result<()> {
        let [w1, b1, w2, b2] = grads;
        opt.step(
            &mut [
                &mut self.hidden.weight.data,
                &mut self.hidden.bias,
                &mut self.output.weight.data,
                &mut self.output.bias,
            ],
            &[w1, b1, w2, b2],
        )
    }
}

fn init_weights(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let normal = Normal::new(0.0, (2.0 / rows as f64).sqrt()).expect("positive std");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

fn train(cfg: &ExperimentConfig, data: &Dataset, run: RunKind) -> Result<TrainRunReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_1a7e5);
    let w1 = init_weights(FEATURES, cfg.hidden, &mut rng);
    let w2 = init_weights(cfg.hidden, 1, &mut rng);
    let (wq, aq, sparsity) = match run {
        RunKind::Float => ((None, None), (None, None), None),
        RunKind::Quantized { lambda } => {
            let w = cfg.quant_config(cfg.precision.weight_bits, lambda);
            let a = cfg.quant_config(cfg.precision.act_bits, lambda);
            ((Some(w), Some(w)), (Some(a), Some(a)), cfg.sparsity)
        }
    };
    let hidden = QuantLinearLayer::new(w1, vec![0.0; cfg.hidden], wq.0, aq.0, sparsity)?;
    let output = QuantLinearLayer::new(w2, vec![0.0], wq.1, aq.1, sparsity)?;
    let mut mlp = Mlp::new(hidden, output)?;
    let mut opt = OptimizerState::new(cfg.lr, cfg.momentum, cfg.weight_decay, &[FEATURES * cfg.hidden, cfg.hidden, cfg.hidden, 1]);

    let mut losses = Vec::with_capacity(cfg.steps);
    let mut finite = true;
    for _ in 0..cfg.steps {
        let out = mlp.forward(&data.x, Mode::Train)?;
        let (loss, grad) = data.loss(&out);
        losses.push(loss);
        if !loss.is_finite() {
            finite = false;
            break;
        }
        let grads = mlp.backward(&grad)?;
        mlp.step(&mut opt, &grads)?;
    }
    let final_loss = if finite {
        let out = mlp.forward(&data.x, Mode::Eval)?;
        data.loss(&out).0
    } else {
        *losses.last().expect("at least one step")
    };
    finite &= final_loss.is_finite();
    Ok(TrainRunReport {
        run,
        task: cfg.task,
        precision: matches!(run, RunKind::Quantized { .. }).then_some(cfg.precision),
        seed: cfg.seed,
        steps: cfg.steps,
        lr: cfg.lr,
        block_size: cfg.block_size,
        sparsity,
        initial_loss: losses[0],
        losses,
        final_loss,
        finite,
    })
}

/// One training run per lambda, preceded by the float baseline when
/// requested. All runs share the dataset and the initial weights. Divergence
/// is reported through `finite`, not as an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrainRunReport>> {
    cfg.validate()?;
    let data = Dataset::generate(cfg.task, cfg.samples, cfg.seed);
    let mut runs: Vec<RunKind> = cfg.lambdas.iter().map(|&lambda| RunKind::Quantized { lambda }).collect();
    if cfg.float_baseline {
        runs.insert(0, RunKind::Float);
    }
    runs.par_iter().map(|&run| train(cfg, &data, run)).collect()
}

/// `step,<run label>...` with one column per report.
pub fn write_losses_csv<W: Write>(reports: &[TrainRunReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    header.extend(reports.iter().map(|r| match r.run {
        RunKind::Float => "float".to_string(),
        RunKind::Quantized { lambda } => format!("lambda={lambda}"),
    }));
    w.write_record(&header)?;
    let steps = reports.iter().map(|r| r.losses.len()).max().unwrap_or(0);
    for s in 0..steps {
        let mut row = vec![s.to_string()];
        row.extend(reports.iter().map(|r| r.losses.get(s).map_or(String::new(), |l| l.to_string())));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
