//! Small quantization-aware training loop.
//!
//! Quantizers run in the forward pass with the rounding residual treated as
//! a constant, so the backward pass is the exact gradient of the smooth map
//! `x -> a(x) * (f(x) + delta - mean) + mean(x)`. Everything is computed in
//! f64.

mod experiment;
mod layer;
mod matrix;
mod optim;
pub mod surrogate;
mod task;

pub use experiment::{run_experiment, write_losses_csv, ExperimentConfig, Mlp, Precision, RunKind, TrainRunReport};
pub use layer::{BlockQuant, ForwardCache, LayerGrads, Mode, QuantLinearLayer, WeightBlock};
pub use matrix::Matrix;
pub use optim::OptimizerState;
pub use task::{Dataset, Task};
