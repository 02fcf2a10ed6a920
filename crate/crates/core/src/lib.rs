//! Denoising affine quantization and sparsification.
//!
//! Each block of a tensor is min/max scaled onto an integer grid, rounded,
//! and then reconstructed with a ridge-regularized affine fit `r = a*q + b`
//! instead of the naive inverse map. Sparsifiers replace low-magnitude
//! entries with the block mean, with zero, or per N:M group.

pub mod bitpack;
pub mod cli;
pub mod container;
pub mod error;
pub mod fp8;
pub mod harness;
pub mod pipeline;
pub mod qlinalg;
pub mod quantizer;
pub mod sparsifier;
pub mod tensor;

pub use error::{Error, Result};
pub use pipeline::{quantize_tensor, quantize_tensor_with, QuantSummary, QuantizedTensor};
pub use quantizer::{quantize_block, CoeffPrecision, QuantConfig, QuantizedBlock, Rounding};
pub use sparsifier::SparsityConfig;
pub use tensor::Tensor;
