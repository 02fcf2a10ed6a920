//! Tensor-level quantization: every lane along the chosen axis is split into
//! blocks and each block is (optionally sparsified, then) quantized on its own.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fp8::e5m2_round;
use crate::quantizer::{quantize_block, CoeffPrecision, Coefficients, QuantConfig, QuantizedBlock};
use crate::sparsifier::{bits_per_element, sparsify, ternarize, SparsityConfig};
use crate::tensor::{partition, AxisLayout, BlockPartition, Tensor};

/// Blockwise-quantized tensor. Blocks are ordered lane-major, then by span.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub axis: usize,
    pub config: QuantConfig,
    pub sparsity: Option<SparsityConfig>,
    pub blocks: Vec<QuantizedBlock>,
    /// Per-block kept masks when sparsity was applied.
    pub kept_masks: Option<Vec<Vec<bool>>>,
}

impl QuantizedTensor {
    pub fn layout(&self) -> AxisLayout {
        AxisLayout::new(&self.shape, self.axis).expect("axis validated at construction")
    }

    pub fn partition(&self) -> BlockPartition {
        partition(self.shape[self.axis], self.config.block_size)
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Structured blocks carry ternary codes stored as `q + 1`.
    pub fn is_ternary(&self) -> bool {
        self.sparsity.is_some_and(|s| s.is_structured())
    }

    pub fn dequantize(&self) -> Tensor {
        let layout = self.layout();
        let part = self.partition();
        let mut out = Tensor::zeros(self.shape.clone()).expect("shape validated at construction");
        let mut blocks = self.blocks.iter();
        for lane in 0..layout.lanes() {
            let mut values = Vec::with_capacity(layout.axis_len);
            for _ in part.iter() {
                values.extend(blocks.next().expect("block grid matches layout").dequantize());
            }
            out.set_lane(&layout, lane, &values);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantSummary {
    pub blocks: usize,
    pub elements: usize,
    /// Reconstruction MSE against the original (unsparsified) tensor.
    pub mse: f64,
    pub max_abs_err: f64,
    /// Code bits plus amortized coefficient storage, per element.
    pub effective_bits: f64,
    pub mean_kappa: f64,
    pub max_kappa: f64,
    pub max_abs_delta: f64,
    pub degenerate_blocks: usize,
}

pub fn quantize_tensor(t: &Tensor, axis: usize, cfg: &QuantConfig) -> Result<(QuantizedTensor, QuantSummary)> {
    quantize_tensor_with(t, axis, cfg, None)
}

/// Quantize along `axis`, sparsifying each block first when `sparsity` is set.
///
/// Structured sparsity produces ternary blocks (`r = a*q`, `q` in {-1,0,1});
/// the other modes quantize the sparsified block with the full pipeline.
pub fn quantize_tensor_with(
    t: &Tensor,
    axis: usize,
    cfg: &QuantConfig,
    sparsity: Option<&SparsityConfig>,
) -> Result<(QuantizedTensor, QuantSummary)> {
    cfg.validate()?;
    if let Some(s) = sparsity {
        s.validate()?;
    }
    let layout = t.axis_layout(axis)?;
    let part = partition(layout.axis_len, cfg.block_size);

    let mut blocks = Vec::with_capacity(layout.lanes() * part.len());
    let mut masks = sparsity.map(|_| Vec::with_capacity(layout.lanes() * part.len()));
    let mut acc = SummaryAcc::default();

    for lane in 0..layout.lanes() {
        let values = t.lane(&layout, lane);
        for span in part.iter() {
            let x = &values[span.range()];
            let (block, kappa, max_delta, degenerate) = match sparsity {
                None => {
                    let (b, s) = quantize_block(x, cfg)?;
                    (b, s.kappa, s.max_abs_delta, s.degenerate)
                }
                Some(sp) => {
                    let (y, pattern) = sparsify(x, sp)?;
                    if let Some(m) = masks.as_mut() {
                        m.push(pattern.kept);
                    }
                    if sp.is_structured() {
                        ternary_block(&y, cfg)?
                    } else {
                        let (b, s) = quantize_block(&y, cfg)?;
                        (b, s.kappa, s.max_abs_delta, s.degenerate)
                    }
                }
            };
            acc.add(x, &block.reconstruct_f64(), kappa, max_delta, degenerate);
            blocks.push(block);
        }
    }

    let code_bits = match sparsity {
        Some(sp) if sp.is_structured() => bits_per_element(sp)?,
        _ => cfg.bits as f64,
    };
    let coeff_bits = coeff_bits(cfg.coeff_precision, sparsity.is_some_and(|s| s.is_structured()));
    let elements = t.len();
    let summary = QuantSummary {
        blocks: blocks.len(),
        elements,
        mse: acc.sse / elements as f64,
        max_abs_err: acc.max_abs_err,
        effective_bits: code_bits + coeff_bits as f64 * blocks.len() as f64 / elements as f64,
        mean_kappa: if acc.kappa_count > 0 { acc.kappa_sum / acc.kappa_count as f64 } else { 0.0 },
        max_kappa: acc.max_kappa,
        max_abs_delta: acc.max_abs_delta,
        degenerate_blocks: acc.degenerate,
    };
    let qt = QuantizedTensor {
        shape: t.shape().to_vec(),
        axis,
        config: *cfg,
        sparsity: sparsity.copied(),
        blocks,
        kept_masks: masks,
    };
    Ok((qt, summary))
}

/// Bits of stored coefficients per block. Ternary blocks keep only a scale.
pub fn coeff_bits(p: CoeffPrecision, ternary: bool) -> u32 {
    if ternary {
        p.coeff_bits() / 2
    } else {
        p.coeff_bits()
    }
}

fn ternary_block(y: &[f32], cfg: &QuantConfig) -> Result<(QuantizedBlock, f64, f64, bool)> {
    let t = ternarize(y, cfg.lambda)?;
    let scale = match cfg.coeff_precision {
        CoeffPrecision::Full => t.scale as f32,
        CoeffPrecision::E5m2 => e5m2_round(t.scale) as f32,
    };
    let codes = t.codes.iter().map(|&q| (q + 1) as u8).collect();
    let qq = t.codes.iter().map(|&q| (q as f64).powi(2)).sum::<f64>() / y.len() as f64;
    let kappa = if t.degenerate { 0.0 } else { 1.0 / (qq + cfg.lambda) };
    let block = QuantizedBlock { codes, coeffs: Coefficients::Full { scale, bias: -scale } };
    Ok((block, kappa, 0.0, t.degenerate))
}

#[derive(Default)]
struct SummaryAcc {
    sse: f64,
    max_abs_err: f64,
    kappa_sum: f64,
    kappa_count: usize,
    max_kappa: f64,
    max_abs_delta: f64,
    degenerate: usize,
}

impl SummaryAcc {
    fn add(&mut self, x: &[f32], r: &[f64], kappa: f64, max_delta: f64, degenerate: bool) {
        for (&xi, &ri) in x.iter().zip(r) {
            let e = ri - xi as f64;
            self.sse += e * e;
            self.max_abs_err = self.max_abs_err.max(e.abs());
        }
        if degenerate {
            self.degenerate += 1;
        } else {
            self.kappa_sum += kappa;
            self.kappa_count += 1;
            self.max_kappa = self.max_kappa.max(kappa);
        }
        self.max_abs_delta = self.max_abs_delta.max(max_delta);
    }
}

/// Shape check shared by the matrix helpers.
pub(crate) fn require_rank2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::ShapeMismatch(format!("{what} must be rank 2, got shape {:?}", t.shape()))),
    }
}
