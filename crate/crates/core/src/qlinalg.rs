//! Blockwise quantized matrix multiplication.
//!
//! The contraction axis of both operands is cut into the same spans. Each row
//! of `X` and each column of `W` carries its own `(a, b)` per span, so a span
//! contributes `r_X[i, s] . r_W[s, j]` to `Y[i, j]`. Two paths compute this:
//! [`fake_quant_matmul`] reconstructs and multiplies in floating point, and
//! [`integer_expand_matmul`] multiplies the integer codes and adds the three
//! rank-one corrections coming from the biases.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::{quantize_tensor, require_rank2, QuantSummary};
use crate::quantizer::{QuantConfig, QuantizedBlock};
use crate::tensor::{BlockPartition, Tensor};

/// A quantized 2-D operand. `axis` is the contraction dimension (1 for a left
/// operand blocked along its columns, 0 for a right operand blocked along
/// its rows). `blocks[v * partition.len() + s]` covers span `s` of vector `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub axis: usize,
    pub partition: BlockPartition,
    pub blocks: Vec<QuantizedBlock>,
}

impl QuantizedMatrix {
    /// Number of rows (axis 1) or columns (axis 0) carrying their own blocks.
    pub fn vectors(&self) -> usize {
        if self.axis == 1 {
            self.rows
        } else {
            self.cols
        }
    }

    pub fn contraction_len(&self) -> usize {
        self.partition.axis_len
    }

    pub fn block(&self, vector: usize, span: usize) -> &QuantizedBlock {
        &self.blocks[vector * self.partition.len() + span]
    }

    /// Reconstructed values as a dense matrix.
    pub fn dequantize(&self) -> Tensor {
        let mut data = vec![0.0f32; self.rows * self.cols];
        for v in 0..self.vectors() {
            for (s, span) in self.partition.iter().enumerate() {
                for (k, r) in self.block(v, s).dequantize().into_iter().enumerate() {
                    let idx = if self.axis == 1 {
                        v * self.cols + span.start + k
                    } else {
                        (span.start + k) * self.cols + v
                    };
                    data[idx] = r;
                }
            }
        }
        Tensor::new(vec![self.rows, self.cols], data).expect("dimensions are non-zero")
    }
}

/// Quantize a matrix with `axis` as its contraction dimension.
pub fn quantize_matrix(t: &Tensor, axis: usize, cfg: &QuantConfig) -> Result<(QuantizedMatrix, QuantSummary)> {
    let (rows, cols) = require_rank2(t, "operand")?;
    if axis > 1 {
        return Err(Error::ShapeMismatch(format!("matrix axis must be 0 or 1, got {axis}")));
    }
    let (qt, summary) = quantize_tensor(t, axis, cfg)?;
    let partition = qt.partition();
    Ok((QuantizedMatrix { rows, cols, axis, partition, blocks: qt.blocks }, summary))
}

/// Left operand of shape `[n, k]` or `[batch, n, k]`, flattened to rows.
fn flatten_lhs(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    match *x.shape() {
        [_, _] => Ok((x.clone(), x.shape()[..1].to_vec())),
        [b, n, k] => Ok((Tensor::new(vec![b * n, k], x.data().to_vec())?, vec![b, n])),
        _ => Err(Error::ShapeMismatch(format!("left operand must be rank 2 or 3, got {:?}", x.shape()))),
    }
}

/// Quantize `X` per row and `W` per column along the shared axis, then
/// multiply the reconstructions span by span. A leading batch dimension on
/// `X` is carried through to the output.
pub fn fake_quant_matmul(x: &Tensor, w: &Tensor, cfg_x: &QuantConfig, cfg_w: &QuantConfig) -> Result<Tensor> {
    let (x2, lead) = flatten_lhs(x)?;
    let (k, o) = require_rank2(w, "right operand")?;
    if x2.shape()[1] != k {
        return Err(Error::ShapeMismatch(format!(
            "inner dimensions differ: {:?} x {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (xq, _) = quantize_matrix(&x2, 1, cfg_x)?;
    let (wq, _) = quantize_matrix(w, 0, cfg_w)?;
    let y = fake_quant_product(&xq, &wq)?;
    let mut shape = lead;
    shape.push(o);
    Tensor::new(shape, y.into_data())
}

fn check_operands(xq: &QuantizedMatrix, wq: &QuantizedMatrix) -> Result<()> {
    if xq.axis != 1 || wq.axis != 0 {
        return Err(Error::ShapeMismatch("expected a row-blocked left and column-blocked right operand".into()));
    }
    if xq.cols != wq.rows {
        return Err(Error::ShapeMismatch(format!("inner dimensions differ: {} vs {}", xq.cols, wq.rows)));
    }
    Ok(())
}

/// Reconstruct-then-multiply on already quantized operands. The operands may
/// use different block sizes; the per-span sum follows the left partition.
pub fn fake_quant_product(xq: &QuantizedMatrix, wq: &QuantizedMatrix) -> Result<Tensor> {
    check_operands(xq, wq)?;
    let (n, o) = (xq.rows, wq.cols);
    let to_f64 = |m: &QuantizedMatrix| -> Vec<Vec<f64>> {
        (0..m.vectors())
            .map(|v| (0..m.partition.len()).flat_map(|s| m.block(v, s).reconstruct_f64()).collect())
            .collect()
    };
    let rx = to_f64(xq);
    let rw = to_f64(wq);
    let spans = &xq.partition.spans;
    let data: Vec<f32> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = &rx[i];
            let rw = &rw;
            (0..o).map(move |j| {
                let wj = &rw[j];
                spans
                    .iter()
                    .map(|sp| sp.range().map(|t| xi[t] * wj[t]).sum::<f64>())
                    .sum::<f64>() as f32
            })
        })
        .collect();
    Tensor::new(vec![n, o], data)
}

/// Integer path: per span, `Y += aX aW (QX QW) + bX aW (1 QW) + aX (QX 1) bW
/// + bX len bW`, with the code product and sums taken over integers.
pub fn integer_expand_matmul(xq: &QuantizedMatrix, wq: &QuantizedMatrix) -> Result<Tensor> {
    check_operands(xq, wq)?;
    if xq.partition != wq.partition {
        return Err(Error::PartitionMismatch(format!(
            "left blocks of {} vs right blocks of {}",
            xq.partition.block_size, wq.partition.block_size
        )));
    }
    let (n, o) = (xq.rows, wq.cols);
    let nb = xq.partition.len();
    let coeffs = |m: &QuantizedMatrix| -> Vec<(f64, f64, u64)> {
        m.blocks.iter().map(|b| (b.scale(), b.bias(), b.code_sum())).collect()
    };
    let cx = coeffs(xq);
    let cw = coeffs(wq);
    let data: Vec<f32> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let (cx, cw) = (&cx, &cw);
            (0..o).map(move |j| {
                let mut acc = 0.0f64;
                for (s, span) in xq.partition.iter().enumerate() {
                    let (ax, bx, sx) = cx[i * nb + s];
                    let (aw, bw, sw) = cw[j * nb + s];
                    let qq: u64 = xq
                        .block(i, s)
                        .codes
                        .iter()
                        .zip(&wq.block(j, s).codes)
                        .map(|(&p, &q)| p as u64 * q as u64)
                        .sum();
                    acc += ax * aw * qq as f64
                        + bx * aw * sw as f64
                        + ax * sx as f64 * bw
                        + bx * span.len as f64 * bw;
                }
                acc as f32
            })
        })
        .collect();
    Tensor::new(vec![n, o], data)
}

/// Plain f64-accumulated product used as the float reference.
pub fn float_matmul(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (n, k) = require_rank2(x, "left operand")?;
    let (k2, o) = require_rank2(w, "right operand")?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!("inner dimensions differ: {k} vs {k2}")));
    }
    let (xd, wd) = (x.data(), w.data());
    let data = (0..n)
        .flat_map(|i| (0..o).map(move |j| (0..k).map(|t| xd[i * k + t] as f64 * wd[t * o + j] as f64).sum::<f64>() as f32))
        .collect();
    Tensor::new(vec![n, o], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatmulReport {
    pub bits: u8,
    pub block_size: usize,
    pub lambda: f64,
    pub max_abs_err: f64,
    pub rel_frobenius_err: f64,
    pub effective_bits_x: f64,
    pub effective_bits_w: f64,
}

/// `(max |a - b|, ||a - b||_F / ||b||_F)`.
pub fn matmul_errors(y: &Tensor, reference: &Tensor) -> (f64, f64) {
    let (mut max, mut num, mut den) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in y.data().iter().zip(reference.data()) {
        let e = (a as f64 - b as f64).abs();
        max = max.max(e);
        num += e * e;
        den += (b as f64).powi(2);
    }
    let rel = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    (max, rel)
}

/// Quantize both operands with every `(bits, block size, lambda)` combination
/// and compare against the float product. Reports come back in grid order.
pub fn matmul_sweep(
    x: &Tensor,
    w: &Tensor,
    bits_list: &[u8],
    block_sizes: &[usize],
    lambdas: &[f64],
) -> Result<Vec<MatmulReport>> {
    let reference = float_matmul(x, w)?;
    let grid: Vec<QuantConfig> = bits_list
        .iter()
        .flat_map(|&b| {
            block_sizes
                .iter()
                .flat_map(move |&bs| lambdas.iter().map(move |&l| QuantConfig::with_bits(b).block_size(bs).lambda(l)))
        })
        .collect();
    for cfg in &grid {
        cfg.validate()?;
    }
    grid.par_iter()
        .map(|cfg| {
            let (xq, sx) = quantize_matrix(x, 1, cfg)?;
            let (wq, sw) = quantize_matrix(w, 0, cfg)?;
            let y = integer_expand_matmul(&xq, &wq)?;
            let (max_abs_err, rel_frobenius_err) = matmul_errors(&y, &reference);
            Ok(MatmulReport {
                bits: cfg.bits,
                block_size: cfg.block_size,
                lambda: cfg.lambda,
                max_abs_err,
                rel_frobenius_err,
                effective_bits_x: sx.effective_bits,
                effective_bits_w: sw.effective_bits,
            })
        })
        .collect()
}
