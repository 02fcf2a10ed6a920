//! Per-block quantizers with frozen noise and their exact backward passes.

use crate::error::Result;
use crate::quantizer::{affine_forward, max_code, Moments, QuantConfig};
use crate::sparsifier::{sparsify, SparsityConfig};

/// Forward state of the affine quantizer on one block.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCache {
    pub x: Vec<f64>,
    /// `f(x) + delta`.
    pub q: Vec<f64>,
    /// Frozen rounding residual.
    pub delta: Vec<f64>,
    /// `round(f(x))` at this input; equals `q` when the residual was not
    /// supplied from elsewhere.
    pub codes: Vec<f64>,
    pub r: Vec<f64>,
    pub x_mean: f64,
    pub q_mean: f64,
    pub scale: f64,
    /// `Var_q + lambda`.
    pub denom: f64,
    pub range: f64,
    pub slope: f64,
    pub argmin: usize,
    pub argmax: usize,
    pub degenerate: bool,
}

/// Quantize and reconstruct one block. With `frozen` the residual is taken
/// from a previous evaluation instead of the rounding at `x`.
pub fn affine_block(x: &[f64], cfg: &QuantConfig, frozen: Option<&[f64]>) -> Result<AffineCache> {
    let scaled = affine_forward(x, cfg.bits, cfg.epsilon)?;
    let codes: Vec<f64> = scaled.scaled.iter().map(|&f| cfg.rounding.round(f)).collect();
    let delta: Vec<f64> = match frozen {
        Some(d) => d.to_vec(),
        None => codes.iter().zip(&scaled.scaled).map(|(c, f)| c - f).collect(),
    };
    let q: Vec<f64> = scaled.scaled.iter().zip(&delta).map(|(f, d)| f + d).collect();
    let m = Moments::of(x, &q);
    let denom = m.var_q + cfg.lambda;
    let degenerate = denom == 0.0;
    let scale = if degenerate { 0.0 } else { m.cov_xq / denom };
    let r = q.iter().map(|&qi| scale * (qi - m.q_mean) + m.x_mean).collect();
    let range = scaled.x_max - scaled.x_min + cfg.epsilon;
    Ok(AffineCache {
        x: x.to_vec(),
        q,
        delta,
        codes,
        r,
        x_mean: m.x_mean,
        q_mean: m.q_mean,
        scale,
        denom,
        range,
        slope: max_code(cfg.bits) as f64 / range,
        argmin: scaled.argmin,
        argmax: scaled.argmax,
        degenerate,
    })
}

/// Gradient of `sum(g * r)` with respect to `x`, holding the residual fixed.
/// The min and max are differentiated through their arg positions.
pub fn affine_block_backward(c: &AffineCache, g: &[f64]) -> Vec<f64> {
    let n = c.x.len() as f64;
    let g_mean = g.iter().sum::<f64>() / n;
    let mut dx = vec![g_mean; c.x.len()];
    if c.degenerate {
        return dx;
    }
    let a = c.scale;
    let d_scale: f64 = g.iter().zip(&c.q).map(|(gi, qi)| gi * (qi - c.q_mean)).sum();
    let d_cov = d_scale / c.denom;
    let d_var = -d_scale * a / c.denom;

    let (mut d_min, mut d_max) = (0.0, 0.0);
    for j in 0..c.x.len() {
        let cq = c.q[j] - c.q_mean;
        let gq = a * (g[j] - g_mean) + d_cov * (c.x[j] - c.x_mean) / n + d_var * 2.0 * cq / n;
        dx[j] += d_cov * cq / n + c.slope * gq;
        let f = c.q[j] - c.delta[j];
        d_min += gq * (f / c.range - c.slope);
        d_max -= gq * f / c.range;
    }
    dx[c.argmin] += d_min;
    dx[c.argmax] += d_max;
    dx
}

/// Forward state of the bias-free sign quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct TernaryCache {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub scale: f64,
    /// `mean(q^2) + lambda`.
    pub denom: f64,
    pub degenerate: bool,
}

pub fn ternary_block(y: &[f64], lambda: f64, frozen: Option<&[f64]>) -> TernaryCache {
    let q: Vec<f64> = match frozen {
        Some(q) => q.to_vec(),
        None => y.iter().map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }).collect(),
    };
    let n = y.len() as f64;
    let qy = q.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
    let denom = q.iter().map(|v| v * v).sum::<f64>() / n + lambda;
    let degenerate = denom == 0.0;
    let scale = if degenerate { 0.0 } else { qy / denom };
    let r = q.iter().map(|v| scale * v).collect();
    TernaryCache { q, r, scale, denom, degenerate }
}

pub fn ternary_block_backward(c: &TernaryCache, g: &[f64]) -> Vec<f64> {
    if c.degenerate {
        return vec![0.0; g.len()];
    }
    let n = g.len() as f64;
    let gq = g.iter().zip(&c.q).map(|(a, b)| a * b).sum::<f64>() / (n * c.denom);
    c.q.iter().map(|qj| qj * gq).collect()
}

/// Sparsified block `y = x + delta` with the selection held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCache {
    pub mode: SparsityConfig,
    pub kept: Vec<bool>,
    pub delta: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn sparse_block(x: &[f64], mode: &SparsityConfig, frozen: Option<&SparseCache>) -> Result<SparseCache> {
    let kept = match frozen {
        Some(c) => c.kept.clone(),
        None => {
            let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            sparsify(&xf, mode)?.1.kept
        }
    };
    let y: Vec<f64> = match (mode, frozen) {
        (SparsityConfig::ZeroMask { .. }, _) => x.iter().zip(&kept).map(|(&v, &k)| if k { v } else { 0.0 }).collect(),
        (_, Some(c)) => x.iter().zip(&c.delta).map(|(v, d)| v + d).collect(),
        (SparsityConfig::TowardMean { .. }, None) => {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().zip(&kept).map(|(&v, &k)| if k { v } else { mean }).collect()
        }
        (SparsityConfig::Structured { .. }, None) => {
            x.iter().zip(&kept).map(|(&v, &k)| if k { v } else { 0.0 }).collect()
        }
    };
    let delta = y.iter().zip(x).map(|(a, b)| a - b).collect();
    Ok(SparseCache { mode: *mode, kept, delta, y })
}

/// Zero-mask sparsity passes gradient only through survivors; the other
/// modes add a frozen offset and pass it unchanged.
pub fn sparse_block_backward(c: &SparseCache, g: &[f64]) -> Vec<f64> {
    match c.mode {
        SparsityConfig::ZeroMask { .. } => g.iter().zip(&c.kept).map(|(&v, &k)| if k { v } else { 0.0 }).collect(),
        _ => g.to_vec(),
    }
}
