use crate::error::{Error, Result};
use crate::quantizer::{QuantConfig, DEFAULT_BLOCK_SIZE};
use crate::sparsifier::SparsityConfig;
use crate::tensor::partition;

use super::matrix::Matrix;
use super::surrogate::{
    affine_block, affine_block_backward, sparse_block, sparse_block_backward, ternary_block, ternary_block_backward,
    AffineCache, SparseCache, TernaryCache,
};

/// Quantization runs identically in both modes; training mode also keeps
/// what the backward pass needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockQuant {
    Affine(AffineCache),
    Ternary(TernaryCache),
}

/// One block of one weight column.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBlock {
    pub sparse: Option<SparseCache>,
    pub quant: Option<BlockQuant>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub input: Matrix,
    /// Reconstructed activations (the input itself when unquantized).
    pub act_hat: Matrix,
    pub weight_hat: Matrix,
    /// Row-major: all blocks of row 0, then row 1, and so on.
    pub act_blocks: Vec<AffineCache>,
    /// Column-major: all blocks of column 0, then column 1.
    pub weight_blocks: Vec<WeightBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub input: Matrix,
}

/// `y = Q(x) . Q(S(W)) + bias` with `W` stored `in x out`. Activations are
/// blocked along each row and weights along each column, so both operands
/// are blocked along the contraction axis.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    /// `None` keeps the weights in floating point.
    pub weight_cfg: Option<QuantConfig>,
    pub act_cfg: Option<QuantConfig>,
    pub sparsity: Option<SparsityConfig>,
    cache: Option<ForwardCache>,
}

impl QuantLinearLayer {
    pub fn new(
        weight: Matrix,
        bias: Vec<f64>,
        weight_cfg: Option<QuantConfig>,
        act_cfg: Option<QuantConfig>,
        sparsity: Option<SparsityConfig>,
    ) -> Result<Self> {
        if bias.len() != weight.cols {
            return Err(Error::ShapeMismatch(format!(
                "bias of {} for {} outputs",
                bias.len(),
                weight.cols
            )));
        }
        for cfg in weight_cfg.iter().chain(&act_cfg) {
            cfg.validate()?;
        }
        if let Some(s) = &sparsity {
            s.validate()?;
        }
        Ok(QuantLinearLayer { weight, bias, weight_cfg, act_cfg, sparsity, cache: None })
    }

    pub fn in_features(&self) -> usize {
        self.weight.rows
    }

    pub fn out_features(&self) -> usize {
        self.weight.cols
    }

    pub fn cache(&self) -> Option<&ForwardCache> {
        self.cache.as_ref()
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        let (y, cache) = self.evaluate(x, None)?;
        self.cache = match mode {
            Mode::Train => Some(cache),
            Mode::Eval => None,
        };
        Ok(y)
    }

    /// Forward with every rounding residual and sparsity selection taken from
    /// `frozen`. This is the smooth map whose gradient `backward` returns.
    pub fn forward_frozen(&self, x: &Matrix, frozen: &ForwardCache) -> Result<Matrix> {
        Ok(self.evaluate(x, Some(frozen))?.0)
    }

    fn evaluate(&self, x: &Matrix, frozen: Option<&ForwardCache>) -> Result<(Matrix, ForwardCache)> {
        if x.cols != self.weight.rows {
            return Err(Error::ShapeMismatch(format!(
                "input has {} features, layer expects {}",
                x.cols, self.weight.rows
            )));
        }
        let (act_hat, act_blocks) = match &self.act_cfg {
            Some(cfg) => quantize_rows(x, cfg, frozen.map(|f| f.act_blocks.as_slice()))?,
            None => (x.clone(), Vec::new()),
        };
        let (weight_hat, weight_blocks) = self.quantize_weight(frozen.map(|f| f.weight_blocks.as_slice()))?;
        let mut y = act_hat.matmul(&weight_hat)?;
        for r in 0..y.rows {
            for (c, b) in self.bias.iter().enumerate() {
                y.data[r * y.cols + c] += b;
            }
        }
        let cache = ForwardCache { input: x.clone(), act_hat, weight_hat, act_blocks, weight_blocks };
        Ok((y, cache))
    }

    fn weight_block_size(&self) -> usize {
        self.weight_cfg.map_or(DEFAULT_BLOCK_SIZE, |c| c.block_size)
    }

    fn quantize_weight(&self, frozen: Option<&[WeightBlock]>) -> Result<(Matrix, Vec<WeightBlock>)> {
        if self.weight_cfg.is_none() && self.sparsity.is_none() {
            return Ok((self.weight.clone(), Vec::new()));
        }
        let part = partition(self.weight.rows, self.weight_block_size());
        let mut hat = Matrix::zeros(self.weight.rows, self.weight.cols);
        let mut blocks = Vec::with_capacity(self.weight.cols * part.len());
        for c in 0..self.weight.cols {
            let column = self.weight.column(c);
            let mut out = Vec::with_capacity(column.len());
            for (s, span) in part.iter().enumerate() {
                let prev = frozen.map(|f| &f[c * part.len() + s]);
                let x = &column[span.range()];
                let sparse = match &self.sparsity {
                    Some(sp) => Some(sparse_block(x, sp, prev.and_then(|p| p.sparse.as_ref()))?),
                    None => None,
                };
                let y = sparse.as_ref().map_or(x, |s| s.y.as_slice());
                let quant = match (&self.weight_cfg, &self.sparsity) {
                    (None, _) => None,
                    (Some(cfg), Some(sp)) if sp.is_structured() => {
                        let fq = match prev.and_then(|p| p.quant.as_ref()) {
                            Some(BlockQuant::Ternary(t)) => Some(t.q.as_slice()),
                            _ => None,
                        };
                        Some(BlockQuant::Ternary(ternary_block(y, cfg.lambda, fq)))
                    }
                    (Some(cfg), _) => {
                        let fd = match prev.and_then(|p| p.quant.as_ref()) {
                            Some(BlockQuant::Affine(a)) => Some(a.delta.as_slice()),
                            _ => None,
                        };
                        Some(BlockQuant::Affine(affine_block(y, cfg, fd)?))
                    }
                };
                match &quant {
                    Some(BlockQuant::Affine(a)) => out.extend_from_slice(&a.r),
                    Some(BlockQuant::Ternary(t)) => out.extend_from_slice(&t.r),
                    None => out.extend_from_slice(y),
                }
                blocks.push(WeightBlock { sparse, quant });
            }
            hat.set_column(c, &out);
        }
        Ok((hat, blocks))
    }

    /// Gradients of `sum(upstream * y)` for the last training-mode forward.
    pub fn backward(&self, upstream: &Matrix) -> Result<LayerGrads> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache)?;
        if upstream.rows != cache.input.rows || upstream.cols != self.weight.cols {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient is {}x{}, output is {}x{}",
                upstream.rows, upstream.cols, cache.input.rows, self.weight.cols
            )));
        }
        let d_weight_hat = cache.act_hat.transpose().matmul(upstream)?;
        let d_act_hat = upstream.matmul(&cache.weight_hat.transpose())?;
        let bias = (0..upstream.cols).map(|c| upstream.column(c).iter().sum()).collect();

        let input = match &self.act_cfg {
            Some(cfg) => rows_backward(&d_act_hat, cfg.block_size, &cache.act_blocks),
            None => d_act_hat,
        };
        let weight = if cache.weight_blocks.is_empty() {
            d_weight_hat
        } else {
            let part = partition(self.weight.rows, self.weight_block_size());
            let mut dw = Matrix::zeros(self.weight.rows, self.weight.cols);
            for c in 0..self.weight.cols {
                let g = d_weight_hat.column(c);
                let mut out = Vec::with_capacity(g.len());
                for (s, span) in part.iter().enumerate() {
                    let block = &cache.weight_blocks[c * part.len() + s];
                    let g = &g[span.range()];
                    let dy = match &block.quant {
                        Some(BlockQuant::Affine(a)) => affine_block_backward(a, g),
                        Some(BlockQuant::Ternary(t)) => ternary_block_backward(t, g),
                        None => g.to_vec(),
                    };
                    match &block.sparse {
                        Some(sp) => out.extend(sparse_block_backward(sp, &dy)),
                        None => out.extend(dy),
                    }
                }
                dw.set_column(c, &out);
            }
            dw
        };
        Ok(LayerGrads { weight, bias, input })
    }
}

fn quantize_rows(x: &Matrix, cfg: &QuantConfig, frozen: Option<&[AffineCache]>) -> Result<(Matrix, Vec<AffineCache>)> {
    let part = partition(x.cols, cfg.block_size);
    let mut hat = Matrix::zeros(x.rows, x.cols);
    let mut blocks = Vec::with_capacity(x.rows * part.len());
    for r in 0..x.rows {
        for (s, span) in part.iter().enumerate() {
            let fd = frozen.map(|f| f[r * part.len() + s].delta.as_slice());
            let c = affine_block(&x.row(r)[span.range()], cfg, fd)?;
            hat.data[r * x.cols + span.start..r * x.cols + span.start + span.len].copy_from_slice(&c.r);
            blocks.push(c);
        }
    }
    Ok((hat, blocks))
}

fn rows_backward(g: &Matrix, block_size: usize, blocks: &[AffineCache]) -> Matrix {
    let part = partition(g.cols, block_size);
    let mut out = Matrix::zeros(g.rows, g.cols);
    for r in 0..g.rows {
        for (s, span) in part.iter().enumerate() {
            let dx = affine_block_backward(&blocks[r * part.len() + s], &g.row(r)[span.range()]);
            out.data[r * g.cols + span.start..r * g.cols + span.start + span.len].copy_from_slice(&dx);
        }
    }
    out
}
