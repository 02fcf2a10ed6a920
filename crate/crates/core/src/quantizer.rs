//! Per-block quantization as a perturbed affine pipeline.
//!
//! A block `x` is scaled onto `[0, 2^bits - 1]` by min-max scaling, rounded
//! (the rounding residual `delta = q - f(x)` is the injected perturbation,
//! `|delta| <= 0.5`, never clipped), and reconstructed as `r = a*q + b` where
//! `(a, b)` solve the ridge problem
//!
//! ```text
//! min_{a,b}  1/(2N) ||a*q + b - x||^2 + lambda/2 * a^2
//! ```
//!
//! whose closed form is `a = Cov(x,q) / (Var(q) + lambda)`, `b = mean(x) - a*mean(q)`.
//! Large `lambda` collapses every block to its mean; `lambda = 0` with an
//! unperturbed `q` recovers `x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp8::{e5m2_decode, e5m2_encode};

pub const DEFAULT_BLOCK_SIZE: usize = 128;
pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Tie rule for values exactly halfway between two integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    HalfToEven,
    HalfAwayFromZero,
}

impl Rounding {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Rounding::HalfToEven => v.round_ties_even(),
            Rounding::HalfAwayFromZero => v.round(),
        }
    }
}

/// Storage precision of the per-block reconstruction coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoeffPrecision {
    /// Scale and bias as f32.
    #[default]
    Full,
    /// Scale and block mean rounded to float8 E5M2.
    E5m2,
}

impl CoeffPrecision {
    /// Bits spent on one block's (scale, offset) pair.
    pub fn coeff_bits(self) -> u32 {
        match self {
            CoeffPrecision::Full => 64,
            CoeffPrecision::E5m2 => 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub bits: u8,
    pub block_size: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub rounding: Rounding,
    pub coeff_precision: CoeffPrecision,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            bits: 4,
            block_size: DEFAULT_BLOCK_SIZE,
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
            rounding: Rounding::default(),
            coeff_precision: CoeffPrecision::default(),
        }
    }
}

impl QuantConfig {
    pub fn with_bits(bits: u8) -> Self {
        QuantConfig { bits, ..Default::default() }
    }

    pub fn block_size(mut self, block_size: usize) -> Self {
        self.block_size = block_size;
        self
    }

    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn coeff_precision(mut self, p: CoeffPrecision) -> Self {
        self.coeff_precision = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.bits) {
            return Err(Error::config(format!("bits must be in [1, 8], got {}", self.bits)));
        }
        if self.block_size == 0 {
            return Err(Error::config("block size must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be finite and > 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Largest code, `2^bits - 1`.
    pub fn max_code(&self) -> u32 {
        max_code(self.bits)
    }
}

#[inline]
pub fn max_code(bits: u8) -> u32 {
    (1u32 << bits) - 1
}

/// Output of the forward min-max transform.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineScaled {
    pub scaled: Vec<f64>,
    pub x_min: f64,
    pub x_max: f64,
    /// Index of the (first) minimum, used when differentiating through `x_min`.
    pub argmin: usize,
    pub argmax: usize,
}

impl AffineScaled {
    /// `(2^bits - 1) / (x_max - x_min + epsilon)`.
    pub fn slope(&self, bits: u8, epsilon: f64) -> f64 {
        max_code(bits) as f64 / (self.x_max - self.x_min + epsilon)
    }
}

/// `f(x) = (x - x_min) / (x_max - x_min + eps) * (2^bits - 1)`.
pub fn affine_forward(x: &[f64], bits: u8, epsilon: f64) -> Result<AffineScaled> {
    if x.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let (mut argmin, mut argmax) = (0, 0);
    for (i, &v) in x.iter().enumerate() {
        if v < x[argmin] {
            argmin = i;
        }
        if v > x[argmax] {
            argmax = i;
        }
    }
    let (x_min, x_max) = (x[argmin], x[argmax]);
    let slope = max_code(bits) as f64 / (x_max - x_min + epsilon);
    let scaled = x.iter().map(|&v| (v - x_min) * slope).collect();
    Ok(AffineScaled { scaled, x_min, x_max, argmin, argmax })
}

/// Round `scaled` to integers; returns `(q, delta)` with `q = scaled + delta`.
pub fn inject_perturbation(scaled: &[f64], rounding: Rounding) -> (Vec<f64>, Vec<f64>) {
    scaled
        .iter()
        .map(|&s| {
            let q = rounding.round(s);
            (q, q - s)
        })
        .unzip()
}

/// First and second moments entering the ridge solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub x_mean: f64,
    pub q_mean: f64,
    pub var_q: f64,
    pub cov_xq: f64,
}

impl Moments {
    pub fn of(x: &[f64], q: &[f64]) -> Moments {
        let n = x.len() as f64;
        let x_mean = x.iter().sum::<f64>() / n;
        let q_mean = q.iter().sum::<f64>() / n;
        let q_first = q[0];
        if q.iter().all(|&v| v == q_first) {
            // Exact zeros; the mean of a constant can differ from it by an ulp.
            return Moments { x_mean, q_mean: q_first, var_q: 0.0, cov_xq: 0.0 };
        }
        let (mut var, mut cov) = (0.0, 0.0);
        for (&xi, &qi) in x.iter().zip(q) {
            let dq = qi - q_mean;
            var += dq * dq;
            cov += (xi - x_mean) * dq;
        }
        Moments { x_mean, q_mean, var_q: var / n, cov_xq: cov / n }
    }
}

/// Closed-form ridge fit of `x ~ a*q + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub scale: f64,
    pub bias: f64,
    pub moments: Moments,
    /// `1 / (Var_q + lambda)`; zero for the degenerate case.
    pub kappa: f64,
    /// `Var_q + lambda == 0`: the scale is pinned to zero.
    pub degenerate: bool,
}

/// `a = Cov / (Var + lambda)`, with `a = 0` when the denominator vanishes.
#[inline]
pub fn ridge_scale(cov_xq: f64, var_q: f64, lambda: f64) -> f64 {
    let denom = var_q + lambda;
    if denom == 0.0 {
        0.0
    } else {
        cov_xq / denom
    }
}

pub fn ridge_solve(x: &[f64], q: &[f64], lambda: f64) -> Result<RidgeFit> {
    if x.is_empty() {
        return Err(Error::EmptyBlock);
    }
    if x.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "ridge inputs differ in length: {} vs {}",
            x.len(),
            q.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("lambda must be >= 0, got {lambda}")));
    }
    let moments = Moments::of(x, q);
    let denom = moments.var_q + lambda;
    let degenerate = denom == 0.0;
    let scale = ridge_scale(moments.cov_xq, moments.var_q, lambda);
    let kappa = if degenerate { 0.0 } else { 1.0 / denom };
    Ok(RidgeFit {
        scale,
        bias: moments.x_mean - scale * moments.q_mean,
        moments,
        kappa,
        degenerate,
    })
}

/// `1/(2N) ||a*q + b - x||^2 + lambda/2 * a^2`.
pub fn ridge_objective(x: &[f64], q: &[f64], a: f64, b: f64, lambda: f64) -> f64 {
    let n = x.len() as f64;
    let sse: f64 = x.iter().zip(q).map(|(&xi, &qi)| (a * qi + b - xi).powi(2)).sum();
    sse / (2.0 * n) + 0.5 * lambda * a * a
}

pub fn reconstruct(q: &[f64], a: f64, b: f64) -> Vec<f64> {
    q.iter().map(|&qi| a * qi + b).collect()
}

/// Stored reconstruction coefficients of one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Coefficients {
    Full { scale: f32, bias: f32 },
    /// E5M2 scale and block mean; the bias is recovered as
    /// `mean - scale * mean(q)` from the codes.
    E5m2 { scale: u8, mean: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedBlock {
    pub codes: Vec<u8>,
    pub coeffs: Coefficients,
}

impl QuantizedBlock {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code_mean(&self) -> f64 {
        self.codes.iter().map(|&c| c as f64).sum::<f64>() / self.codes.len() as f64
    }

    pub fn code_sum(&self) -> u64 {
        self.codes.iter().map(|&c| c as u64).sum()
    }

    pub fn scale(&self) -> f64 {
        match self.coeffs {
            Coefficients::Full { scale, .. } => scale as f64,
            Coefficients::E5m2 { scale, .. } => e5m2_decode(scale),
        }
    }

    pub fn bias(&self) -> f64 {
        match self.coeffs {
            Coefficients::Full { bias, .. } => bias as f64,
            Coefficients::E5m2 { scale, mean } => {
                e5m2_decode(mean) - e5m2_decode(scale) * self.code_mean()
            }
        }
    }

    /// `r = a*q + b` evaluated in f64.
    pub fn reconstruct_f64(&self) -> Vec<f64> {
        let (a, b) = (self.scale(), self.bias());
        self.codes.iter().map(|&c| a * c as f64 + b).collect()
    }

    pub fn dequantize(&self) -> Vec<f32> {
        self.reconstruct_f64().into_iter().map(|v| v as f32).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionStats {
    pub x_mean: f64,
    pub q_mean: f64,
    pub var_q: f64,
    pub cov_xq: f64,
    pub kappa: f64,
    /// Mean squared error of the stored reconstruction against the input.
    pub mse: f64,
    pub max_abs_delta: f64,
    pub degenerate: bool,
}

/// Full pipeline on one block: scale, round, ridge-fit, store coefficients.
pub fn quantize_block(x: &[f32], cfg: &QuantConfig) -> Result<(QuantizedBlock, ReconstructionStats)> {
    cfg.validate()?;
    let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let scaled = affine_forward(&xs, cfg.bits, cfg.epsilon)?;
    let (q, delta) = inject_perturbation(&scaled.scaled, cfg.rounding);
    let fit = ridge_solve(&xs, &q, cfg.lambda)?;

    let codes: Vec<u8> = q.iter().map(|&v| v as u8).collect();
    let coeffs = match cfg.coeff_precision {
        CoeffPrecision::Full => Coefficients::Full { scale: fit.scale as f32, bias: fit.bias as f32 },
        CoeffPrecision::E5m2 => Coefficients::E5m2 {
            scale: e5m2_encode(fit.scale),
            mean: e5m2_encode(fit.moments.x_mean),
        },
    };
    let block = QuantizedBlock { codes, coeffs };
    let mse = mse(x, &block.reconstruct_f64());
    let max_abs_delta = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let stats = ReconstructionStats {
        x_mean: fit.moments.x_mean,
        q_mean: fit.moments.q_mean,
        var_q: fit.moments.var_q,
        cov_xq: fit.moments.cov_xq,
        kappa: fit.kappa,
        mse,
        max_abs_delta,
        degenerate: fit.degenerate,
    };
    Ok((block, stats))
}

pub(crate) fn mse(x: &[f32], r: &[f64]) -> f64 {
    x.iter().zip(r).map(|(&xi, &ri)| (ri - xi as f64).powi(2)).sum::<f64>() / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference values from an independent 2x2 normal-equations solve of the
    // ridge objective for x = [1,2,3,4], q = [0,1,2,3], lambda = 0.01.
    const ORACLE_A: f64 = 0.992_063_492_063_492_3;
    const ORACLE_B: f64 = 1.011_904_761_904_761_6;
    const ORACLE_R: [f64; 4] =
        [1.011_904_761_904_761_6, 2.003_968_253_968_254, 2.996_031_746_031_746, 3.988_095_238_095_239];

    #[test]
    fn affine_forward_examples() {
        let s = affine_forward(&[0.0, 1.0], 2, 1e-12).unwrap();
        assert!((s.scaled[0] - 0.0).abs() < 1e-12 && (s.scaled[1] - 3.0).abs() < 1e-9);

        let c = affine_forward(&[2.5, 2.5, 2.5], 3, 1e-6).unwrap();
        assert_eq!(c.scaled, vec![0.0; 3]);

        let s = affine_forward(&[1.0, 2.0, 3.0, 4.0], 2, 1e-6).unwrap();
        let expect = [0.0, 0.999_999_666_666_777_8, 1.999_999_333_333_555_5, 2.999_999_000_000_333_4];
        for (got, want) in s.scaled.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert_eq!((s.argmin, s.argmax), (0, 3));
        assert!(matches!(affine_forward(&[], 2, 1e-6), Err(Error::EmptyBlock)));
    }

    #[test]
    fn inject_perturbation_examples() {
        let (q, d) = inject_perturbation(&[0.4, 2.6], Rounding::HalfToEven);
        assert_eq!(q, vec![0.0, 3.0]);
        assert!((d[0] + 0.4).abs() < 1e-12 && (d[1] - 0.4).abs() < 1e-12);

        let (q, d) = inject_perturbation(&[1.5, 2.5], Rounding::HalfToEven);
        assert_eq!(q, vec![2.0, 2.0]);
        assert_eq!(d, vec![0.5, -0.5]);
        let (q, _) = inject_perturbation(&[1.5, 2.5], Rounding::HalfAwayFromZero);
        assert_eq!(q, vec![2.0, 3.0]);

        let (_, d) = inject_perturbation(&[0.0, 1.0, 7.0], Rounding::HalfToEven);
        assert_eq!(d, vec![0.0; 3]);
    }

    #[test]
    fn ridge_solve_matches_oracle() {
        let fit = ridge_solve(&[1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 2.0, 3.0], 0.01).unwrap();
        assert!((fit.scale - ORACLE_A).abs() < 1e-12);
        assert!((fit.bias - ORACLE_B).abs() < 1e-12);
        assert!((fit.scale - 1.25 / 1.26).abs() < 1e-15);
        assert_eq!(fit.moments.var_q, 1.25);
        assert_eq!(fit.moments.cov_xq, 1.25);
        assert!((fit.kappa - 1.0 / 1.26).abs() < 1e-15);
        assert!(!fit.degenerate);

        let r = reconstruct(&[0.0, 1.0, 2.0, 3.0], fit.scale, fit.bias);
        for (got, want) in r.iter().zip(ORACLE_R) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn ridge_backbone_limit() {
        let x = [0.3, -1.7, 4.2, 0.9, 2.2];
        let q = [1.0, 0.0, 3.0, 1.0, 2.0];
        let fit = ridge_solve(&x, &q, 1e12).unwrap();
        let mean = x.iter().sum::<f64>() / 5.0;
        assert!(fit.scale.abs() <= 1e-9);
        assert!((fit.bias - mean).abs() <= 1e-6 * (1.0 + mean.abs()));
        let r = reconstruct(&q, 0.0, mean);
        assert!(r.iter().all(|&v| v == mean));
    }

    #[test]
    fn unperturbed_codes_recover_input() {
        let x = [0.25, -1.5, 3.0, 2.0, 0.0];
        let s = affine_forward(&x, 3, 1e-6).unwrap();
        let fit = ridge_solve(&x, &s.scaled, 0.0).unwrap();
        let r = reconstruct(&s.scaled, fit.scale, fit.bias);
        for (ri, xi) in r.iter().zip(x) {
            assert!((ri - xi).abs() < 1e-12);
        }
        let expected_scale = (s.x_max - s.x_min + 1e-6) / 7.0;
        assert!((fit.scale - expected_scale).abs() < 1e-12);
    }

    #[test]
    fn degenerate_block_falls_back_to_mean() {
        let fit = ridge_solve(&[2.0, 3.0, 4.0], &[1.0, 1.0, 1.0], 0.0).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.scale, 0.0);
        assert_eq!(fit.bias, 3.0);
        assert_eq!(fit.kappa, 0.0);
        assert!(ridge_solve(&[1.0], &[1.0, 2.0], 0.0).is_err());
        assert!(ridge_solve(&[1.0], &[1.0], -1.0).is_err());
    }

    #[test]
    fn quantize_block_worked_example() {
        let cfg = QuantConfig::with_bits(2).lambda(0.01).epsilon(1e-6);
        let (block, stats) = quantize_block(&[1.0, 2.0, 3.0, 4.0], &cfg).unwrap();
        assert_eq!(block.codes, vec![0, 1, 2, 3]);
        assert!((block.scale() - ORACLE_A).abs() < 1e-6);
        assert!((block.bias() - ORACLE_B).abs() < 1e-6);
        for (got, want) in block.reconstruct_f64().iter().zip(ORACLE_R) {
            assert!((got - want).abs() < 1e-5);
        }
        assert!(stats.max_abs_delta <= 0.5);
        assert!((stats.kappa - 1.0 / 1.26).abs() < 1e-12);
    }

    #[test]
    fn quantize_constant_block_is_exact() {
        for bits in 1..=8 {
            for lambda in [0.0, 0.01] {
                let cfg = QuantConfig::with_bits(bits).lambda(lambda);
                let (block, stats) = quantize_block(&[1.75; 9], &cfg).unwrap();
                assert!(block.codes.iter().all(|&c| c == 0));
                assert!(block.dequantize().iter().all(|&v| v == 1.75));
                assert_eq!(stats.mse, 0.0);
                assert_eq!(stats.degenerate, lambda == 0.0);
            }
        }
    }

    #[test]
    fn more_bits_never_worse_on_example() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let (_, s8) = quantize_block(&x, &QuantConfig::with_bits(8)).unwrap();
        let (_, s1) = quantize_block(&x, &QuantConfig::with_bits(1)).unwrap();
        assert!(s8.mse <= s1.mse);
    }

    #[test]
    fn e5m2_coefficients_round_trip_through_mean() {
        let x: Vec<f32> = (0..32).map(|i| ((i * 37 % 17) as f32 - 8.0) * 0.13).collect();
        let cfg = QuantConfig::with_bits(4).coeff_precision(CoeffPrecision::E5m2);
        let (block, stats) = quantize_block(&x, &cfg).unwrap();
        let Coefficients::E5m2 { scale, mean } = block.coeffs else { panic!("wrong storage") };
        assert_eq!(block.scale(), crate::fp8::e5m2_decode(scale));
        let expected_bias = crate::fp8::e5m2_decode(mean) - block.scale() * block.code_mean();
        assert_eq!(block.bias(), expected_bias);
        assert!(stats.mse.is_finite());
    }

    #[test]
    fn config_validation() {
        assert!(QuantConfig::default().validate().is_ok());
        assert!(QuantConfig::with_bits(0).validate().is_err());
        assert!(QuantConfig::with_bits(9).validate().is_err());
        assert!(QuantConfig::default().block_size(0).validate().is_err());
        assert!(QuantConfig::default().lambda(-0.1).validate().is_err());
        assert!(QuantConfig::default().epsilon(0.0).validate().is_err());
        let d = QuantConfig::default();
        assert_eq!((d.block_size, d.lambda, d.epsilon), (128, 0.01, 1e-6));
    }

    #[test]
    fn step_size_doubles_per_bit_removed() {
        let (lo, hi) = (-1.3f64, 2.9f64);
        for bits in 2..=8u8 {
            let step = |b: u8| (hi - lo) / 2f64.powi(b as i32);
            assert_eq!(step(bits - 1), 2.0 * step(bits));
        }
    }

    fn block_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..64).prop_flat_map(|n| {
            (prop::collection::vec(-100.0f64..100.0, n), prop::collection::vec(0u8..16, n))
        })
        .prop_map(|(x, q)| (x, q.into_iter().map(f64::from).collect()))
    }

    proptest! {
        #[test]
        fn perturbation_is_bounded(x in prop::collection::vec(-1e4f32..1e4, 1..300), bits in 1u8..=8) {
            let cfg = QuantConfig::with_bits(bits);
            let (block, stats) = quantize_block(&x, &cfg).unwrap();
            prop_assert!(stats.max_abs_delta <= 0.5 + 1e-7);
            prop_assert!(block.codes.iter().all(|&c| (c as u32) <= cfg.max_code()));
        }

        #[test]
        fn ridge_beats_random_candidates((x, q) in block_strategy(), lambda in 0.0f64..2.0, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let fit = ridge_solve(&x, &q, lambda).unwrap();
            let best = ridge_objective(&x, &q, fit.scale, fit.bias, lambda);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let a = fit.scale + rng.random_range(-5.0..5.0);
                let b = fit.bias + rng.random_range(-50.0..50.0);
                prop_assert!(best <= ridge_objective(&x, &q, a, b, lambda) * (1.0 + 1e-12) + 1e-12);
            }
        }

        #[test]
        fn data_fit_error_grows_with_lambda((x, q) in block_strategy()) {
            let mut prev = -1.0f64;
            for lambda in [0.0, 1e-4, 1e-2, 1.0, 100.0] {
                let fit = ridge_solve(&x, &q, lambda).unwrap();
                let err: f64 = reconstruct(&q, fit.scale, fit.bias).iter().zip(&x).map(|(r, xi)| (r - xi).powi(2)).sum();
                prop_assert!(err >= prev * (1.0 - 1e-12) - 1e-9);
                prev = err;
            }
        }

        #[test]
        fn scale_is_linear_in_covariance(cov in -50.0f64..50.0, var in 0.0f64..20.0, lambda in 1e-4f64..5.0, eta in -3.0f64..3.0) {
            let kappa = 1.0 / (var + lambda);
            let diff = ridge_scale(cov + eta, var, lambda) - ridge_scale(cov, var, lambda);
            prop_assert!(kappa <= 1.0 / lambda);
            let want = eta * kappa;
            prop_assert!((diff - want).abs() <= 1e-12 * want.abs().max(1e-300) + 1e-14 * (cov.abs() + eta.abs()) * kappa);
        }
    }
}
