//! Sparsification modeled as a perturbation `delta = H(x) - x`.
//!
//! Three hard-thresholding rules are provided: replace the elements closest
//! to the block mean by the mean, the multiplicative zero mask used as a
//! baseline, and M:N structured sparsity whose survivors are ternarized
//! (`q = sign(y)`) and reconstructed with a bias-free ridge scale.
//!
//! Every ranking is stable: among equal significance the lower index is
//! treated as less significant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SparsityConfig {
    /// Replace the `floor(fraction * N)` elements nearest the mean by the mean.
    TowardMean { fraction: f64 },
    /// Zero the `floor(fraction * N)` smallest-magnitude elements.
    ZeroMask { fraction: f64 },
    /// Keep `m` of every `n` consecutive elements by magnitude.
    Structured { m: usize, n: usize },
}

impl SparsityConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SparsityConfig::TowardMean { fraction } | SparsityConfig::ZeroMask { fraction } => {
                check_fraction(fraction)
            }
            SparsityConfig::Structured { m, n } => {
                if m == 0 || m > n {
                    Err(Error::config(format!("structured sparsity needs 1 <= m <= n, got {m}:{n}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn is_structured(&self) -> bool {
        matches!(self, SparsityConfig::Structured { .. })
    }

    pub(crate) fn mode_tag(&self) -> u8 {
        match self {
            SparsityConfig::TowardMean { .. } => 1,
            SparsityConfig::ZeroMask { .. } => 2,
            SparsityConfig::Structured { .. } => 3,
        }
    }
}

impl fmt::Display for SparsityConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SparsityConfig::TowardMean { fraction } => write!(f, "toward-mean:{fraction}"),
            SparsityConfig::ZeroMask { fraction } => write!(f, "zero:{fraction}"),
            SparsityConfig::Structured { m, n } => write!(f, "{m}:{n}"),
        }
    }
}

/// Accepts `toward-mean:F`, `zero:F` or `M:N`.
impl FromStr for SparsityConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, tail) = s
            .split_once(':')
            .ok_or_else(|| Error::config(format!("sparsity spec `{s}` is not MODE:FRACTION or M:N")))?;
        let frac = || {
            tail.parse::<f64>()
                .map_err(|_| Error::config(format!("bad sparsity fraction `{tail}`")))
        };
        let cfg = match head {
            "toward-mean" | "mean" => SparsityConfig::TowardMean { fraction: frac()? },
            "zero" | "zero-mask" => SparsityConfig::ZeroMask { fraction: frac()? },
            _ => {
                let m = head.parse().map_err(|_| Error::config(format!("bad M in `{s}`")))?;
                let n = tail.parse().map_err(|_| Error::config(format!("bad N in `{s}`")))?;
                SparsityConfig::Structured { m, n }
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if (0.0..=1.0).contains(&fraction) {
        Ok(())
    } else {
        Err(Error::config(format!("sparsity fraction must be in [0, 1], got {fraction}")))
    }
}

/// Number of elements a fraction selects out of `n`.
///
/// The small slack absorbs products such as `0.29 * 100 = 28.999999999999996`.
pub fn replaced_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 1e-9).floor() as usize).min(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityPattern {
    pub kept: Vec<bool>,
    /// Value written into removed positions.
    pub replaced_value: f32,
    /// `y - x`, zero wherever `kept`. Held in f64 so that `x + delta`
    /// reproduces `y` exactly.
    pub delta: Vec<f64>,
}

impl SparsityPattern {
    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn removed_count(&self) -> usize {
        self.kept.len() - self.kept_count()
    }
}

fn build(x: &[f32], removed: &[usize], value: f32) -> (Vec<f32>, SparsityPattern) {
    let mut y = x.to_vec();
    let mut kept = vec![true; x.len()];
    for &i in removed {
        y[i] = value;
        kept[i] = false;
    }
    let delta = x.iter().zip(&y).map(|(&xi, &yi)| yi as f64 - xi as f64).collect();
    (y, SparsityPattern { kept, replaced_value: value, delta })
}

/// Indices of the `count` least significant elements, ranked by `key`
/// ascending with ties going to the lower index.
fn least_significant(keys: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&i, &j| keys[i].total_cmp(&keys[j]).then(i.cmp(&j)));
    order.truncate(count);
    order
}

pub fn sparsify_toward_mean(x: &[f32], fraction: f64) -> Result<(Vec<f32>, SparsityPattern)> {
    check_fraction(fraction)?;
    if x.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64;
    let deviation: Vec<f64> = x.iter().map(|&v| (v as f64 - mean).abs()).collect();
    let removed = least_significant(&deviation, replaced_count(fraction, x.len()));
    Ok(build(x, &removed, mean as f32))
}

/// `y = x * 1[|x| > threshold]` with the threshold placed so that exactly
/// `floor(fraction * N)` elements are zeroed.
pub fn sparsify_zero_baseline(x: &[f32], fraction: f64) -> Result<(Vec<f32>, SparsityPattern)> {
    check_fraction(fraction)?;
    if x.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let magnitude: Vec<f64> = x.iter().map(|&v| (v as f64).abs()).collect();
    let removed = least_significant(&magnitude, replaced_count(fraction, x.len()));
    Ok(build(x, &removed, 0.0))
}

/// Number of survivors in a group of `len <= n` elements.
pub fn group_keep(m: usize, n: usize, len: usize) -> usize {
    if len == n {
        m
    } else {
        (m * len).div_ceil(n)
    }
}

/// Zero the `n - m` smallest-magnitude elements of every group of `n`. A
/// trailing group of `g < n` elements keeps `ceil(m * g / n)`.
pub fn sparsify_structured(x: &[f32], m: usize, n: usize) -> Result<(Vec<f32>, SparsityPattern)> {
    SparsityConfig::Structured { m, n }.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let mut removed = Vec::new();
    for (g, group) in x.chunks(n).enumerate() {
        let magnitude: Vec<f64> = group.iter().map(|&v| (v as f64).abs()).collect();
        let drop = group.len() - group_keep(m, n, group.len());
        removed.extend(least_significant(&magnitude, drop).into_iter().map(|i| g * n + i));
    }
    Ok(build(x, &removed, 0.0))
}

pub fn sparsify(x: &[f32], cfg: &SparsityConfig) -> Result<(Vec<f32>, SparsityPattern)> {
    match *cfg {
        SparsityConfig::TowardMean { fraction } => sparsify_toward_mean(x, fraction),
        SparsityConfig::ZeroMask { fraction } => sparsify_zero_baseline(x, fraction),
        SparsityConfig::Structured { m, n } => sparsify_structured(x, m, n),
    }
}

/// Sign codes with a bias-free ridge scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Ternary {
    pub codes: Vec<i8>,
    pub scale: f64,
    pub degenerate: bool,
}

impl Ternary {
    pub fn reconstruct(&self) -> Vec<f64> {
        self.codes.iter().map(|&q| self.scale * q as f64).collect()
    }
}

/// `q = sign(y)`, `a = mean(q*y) / (mean(q^2) + lambda)`.
pub fn ternarize(y: &[f32], lambda: f64) -> Result<Ternary> {
    if y.is_empty() {
        return Err(Error::EmptyBlock);
    }
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("lambda must be >= 0, got {lambda}")));
    }
    let codes: Vec<i8> = y
        .iter()
        .map(|&v| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 })
        .collect();
    let n = y.len() as f64;
    let qy = codes.iter().zip(y).map(|(&q, &v)| q as f64 * v as f64).sum::<f64>() / n;
    let qq = codes.iter().map(|&q| (q as f64).powi(2)).sum::<f64>() / n;
    let denom = qq + lambda;
    let degenerate = denom == 0.0;
    let scale = if degenerate { 0.0 } else { qy / denom };
    Ok(Ternary { codes, scale, degenerate })
}

/// Average storage per element for ternary M:N weights, excluding the
/// reconstruction coefficients.
///
/// For groups of four the survivor positions cost two bits each (0.5, 1.0
/// and 1.5 bits per element for 1:4, 2:4 and 3:4). Other shapes use
/// `log2(C(n, m)) / n + m / n`: an enumerative position code plus one sign
/// bit per survivor.
pub fn bits_per_element(cfg: &SparsityConfig) -> Result<f64> {
    cfg.validate()?;
    let SparsityConfig::Structured { m, n } = *cfg else {
        return Err(Error::config("bits per element is defined for structured sparsity only"));
    };
    if n == 4 && (1..=3).contains(&m) {
        return Ok(m as f64 * 2.0 / 4.0);
    }
    Ok(log2_binomial(n, m) / n as f64 + m as f64 / n as f64)
}

fn log2_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).log2()).sum()
}
