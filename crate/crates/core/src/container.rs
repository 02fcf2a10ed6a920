//! `DQZ1`: on-disk form of a [`QuantizedTensor`].
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "DQZ1"
//! u8 bits | u8 rounding | u8 coeff precision | u8 sparsity mode (0 none,
//!     1 toward-mean, 2 zero mask, 3 structured)
//! u64 block size | f64 lambda | f64 epsilon
//! f64 sparsity fraction | u32 m | u32 n
//! u32 rank | rank x u64 dims | u32 axis
//! u64 block count | per block: u64 lane, u32 start, u32 len
//! u64 byte count | codes
//! [sparsity section]
//! per block coefficients
//! ```
//!
//! Dense and unstructured blocks pack their codes at the next of 1/2/4/8
//! bits. Structured blocks store only one sign bit per survivor (1 = negative)
//! and the sparsity section holds the survivor positions of every group,
//! `ceil(log2 n)` bits each, followed by a u64 count and u32 positions of
//! survivors whose value was exactly zero. Unstructured sparsity stores a
//! one-bit-per-element kept mask.
//!
//! Coefficients are `(scale, bias)` as f32 or `(scale, mean)` as E5M2 bytes;
//! ternary blocks store the scale alone.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::bitpack::{packed_len, slot_width, BitReader, BitWriter};
use crate::error::{Error, Result};
use crate::fp8::{e5m2_decode, e5m2_encode};
use crate::pipeline::QuantizedTensor;
use crate::quantizer::{CoeffPrecision, Coefficients, QuantConfig, QuantizedBlock, Rounding};
use crate::sparsifier::{group_keep, SparsityConfig};
use crate::tensor::{element_count, partition, AxisLayout, ByteCursor};

pub const QUANT_MAGIC: &[u8; 4] = b"DQZ1";

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

fn index_width(n: usize) -> u8 {
    (usize::BITS - (n.max(2) - 1).leading_zeros()) as u8
}

impl QuantizedTensor {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        QuantizedTensor::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(QUANT_MAGIC);
        out.push(cfg.bits);
        out.push(match cfg.rounding {
            Rounding::HalfToEven => 0,
            Rounding::HalfAwayFromZero => 1,
        });
        out.push(match cfg.coeff_precision {
            CoeffPrecision::Full => 0,
            CoeffPrecision::E5m2 => 1,
        });
        out.push(self.sparsity.map_or(0, |s| s.mode_tag()));
        out.extend_from_slice(&(cfg.block_size as u64).to_le_bytes());
        out.extend_from_slice(&cfg.lambda.to_le_bytes());
        out.extend_from_slice(&cfg.epsilon.to_le_bytes());
        let (fraction, m, n) = match self.sparsity {
            Some(SparsityConfig::TowardMean { fraction }) | Some(SparsityConfig::ZeroMask { fraction }) => {
                (fraction, 0, 0)
            }
            Some(SparsityConfig::Structured { m, n }) => (0.0, m as u32, n as u32),
            None => (0.0, 0, 0),
        };
        out.extend_from_slice(&fraction.to_le_bytes());
        out.extend_from_slice(&m.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.axis as u32).to_le_bytes());

        let layout = self.layout();
        let part = self.partition();
        out.extend_from_slice(&(self.blocks.len() as u64).to_le_bytes());
        for lane in 0..layout.lanes() {
            for span in part.iter() {
                out.extend_from_slice(&(lane as u64).to_le_bytes());
                out.extend_from_slice(&(span.start as u32).to_le_bytes());
                out.extend_from_slice(&(span.len as u32).to_le_bytes());
            }
        }

        let ternary = self.is_ternary();
        let masks = self.kept_masks.as_deref().unwrap_or(&[]);
        let codes = if ternary {
            let mut w = BitWriter::new();
            for (block, mask) in self.blocks.iter().zip(masks) {
                for (&c, &k) in block.codes.iter().zip(mask) {
                    if k {
                        w.push(u32::from(c == 0), 1);
                    }
                }
            }
            w.finish()
        } else {
            let width = slot_width(cfg.bits);
            let mut w = BitWriter::new();
            for block in &self.blocks {
                for &c in &block.codes {
                    w.push(c as u32, width);
                }
            }
            w.finish()
        };
        write_section(&mut out, &codes);

        match self.sparsity {
            None => {}
            Some(SparsityConfig::Structured { n, .. }) => {
                let width = index_width(n);
                let mut w = BitWriter::new();
                let mut zeros = Vec::new();
                let mut flat = 0usize;
                for (block, mask) in self.blocks.iter().zip(masks) {
                    for (g, group) in mask.chunks(n).enumerate() {
                        for (i, _) in group.iter().enumerate().filter(|(_, &k)| k) {
                            w.push(i as u32, width);
                            if block.codes[g * n + i] == 1 {
                                zeros.push((flat + g * n + i) as u32);
                            }
                        }
                    }
                    flat += block.len();
                }
                write_section(&mut out, &w.finish());
                out.extend_from_slice(&(zeros.len() as u64).to_le_bytes());
                for z in zeros {
                    out.extend_from_slice(&z.to_le_bytes());
                }
            }
            Some(_) => {
                let mut w = BitWriter::new();
                for &k in masks.iter().flatten() {
                    w.push(u32::from(k), 1);
                }
                write_section(&mut out, &w.finish());
            }
        }

        for block in &self.blocks {
            match (block.coeffs, ternary) {
                (Coefficients::Full { scale, .. }, true) => match cfg.coeff_precision {
                    CoeffPrecision::Full => out.extend_from_slice(&scale.to_le_bytes()),
                    CoeffPrecision::E5m2 => out.push(e5m2_encode(scale as f64)),
                },
                (Coefficients::Full { scale, bias }, false) => {
                    out.extend_from_slice(&scale.to_le_bytes());
                    out.extend_from_slice(&bias.to_le_bytes());
                }
                (Coefficients::E5m2 { scale, mean }, _) => {
                    out.push(scale);
                    out.push(mean);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        let eof = |what: &str| malformed(format!("truncated before {what}"));
        if cur.take(4) != Some(QUANT_MAGIC.as_slice()) {
            return Err(malformed("bad magic, expected DQZ1"));
        }
        let bits = cur.u8().ok_or_else(|| eof("bits"))?;
        let rounding = match cur.u8().ok_or_else(|| eof("rounding"))? {
            0 => Rounding::HalfToEven,
            1 => Rounding::HalfAwayFromZero,
            v => return Err(malformed(format!("unknown rounding tag {v}"))),
        };
        let coeff_precision = match cur.u8().ok_or_else(|| eof("coefficient precision"))? {
            0 => CoeffPrecision::Full,
            1 => CoeffPrecision::E5m2,
            v => return Err(malformed(format!("unknown coefficient precision tag {v}"))),
        };
        let mode = cur.u8().ok_or_else(|| eof("sparsity mode"))?;
        let block_size = cur.u64().ok_or_else(|| eof("block size"))? as usize;
        let lambda = cur.f64().ok_or_else(|| eof("lambda"))?;
        let epsilon = cur.f64().ok_or_else(|| eof("epsilon"))?;
        let fraction = cur.f64().ok_or_else(|| eof("sparsity fraction"))?;
        let m = cur.u32().ok_or_else(|| eof("m"))? as usize;
        let n = cur.u32().ok_or_else(|| eof("n"))? as usize;
        let config = QuantConfig { bits, block_size, lambda, epsilon, rounding, coeff_precision };
        config.validate().map_err(|e| malformed(e.to_string()))?;
        let sparsity = match mode {
            0 => None,
            1 => Some(SparsityConfig::TowardMean { fraction }),
            2 => Some(SparsityConfig::ZeroMask { fraction }),
            3 => Some(SparsityConfig::Structured { m, n }),
            v => return Err(malformed(format!("unknown sparsity mode {v}"))),
        };
        if let Some(s) = &sparsity {
            s.validate().map_err(|e| malformed(e.to_string()))?;
        }

        let rank = cur.u32().ok_or_else(|| eof("rank"))? as usize;
        let mut shape = Vec::with_capacity(rank.min(64));
        for _ in 0..rank {
            let d = cur.u64().ok_or_else(|| eof("dimensions"))? as usize;
            if d == 0 {
                return Err(malformed("zero-sized dimension"));
            }
            shape.push(d);
        }
        let total = element_count(&shape).ok_or_else(|| malformed("element count overflows"))?;
        let axis = cur.u32().ok_or_else(|| eof("axis"))? as usize;
        let layout = AxisLayout::new(&shape, axis).map_err(|e| malformed(e.to_string()))?;
        let part = partition(layout.axis_len, block_size);

        let block_count = cur.u64().ok_or_else(|| eof("block count"))? as usize;
        if block_count != layout.lanes() * part.len() {
            return Err(malformed(format!(
                "block table has {block_count} entries, layout needs {}",
                layout.lanes() * part.len()
            )));
        }
        let mut lens = Vec::with_capacity(block_count);
        for lane in 0..layout.lanes() {
            for span in part.iter() {
                let l = cur.u64().ok_or_else(|| eof("block table"))? as usize;
                let s = cur.u32().ok_or_else(|| eof("block table"))? as usize;
                let len = cur.u32().ok_or_else(|| eof("block table"))? as usize;
                if (l, s, len) != (lane, span.start, span.len) {
                    return Err(malformed(format!("block table entry ({l}, {s}, {len}) out of order")));
                }
                lens.push(len);
            }
        }

        let code_bytes = read_section(&mut cur, "codes")?;
        let ternary = sparsity.is_some_and(|s| s.is_structured());
        let mut masks: Option<Vec<Vec<bool>>> = None;
        let mut codes: Vec<Vec<u8>> = Vec::with_capacity(block_count);

        if ternary {
            let Some(SparsityConfig::Structured { m, n }) = sparsity else { unreachable!() };
            let width = index_width(n);
            let idx_bytes = read_section(&mut cur, "survivor positions")?;
            let mut idx = BitReader::new(idx_bytes);
            let mut signs = BitReader::new(code_bytes);
            let mut all_masks = Vec::with_capacity(block_count);
            for &len in &lens {
                let mut mask = vec![false; len];
                let mut block = vec![1u8; len];
                for (g, start) in (0..len).step_by(n).enumerate() {
                    let glen = n.min(len - start);
                    let mut last: Option<usize> = None;
                    for _ in 0..group_keep(m, n, glen) {
                        let i = idx.pull(width).ok_or_else(|| eof("survivor positions"))? as usize;
                        if i >= glen || last.is_some_and(|p| i <= p) {
                            return Err(malformed(format!("bad survivor position {i} in group {g}")));
                        }
                        last = Some(i);
                        mask[start + i] = true;
                        let neg = signs.pull(1).ok_or_else(|| eof("sign bits"))?;
                        block[start + i] = if neg == 1 { 0 } else { 2 };
                    }
                }
                codes.push(block);
                all_masks.push(mask);
            }
            let zero_count = cur.u64().ok_or_else(|| eof("zero survivors"))? as usize;
            for _ in 0..zero_count {
                let pos = cur.u32().ok_or_else(|| eof("zero survivors"))? as usize;
                let (b, i) = locate(&lens, pos).ok_or_else(|| malformed("zero survivor out of range"))?;
                if !all_masks[b][i] {
                    return Err(malformed("zero survivor is not a kept position"));
                }
                codes[b][i] = 1;
            }
            masks = Some(all_masks);
        } else {
            let width = slot_width(bits);
            if code_bytes.len() != packed_len(total, width) {
                return Err(Error::LengthMismatch {
                    expected: packed_len(total, width),
                    found: code_bytes.len(),
                });
            }
            let max = config.max_code();
            let mut r = BitReader::new(code_bytes);
            for &len in &lens {
                let mut block = Vec::with_capacity(len);
                for _ in 0..len {
                    let c = r.pull(width).ok_or_else(|| eof("codes"))?;
                    if c > max {
                        return Err(malformed(format!("code {c} exceeds {max}")));
                    }
                    block.push(c as u8);
                }
                codes.push(block);
            }
            if sparsity.is_some() {
                let mask_bytes = read_section(&mut cur, "kept mask")?;
                let mut r = BitReader::new(mask_bytes);
                let mut all = Vec::with_capacity(block_count);
                for &len in &lens {
                    let mask = (0..len)
                        .map(|_| r.pull(1).map(|b| b == 1))
                        .collect::<Option<Vec<bool>>>()
                        .ok_or_else(|| eof("kept mask"))?;
                    all.push(mask);
                }
                masks = Some(all);
            }
        }

        let mut blocks = Vec::with_capacity(block_count);
        for block_codes in codes {
            let coeffs = match (coeff_precision, ternary) {
                (CoeffPrecision::Full, true) => {
                    let scale = cur.f32().ok_or_else(|| eof("coefficients"))?;
                    Coefficients::Full { scale, bias: -scale }
                }
                (CoeffPrecision::E5m2, true) => {
                    let scale = e5m2_decode(cur.u8().ok_or_else(|| eof("coefficients"))?) as f32;
                    Coefficients::Full { scale, bias: -scale }
                }
                (CoeffPrecision::Full, false) => Coefficients::Full {
                    scale: cur.f32().ok_or_else(|| eof("coefficients"))?,
                    bias: cur.f32().ok_or_else(|| eof("coefficients"))?,
                },
                (CoeffPrecision::E5m2, false) => Coefficients::E5m2 {
                    scale: cur.u8().ok_or_else(|| eof("coefficients"))?,
                    mean: cur.u8().ok_or_else(|| eof("coefficients"))?,
                },
            };
            blocks.push(QuantizedBlock { codes: block_codes, coeffs });
        }
        if !cur.is_at_end() {
            return Err(malformed("trailing bytes after coefficients"));
        }
        Ok(QuantizedTensor { shape, axis, config, sparsity, blocks, kept_masks: masks })
    }
}

fn write_section(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn read_section<'a>(cur: &mut ByteCursor<'a>, what: &str) -> Result<&'a [u8]> {
    let len = cur.u64().ok_or_else(|| malformed(format!("truncated before {what}")))? as usize;
    cur.take(len).ok_or_else(|| malformed(format!("truncated {what}")))
}

/// Map a flat position over concatenated blocks to (block, offset).
fn locate(lens: &[usize], mut pos: usize) -> Option<(usize, usize)> {
    for (b, &len) in lens.iter().enumerate() {
        if pos < len {
            return Some((b, pos));
        }
        pos -= len;
    }
    None
}
