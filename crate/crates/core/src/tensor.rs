//! Dense f32 tensors, contraction-axis block partitioning and the `DQT1`
//! container.
//!
//! Layout of a `DQT1` file (all little-endian):
//!
//! ```text
//! "DQT1" | u32 rank | rank x u64 dims | prod(dims) x f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"DQT1";

/// Row-major dense tensor of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if let Some(axis) = shape.iter().position(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!("dimension {axis} has size 0")));
        }
        let expected = element_count(&shape)
            .ok_or_else(|| Error::ShapeMismatch("element count overflows usize".into()))?;
        if expected != data.len() {
            return Err(Error::LengthMismatch { expected, found: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = element_count(&shape)
            .ok_or_else(|| Error::ShapeMismatch("element count overflows usize".into()))?;
        Tensor::new(shape, vec![0.0; n])
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: f32) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Index of the first NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    /// Describe how `axis` splits this tensor into independent lanes.
    pub fn axis_layout(&self, axis: usize) -> Result<AxisLayout> {
        AxisLayout::new(&self.shape, axis)
    }

    /// Copy out lane `lane` along `axis`.
    pub fn lane(&self, layout: &AxisLayout, lane: usize) -> Vec<f32> {
        (0..layout.axis_len).map(|k| self.data[layout.offset(lane, k)]).collect()
    }

    pub fn set_lane(&mut self, layout: &AxisLayout, lane: usize, values: &[f32]) {
        debug_assert_eq!(values.len(), layout.axis_len);
        for (k, &v) in values.iter().enumerate() {
            let off = layout.offset(lane, k);
            self.data[off] = v;
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Tensor::read_from(&mut r)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * self.data.len().min(1 << 16));
        for chunk in self.data.chunks(1 << 16) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Parse a complete `DQT1` stream. Trailing bytes are a length error.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Tensor::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        let magic = cur.take(4).ok_or_else(|| header("file shorter than magic"))?;
        if magic != TENSOR_MAGIC {
            return Err(header("bad magic, expected DQT1"));
        }
        let rank = cur.u32().ok_or_else(|| header("missing rank"))? as usize;
        let mut shape = Vec::with_capacity(rank.min(64));
        for axis in 0..rank {
            let d = cur.u64().ok_or_else(|| header(format!("missing dimension {axis}")))?;
            if d == 0 {
                return Err(header(format!("dimension {axis} has size 0")));
            }
            let d = usize::try_from(d).map_err(|_| header("dimension exceeds usize"))?;
            shape.push(d);
        }
        let expected =
            element_count(&shape).ok_or_else(|| header("element count overflows usize"))?;
        let payload = cur.rest();
        if payload.len() % 4 != 0 || payload.len() / 4 != expected {
            return Err(Error::LengthMismatch { expected, found: payload.len() / 4 });
        }
        let mut data = Vec::with_capacity(expected);
        for (index, c) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(Error::NonFinite { index });
            }
            data.push(v);
        }
        Ok(Tensor { shape, data })
    }
}

fn header(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

pub(crate) fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Minimal little-endian reader over a byte slice.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteCursor { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    pub(crate) fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let out = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        out
    }

    pub(crate) fn is_at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// A tensor viewed as `outer x axis_len x inner`; each (outer, inner) pair
/// is one lane running along the blocked axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisLayout {
    pub outer: usize,
    pub axis_len: usize,
    pub inner: usize,
}

impl AxisLayout {
    pub fn new(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "axis {axis} out of range for rank {}",
                shape.len()
            )));
        }
        Ok(AxisLayout {
            outer: shape[..axis].iter().product(),
            axis_len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    pub fn lanes(&self) -> usize {
        self.outer * self.inner
    }

    #[inline]
    pub fn offset(&self, lane: usize, k: usize) -> usize {
        let (o, i) = (lane / self.inner, lane % self.inner);
        (o * self.axis_len + k) * self.inner + i
    }
}

/// One contiguous block `[start, start + len)` of an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Split of an axis into blocks of `block_size`, last block possibly shorter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    pub axis_len: usize,
    pub block_size: usize,
    pub spans: Vec<Span>,
}

impl BlockPartition {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Span> + '_ {
        self.spans.iter().copied()
    }
}

/// Partition `[0, axis_len)` into `ceil(axis_len / block_size)` spans with a
/// ragged tail. No padding is introduced.
///
/// Panics if either argument is zero.
pub fn partition(axis_len: usize, block_size: usize) -> BlockPartition {
    assert!(axis_len >= 1 && block_size >= 1, "partition of empty axis or zero block size");
    let spans = (0..axis_len)
        .step_by(block_size)
        .map(|start| Span { start, len: block_size.min(axis_len - start) })
        .collect();
    BlockPartition { axis_len, block_size, spans }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spans(p: &BlockPartition) -> Vec<(usize, usize)> {
        p.iter().map(|s| (s.start, s.len)).collect()
    }

    #[test]
    fn partition_examples() {
        assert_eq!(spans(&partition(256, 128)), vec![(0, 128), (128, 128)]);
        assert_eq!(spans(&partition(130, 128)), vec![(0, 128), (128, 2)]);
        assert_eq!(spans(&partition(5, 8)), vec![(0, 5)]);
    }

    proptest! {
        #[test]
        fn partition_covers_axis(axis_len in 1usize..5000, block in 1usize..700) {
            let p = partition(axis_len, block);
            prop_assert_eq!(p.len(), axis_len.div_ceil(block));
            let mut next = 0;
            for (i, s) in p.iter().enumerate() {
                prop_assert_eq!(s.start, next);
                if i + 1 < p.len() {
                    prop_assert_eq!(s.len, block);
                } else {
                    prop_assert!(s.len >= 1 && s.len <= block);
                }
                next += s.len;
            }
            prop_assert_eq!(next, axis_len);
        }
    }

    fn encode(t: &Tensor) -> Vec<u8> {
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        buf
    }

    #[test]
    fn bytes_round_trip() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..4], b"DQT1");
        assert_eq!(bytes.len(), 4 + 4 + 2 * 8 + 4 * 4);
        assert_eq!(Tensor::from_bytes(&bytes).unwrap(), t);

        let s = Tensor::scalar(-0.0);
        let back = Tensor::from_bytes(&encode(&s)).unwrap();
        assert!(back.shape().is_empty());
        assert_eq!(back.data()[0].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn truncated_payload_is_length_error() {
        let t = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = encode(&t);
        bytes.truncate(bytes.len() - 4);
        match Tensor::from_bytes(&bytes) {
            Err(Error::LengthMismatch { expected: 4, found: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mut extra = encode(&t);
        extra.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(Tensor::from_bytes(&extra), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn nan_is_rejected_at_load() {
        let mut bytes = encode(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::NonFinite { index: 2 })));
    }

    #[test]
    fn bad_headers() {
        assert!(matches!(Tensor::from_bytes(b"DQT"), Err(Error::MalformedHeader(_))));
        assert!(matches!(Tensor::from_bytes(b"XXXX\0\0\0\0"), Err(Error::MalformedHeader(_))));
        let mut b = b"DQT1".to_vec();
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&3u64.to_le_bytes());
        assert!(matches!(Tensor::from_bytes(&b), Err(Error::MalformedHeader(_))));
        let mut z = b"DQT1".to_vec();
        z.extend_from_slice(&1u32.to_le_bytes());
        z.extend_from_slice(&0u64.to_le_bytes());
        assert!(matches!(Tensor::from_bytes(&z), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn axis_layout_lanes() {
        let t = Tensor::new(vec![2, 3], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let rows = t.axis_layout(1).unwrap();
        assert_eq!(rows.lanes(), 2);
        assert_eq!(t.lane(&rows, 1), vec![3., 4., 5.]);
        let cols = t.axis_layout(0).unwrap();
        assert_eq!(cols.lanes(), 3);
        assert_eq!(t.lane(&cols, 2), vec![2., 5.]);
        assert!(t.axis_layout(2).is_err());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
