//! LSB-first bit packing of small unsigned codes.

/// Storage width for `bits`-bit codes: the next of 1, 2, 4, 8.
pub fn slot_width(bits: u8) -> u8 {
    match bits {
        0 | 1 => 1,
        2 => 2,
        3 | 4 => 4,
        _ => 8,
    }
}

/// Appends codes of `width` bits (1..=8) to a byte buffer, first code in the
/// least significant bits.
#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u32,
    acc_bits: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, code: u32, width: u8) {
        debug_assert!((1..=8).contains(&width) && code < (1 << width));
        self.acc |= code << self.acc_bits;
        self.acc_bits += width as u32;
        while self.acc_bits >= 8 {
            self.bytes.push(self.acc as u8);
            self.acc >>= 8;
            self.acc_bits -= 8;
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        if self.acc_bits > 0 {
            self.bytes.push(self.acc as u8);
        }
        self.bytes
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    acc: u32,
    acc_bits: u32,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0, acc: 0, acc_bits: 0 }
    }

    /// Next `width`-bit code, or `None` once the input is exhausted.
    pub fn pull(&mut self, width: u8) -> Option<u32> {
        let width = width as u32;
        while self.acc_bits < width {
            let b = *self.bytes.get(self.pos)?;
            self.acc |= (b as u32) << self.acc_bits;
            self.acc_bits += 8;
            self.pos += 1;
        }
        let out = self.acc & ((1 << width) - 1);
        self.acc >>= width;
        self.acc_bits -= width;
        Some(out)
    }
}

pub fn pack(codes: &[u8], width: u8) -> Vec<u8> {
    let mut w = BitWriter::new();
    for &c in codes {
        w.push(c as u32, width);
    }
    w.finish()
}

pub fn unpack(bytes: &[u8], width: u8, count: usize) -> Option<Vec<u8>> {
    let mut r = BitReader::new(bytes);
    (0..count).map(|_| r.pull(width).map(|v| v as u8)).collect()
}

/// Packed size in bytes of `count` codes of `width` bits.
pub fn packed_len(count: usize, width: u8) -> usize {
    (count * width as usize).div_ceil(8)
}
