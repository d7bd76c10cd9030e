//! MSB-first bit packing with fixed-width and Elias-gamma fields.

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_bit(&mut self, bit: bool) {
        let offset = (self.len % 8) as u8;
        if offset == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> offset;
        }
        self.len += 1;
    }

    /// Writes the low `width` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u64, width: u32) {
        debug_assert!(
            width == 64 || value >> width == 0,
            "value does not fit in {width} bits"
        );
        for shift in (0..width).rev() {
            self.push_bit(value >> shift & 1 == 1);
        }
    }

    /// Elias-gamma code of `value ≥ 1`: `⌊log₂ value⌋` zeros, then `value`
    /// in binary.
    pub fn write_gamma(&mut self, value: u64) {
        assert!(value >= 1, "Elias gamma codes positive integers");
        let width = 64 - value.leading_zeros();
        for _ in 1..width {
            self.push_bit(false);
        }
        self.write_bits(value, width);
    }

    pub fn bit_len(&self) -> u64 {
        self.len
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Length in bits of the Elias-gamma code of `value ≥ 1`.
pub fn gamma_len(value: u64) -> u64 {
    2 * (63 - value.leading_zeros() as u64) + 1
}

/// Bits needed to index `count` items (`0` when there is at most one).
pub fn index_width(count: usize) -> u32 {
    if count <= 1 {
        0
    } else {
        usize::BITS - (count - 1).leading_zeros()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EndOfStream;

pub struct BitReader<'a> {
    bytes: &'a [u8],
    len: u64,
    pos: u64,
}

impl<'a> BitReader<'a> {
    /// Reads from the first `len` bits of `bytes`.
    pub fn new(bytes: &'a [u8], len: u64) -> Self {
        BitReader {
            bytes,
            len: len.min(bytes.len() as u64 * 8),
            pos: 0,
        }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.len - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool, EndOfStream> {
        if self.pos >= self.len {
            return Err(EndOfStream);
        }
        let byte = self.bytes[(self.pos / 8) as usize];
        let bit = byte & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64, EndOfStream> {
        let mut v = 0u64;
        for _ in 0..width {
            v = v << 1 | self.read_bit()? as u64;
        }
        Ok(v)
    }

    pub fn read_gamma(&mut self) -> Result<u64, EndOfStream> {
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros >= 64 {
                return Err(EndOfStream);
            }
        }
        let rest = self.read_bits(zeros)?;
        Ok(1u64 << zeros | rest)
    }
}
