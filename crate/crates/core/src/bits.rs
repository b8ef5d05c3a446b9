//! MSB-first bit writer and reader with byte alignment.

#[derive(Debug, Default)]
pub struct BitWriter {
    buf: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn write(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        debug_assert!(width == 64 || value >> width == 0, "{value} does not fit {width} bits");
        for k in (0..width).rev() {
            let bit = (value >> k) & 1;
            let byte = (self.len / 8) as usize;
            if byte == self.buf.len() {
                self.buf.push(0);
            }
            if bit == 1 {
                self.buf[byte] |= 0x80 >> (self.len % 8);
            }
            self.len += 1;
        }
    }

    /// Zero-pads to the next byte boundary.
    pub fn align(&mut self) {
        self.len = self.len.div_ceil(8) * 8;
        debug_assert_eq!(self.buf.len() as u64 * 8, self.len);
    }

    pub fn bit_len(&self) -> u64 {
        self.len
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    /// Reads `width` bits as an unsigned big-endian value; `None` past the end.
    pub fn read(&mut self, width: u32) -> Option<u64> {
        debug_assert!(width <= 64);
        if self.pos + u64::from(width) > self.data.len() as u64 * 8 {
            return None;
        }
        let mut v = 0u64;
        for _ in 0..width {
            let byte = self.data[(self.pos / 8) as usize];
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | u64::from(bit);
            self.pos += 1;
        }
        Some(v)
    }

    pub fn align(&mut self) {
        self.pos = self.pos.div_ceil(8) * 8;
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        (self.data.len() as u64 * 8).saturating_sub(self.pos)
    }
}

/// Bits needed to tell `n` options apart; a single option needs none.
pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn msb_first_layout() {
        let mut w = BitWriter::new();
        w.write(0b1101, 4);
        w.write(0b0111, 4);
        w.write(1, 1);
        assert_eq!(w.bit_len(), 9);
        w.align();
        assert_eq!(w.bit_len(), 16);
        assert_eq!(w.into_bytes(), vec![0xD7, 0x80]);
    }

    #[test]
    fn zero_width_fields_are_free() {
        let mut w = BitWriter::new();
        w.write(0, 0);
        assert_eq!(w.bit_len(), 0);
        let mut r = BitReader::new(&[]);
        assert_eq!(r.read(0), Some(0));
        assert_eq!(r.read(1), None);
    }

    #[test]
    fn ceil_log2_values() {
        let expect = [(0, 0), (1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (8, 3), (9, 4), (256, 8), (257, 9)];
        for (n, bits) in expect {
            assert_eq!(ceil_log2(n), bits, "n = {n}");
        }
    }

    proptest! {
        #[test]
        fn fields_round_trip(fields in proptest::collection::vec((any::<u64>(), 0u32..=64), 0..40)) {
            let fields: Vec<(u64, u32)> = fields
                .into_iter()
                .map(|(v, w)| (if w == 64 { v } else { v & ((1u64 << w) - 1) }, w))
                .collect();
            let mut w = BitWriter::new();
            for &(v, n) in &fields {
                w.write(v, n);
            }
            let total = w.bit_len();
            w.align();
            let bytes = w.into_bytes();
            prop_assert_eq!(bytes.len() as u64, total.div_ceil(8));
            let mut r = BitReader::new(&bytes);
            for &(v, n) in &fields {
                prop_assert_eq!(r.read(n), Some(v));
            }
            prop_assert_eq!(r.position(), total);
        }
    }
}
