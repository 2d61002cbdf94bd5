use alloc::vec::Vec;

/// Byte buffer with a bit cursor for entropy-coded data. Every `0xFF` byte
/// written through [`Bitstream::put_bits`] is followed by a stuffed `0x00`.
#[derive(Clone, Debug, Default)]
pub struct Bitstream {
    buf: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl Bitstream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bytes: usize) -> Self {
        Bitstream {
            buf: Vec::with_capacity(bytes),
            ..Self::default()
        }
    }

    /// Raw bytes (markers, headers); the bit cursor must be byte aligned.
    pub fn put_bytes(&mut self, bytes: &[u8]) {
        debug_assert_eq!(self.nbits, 0, "raw bytes written mid-byte");
        self.buf.extend_from_slice(bytes);
    }

    pub fn put_u16(&mut self, v: u16) {
        self.put_bytes(&v.to_be_bytes());
    }

    /// Appends the low `size` bits of `code`, MSB first.
    #[inline]
    pub fn put_bits(&mut self, code: u32, size: u32) {
        debug_assert!(size <= 16);
        if size == 0 {
            return;
        }
        self.acc = (self.acc << size) | (code & ((1 << size) - 1));
        self.nbits += size;
        while self.nbits >= 8 {
            self.nbits -= 8;
            let byte = (self.acc >> self.nbits) as u8;
            self.buf.push(byte);
            if byte == 0xFF {
                self.buf.push(0x00);
            }
        }
        self.acc &= (1 << self.nbits) - 1;
    }

    /// Pads the final partial byte with one bits.
    pub fn align(&mut self) {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put_bits((1 << pad) - 1, pad);
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.align();
        self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stuffs_ff_and_pads_with_ones() {
        let mut b = Bitstream::new();
        b.put_bits(0xFF, 8);
        b.put_bits(0b101, 3);
        assert_eq!(b.finish(), alloc::vec![0xFF, 0x00, 0b1011_1111]);
    }

    #[test]
    fn bits_cross_byte_boundaries() {
        let mut b = Bitstream::new();
        b.put_bits(0b1, 1);
        b.put_bits(0x1234, 16);
        b.put_bits(0, 7);
        assert_eq!(b.finish(), alloc::vec![0x89, 0x1A, 0x00]);
    }
}
