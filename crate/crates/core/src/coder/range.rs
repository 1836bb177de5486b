//! 32-bit range coder with carry propagation and byte renormalization.
//!
//! The encoder keeps a 33-bit `low` so a carry out of the top byte can be
//! pushed into bytes already buffered: `cache` holds the last byte not yet
//! written and `pending` counts the 0xFF bytes queued behind it. The very
//! first byte the carry machinery emits is always 0 and is not stored.
//! Flushing emits the four bytes of `low`, so an empty stream is 4 bytes.
//!
//! Frequencies are given as `(start, freq, total)` with `total <= 2^16`.
//! The last symbol of an alphabet (`start + freq == total`) receives the
//! rounding remainder of the range, wasting nothing.

use crate::error::{corrupt, Result};

const TOP: u32 = 1 << 24;
/// Largest supported frequency total.
pub const MAX_TOTAL: u32 = 1 << 16;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    started: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            started: false,
            out: Vec::new(),
        }
    }

    /// Narrows the range to `[start, start + freq)` out of `total`.
    #[inline]
    pub fn encode(&mut self, start: u32, freq: u32, total: u32) {
        debug_assert!(freq > 0 && start + freq <= total && total <= MAX_TOTAL);
        let r = self.range / total;
        self.low += u64::from(r) * u64::from(start);
        if start + freq < total {
            self.range = r * freq;
        } else {
            self.range -= r * start;
        }
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// `bits` raw bits of `value` (at most 16 per call), MSB first.
    pub fn encode_bits(&mut self, value: u64, bits: u32) {
        let mut left = bits;
        while left > 0 {
            let n = left.min(16);
            left -= n;
            let chunk = ((value >> left) & ((1 << n) - 1)) as u32;
            self.encode(chunk, 1, 1 << n);
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.emit(byte.wrapping_add(carry));
                byte = 0xFF;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    #[inline]
    fn emit(&mut self, b: u8) {
        if self.started {
            self.out.push(b);
        } else {
            debug_assert_eq!(b, 0);
            self.started = true;
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
    r: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
            r: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | u32::from(d.next_byte()?);
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or_else(|| corrupt("range-coded stream ends early"))?;
        self.pos += 1;
        Ok(b)
    }

    /// Target cumulative frequency of the next symbol; must be followed by
    /// [`consume`](Self::consume) with the same `total`.
    #[inline]
    pub fn target(&mut self, total: u32) -> u32 {
        self.r = self.range / total;
        (self.code / self.r).min(total - 1)
    }

    #[inline]
    pub fn consume(&mut self, start: u32, freq: u32, total: u32) -> Result<()> {
        let r = self.r;
        self.code = self.code.wrapping_sub(r.wrapping_mul(start));
        if start + freq < total {
            self.range = r.wrapping_mul(freq);
        } else {
            self.range = self.range.wrapping_sub(r.wrapping_mul(start));
        }
        while self.range < TOP {
            if self.range == 0 {
                return Err(corrupt("range coder state collapsed"));
            }
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
            self.range <<= 8;
        }
        Ok(())
    }

    /// Inverse of [`RangeEncoder::encode_bits`].
    pub fn decode_bits(&mut self, bits: u32) -> Result<u64> {
        let mut v = 0u64;
        let mut left = bits;
        while left > 0 {
            let n = left.min(16);
            left -= n;
            let t = self.target(1 << n);
            self.consume(t, 1, 1 << n)?;
            v = (v << n) | u64::from(t);
        }
        Ok(v)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_stream_is_flush_tail() {
        assert_eq!(RangeEncoder::new().finish().len(), 4);
        RangeDecoder::new(&[0, 0, 0, 0]).unwrap();
        assert!(RangeDecoder::new(&[0, 0, 0]).is_err());
    }

    #[test]
    fn carry_propagates_through_pending_bytes() {
        // Symbols hugging the top of the range force 0xFF runs and carries.
        let mut enc = RangeEncoder::new();
        let syms: Vec<u32> = (0..5000).map(|i| if i % 97 == 0 { 0 } else { 65534 }).collect();
        for &s in &syms {
            enc.encode(s, 1, 65535);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &s in &syms {
            let t = dec.target(65535);
            assert_eq!(t, s);
            dec.consume(t, 1, 65535).unwrap();
        }
        assert_eq!(dec.position(), bytes.len());
    }

    #[test]
    fn raw_bits_roundtrip() {
        let vals = [(0u64, 0u32), (1, 1), (0xABCD, 16), (0x1_2345_6789, 33), (u64::MAX, 64)];
        let mut enc = RangeEncoder::new();
        for &(v, b) in &vals {
            enc.encode_bits(v, b);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &(v, b) in &vals {
            assert_eq!(dec.decode_bits(b).unwrap(), v);
        }
    }

    proptest! {
        #[test]
        fn random_intervals_roundtrip(
            steps in prop::collection::vec((1u32..=65536, any::<u32>(), any::<u32>()), 0..400)
        ) {
            let steps: Vec<(u32, u32, u32)> = steps
                .into_iter()
                .map(|(total, a, b)| {
                    let start = a % total;
                    let freq = 1 + b % (total - start);
                    (start, freq, total)
                })
                .collect();
            let mut enc = RangeEncoder::new();
            for &(s, f, t) in &steps {
                enc.encode(s, f, t);
            }
            let bytes = enc.finish();
            let mut dec = RangeDecoder::new(&bytes).unwrap();
            for &(s, f, t) in &steps {
                let v = dec.target(t);
                prop_assert!(v >= s && v < s + f, "target {} outside [{}, {})", v, s, s + f);
                dec.consume(s, f, t).unwrap();
            }
            prop_assert_eq!(dec.position(), bytes.len());
        }
    }
}
