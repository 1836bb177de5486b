//! Run-length coding of signed residual streams.
//!
//! Values are zigzag mapped (`0, -1, 1, -2, ..` to `0, 1, 2, 3, ..`) and
//! split into tokens `(zero_run, value)` with `value >= 1`. The stream ends
//! with the terminator `(trailing_run, 0)`. Runs and values go through two
//! independent integer coders. Each integer is sent as its bit length
//! (adaptive model over 0..=64), then the bits below the leading one: the
//! first of them with an adaptive binary model per length, the rest raw.

use super::adaptive::{AdaptiveModel, TOKEN_INCREMENT};
use super::range::{RangeDecoder, RangeEncoder};
use super::{decode_symbol, encode_symbol};
use crate::error::{corrupt, Result};

pub fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

pub fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

/// Adaptive Elias-gamma-like integer coder.
#[derive(Clone, Debug)]
pub struct IntegerCoder {
    lengths: AdaptiveModel,
    top_bits: Vec<AdaptiveModel>,
}

impl Default for IntegerCoder {
    fn default() -> Self {
        Self::new()
    }
}

impl IntegerCoder {
    pub fn new() -> Self {
        Self {
            lengths: AdaptiveModel::new(65, TOKEN_INCREMENT),
            top_bits: vec![AdaptiveModel::new(2, TOKEN_INCREMENT); 65],
        }
    }

    pub fn encode(&mut self, enc: &mut RangeEncoder, v: u64) {
        let len = (64 - v.leading_zeros()) as usize;
        encode_symbol(enc, &mut self.lengths, len);
        if len >= 2 {
            let top = ((v >> (len - 2)) & 1) as usize;
            encode_symbol(enc, &mut self.top_bits[len], top);
            enc.encode_bits(v, (len - 2) as u32);
        }
    }

    pub fn decode(&mut self, dec: &mut RangeDecoder) -> Result<u64> {
        let len = decode_symbol(dec, &mut self.lengths)?;
        Ok(match len {
            0 => 0,
            1 => 1,
            _ => {
                let top = decode_symbol(dec, &mut self.top_bits[len])? as u64;
                let rest = dec.decode_bits((len - 2) as u32)?;
                (1 << (len - 1)) | (top << (len - 2)) | rest
            }
        })
    }
}

/// Token pairs for `values`, terminator included.
pub fn tokens(values: &[i64]) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut run = 0u64;
    for &v in values {
        let z = zigzag(v);
        if z == 0 {
            run += 1;
        } else {
            out.push((run, z));
            run = 0;
        }
    }
    out.push((run, 0));
    out
}

/// Codes `values` into a self-delimiting range-coded stream.
pub fn run_length_encode(values: &[i64]) -> Vec<u8> {
    let mut enc = RangeEncoder::new();
    let (mut runs, mut vals) = (IntegerCoder::new(), IntegerCoder::new());
    for (run, v) in tokens(values) {
        runs.encode(&mut enc, run);
        vals.encode(&mut enc, v);
    }
    enc.finish()
}

/// Inverse of [`run_length_encode`]. Fails on truncation or when the
/// stream would expand beyond `max_len` values.
pub fn run_length_decode(bytes: &[u8], max_len: usize) -> Result<Vec<i64>> {
    let mut dec = RangeDecoder::new(bytes)?;
    let (mut runs, mut vals) = (IntegerCoder::new(), IntegerCoder::new());
    let mut out = Vec::new();
    loop {
        let run = runs.decode(&mut dec)?;
        let v = vals.decode(&mut dec)?;
        let end = (out.len() as u64).checked_add(run).filter(|&e| e + u64::from(v != 0) <= max_len as u64);
        let Some(end) = end else {
            return Err(corrupt("run-length stream longer than expected"));
        };
        out.resize(end as usize, 0);
        if v == 0 {
            break;
        }
        out.push(unzigzag(v));
    }
    if dec.position() != bytes.len() {
        return Err(corrupt("trailing bytes after run-length stream"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zigzag_mapping() {
        let pairs = [(0i64, 0u64), (-1, 1), (1, 2), (-2, 3), (2, 4), (5, 10), (i64::MIN, u64::MAX), (i64::MAX, u64::MAX - 1)];
        for (v, z) in pairs {
            assert_eq!(zigzag(v), z);
            assert_eq!(unzigzag(z), v);
        }
    }

    #[test]
    fn token_construction() {
        assert_eq!(tokens(&[0; 100]), vec![(100, 0)]);
        assert_eq!(tokens(&[0, 0, 5, -1]), vec![(2, 10), (0, 1), (0, 0)]);
        assert_eq!(tokens(&[]), vec![(0, 0)]);
    }

    #[test]
    fn empty_and_zero_streams_are_tiny() {
        assert_eq!(run_length_decode(&run_length_encode(&[]), 0).unwrap(), Vec::<i64>::new());
        let zeros = run_length_encode(&[0; 100_000]);
        assert!(zeros.len() <= 12, "{} bytes", zeros.len());
    }

    #[test]
    fn truncation_and_overrun_detected() {
        let bytes = run_length_encode(&[3, -7, 0, 0, 1, 900, -12345]);
        assert!(run_length_decode(&bytes[..bytes.len() - 2], 100).is_err());
        assert!(run_length_decode(&bytes, 6).is_err());
        assert_eq!(run_length_decode(&bytes, 7).unwrap().len(), 7);
    }

    proptest! {
        #[test]
        fn roundtrip(values in prop::collection::vec(prop_oneof![Just(0i64), -600i64..600, any::<i64>()], 0..500)) {
            let bytes = run_length_encode(&values);
            prop_assert_eq!(run_length_decode(&bytes, values.len()).unwrap(), values);
        }
    }
}
