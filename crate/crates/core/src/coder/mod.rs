//! Entropy coding: the range coder, the models that drive it, run-length
//! coding of base-layer residuals and the chroma overflow side stream.

pub mod adaptive;
pub mod cdf;
pub mod overflow;
pub mod range;
pub mod rle;

pub use adaptive::AdaptiveModel;
pub use cdf::{QuantizedCdf, CDF_TOTAL};
pub use overflow::{decode_overflow, encode_overflow, OverflowSplit};
pub use range::{RangeDecoder, RangeEncoder};
pub use rle::{run_length_decode, run_length_encode};

use crate::error::{corrupt, Result};

/// A frequency table the range coder can code against.
pub trait SymbolModel {
    /// Sum of all frequencies, at most 2^16.
    fn total(&self) -> u32;
    /// `(start, freq)` of `symbol`.
    fn interval(&self, symbol: usize) -> (u32, u32);
    /// Symbol whose interval contains `target < total`.
    fn lookup(&self, target: u32) -> usize;
    /// Called after each coded symbol; static models ignore it.
    fn update(&mut self, _symbol: usize) {}
}

/// Supplies the model for the `index`-th symbol of a stream. Encode and
/// decode must see identical models at every index.
pub trait CdfProvider {
    type Model: SymbolModel;
    fn model(&mut self, index: usize) -> &mut Self::Model;
}

/// One shared model for the whole stream, adapting as it goes.
impl CdfProvider for AdaptiveModel {
    type Model = AdaptiveModel;
    fn model(&mut self, _index: usize) -> &mut AdaptiveModel {
        self
    }
}

/// A fixed CDF per symbol position.
impl CdfProvider for Vec<QuantizedCdf> {
    type Model = QuantizedCdf;
    fn model(&mut self, index: usize) -> &mut QuantizedCdf {
        &mut self[index]
    }
}

pub fn encode_symbol<M: SymbolModel>(enc: &mut RangeEncoder, model: &mut M, symbol: usize) {
    let (start, freq) = model.interval(symbol);
    enc.encode(start, freq, model.total());
    model.update(symbol);
}

pub fn decode_symbol<M: SymbolModel>(dec: &mut RangeDecoder, model: &mut M) -> Result<usize> {
    let total = model.total();
    let symbol = model.lookup(dec.target(total));
    let (start, freq) = model.interval(symbol);
    dec.consume(start, freq, total)?;
    model.update(symbol);
    Ok(symbol)
}

pub fn range_encode<P: CdfProvider>(symbols: &[usize], provider: &mut P) -> Vec<u8> {
    let mut enc = RangeEncoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        encode_symbol(&mut enc, provider.model(i), s);
    }
    enc.finish()
}

pub fn range_decode<P: CdfProvider>(bytes: &[u8], provider: &mut P, count: usize) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(bytes)?;
    let out = (0..count)
        .map(|i| decode_symbol(&mut dec, provider.model(i)))
        .collect::<Result<Vec<_>>>()?;
    if dec.position() != bytes.len() {
        return Err(corrupt("trailing bytes after range-coded stream"));
    }
    Ok(out)
}
