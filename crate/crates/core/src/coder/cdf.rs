//! Deterministic quantization of probability vectors to 16-bit CDFs.
//!
//! Probabilities are converted to 40-bit fixed point first, after which
//! everything is integer arithmetic: counts are the floors of the exact
//! shares of 65536, leftover units go to the largest remainders (ties to
//! the lower index), and zero counts are raised to 1 with the excess taken
//! from the largest buckets. Encoder and decoder therefore agree as long as
//! they feed in the same probability bits.

use super::SymbolModel;
use crate::error::{invalid, Result};

pub const CDF_TOTAL: u32 = 1 << 16;
const FIXED_ONE: f64 = (1u64 << 40) as f64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedCdf {
    /// `cum[0] = 0`, `cum[n] = 65536`, strictly increasing.
    cum: Vec<u32>,
}

impl QuantizedCdf {
    /// Quantizes `probs`. Non-finite or negative entries count as 0; an
    /// all-zero vector quantizes to uniform.
    pub fn from_probabilities<P: Copy + Into<f64>>(probs: &[P]) -> Result<Self> {
        let n = probs.len();
        if n == 0 || n > CDF_TOTAL as usize {
            return Err(invalid(format!("cannot quantize an alphabet of {n} symbols")));
        }
        let fixed: Vec<u64> = probs
            .iter()
            .map(|&p| {
                let p: f64 = p.into();
                if p.is_finite() && p > 0.0 {
                    (p.min(1.0) * FIXED_ONE) as u64
                } else {
                    0
                }
            })
            .collect();
        let sum: u128 = fixed.iter().map(|&f| u128::from(f)).sum();
        let mut counts = vec![0u32; n];
        if sum > 0 {
            let total = u128::from(CDF_TOTAL);
            let mut remainders = Vec::with_capacity(n);
            let mut assigned = 0u32;
            for (i, &f) in fixed.iter().enumerate() {
                let scaled = u128::from(f) * total;
                counts[i] = (scaled / sum) as u32;
                assigned += counts[i];
                remainders.push((scaled % sum, i));
            }
            let leftover = (CDF_TOTAL - assigned) as usize;
            if leftover > 0 {
                // Largest remainder first, lower index on ties.
                let key = |&(r, i): &(u128, usize)| (std::cmp::Reverse(r), i);
                if leftover < n {
                    remainders.select_nth_unstable_by_key(leftover - 1, key);
                }
                for &(_, i) in &remainders[..leftover] {
                    counts[i] += 1;
                }
            }
        }
        let zeros = counts.iter().filter(|&&c| c == 0).count() as u32;
        if zeros as usize == n {
            // Uniform fallback, remainder to the lowest indices.
            let base = CDF_TOTAL / n as u32;
            let extra = (CDF_TOTAL % n as u32) as usize;
            for (i, c) in counts.iter_mut().enumerate() {
                *c = base + u32::from(i < extra);
            }
        } else if zeros > 0 {
            counts.iter_mut().filter(|c| **c == 0).for_each(|c| *c = 1);
            let mut excess = zeros;
            while excess > 0 {
                let (idx, &max) = counts
                    .iter()
                    .enumerate()
                    .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
                    .unwrap();
                let take = excess.min(max - 1);
                counts[idx] -= take;
                excess -= take;
            }
        }
        Ok(Self::from_counts_unchecked(&counts))
    }

    /// CDF from explicit positive counts summing to 65536.
    pub fn from_counts(counts: &[u32]) -> Result<Self> {
        if counts.is_empty() || counts.contains(&0) || counts.iter().map(|&c| u64::from(c)).sum::<u64>() != u64::from(CDF_TOTAL) {
            return Err(invalid("counts must be positive and sum to 65536"));
        }
        Ok(Self::from_counts_unchecked(counts))
    }

    fn from_counts_unchecked(counts: &[u32]) -> Self {
        let mut cum = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &c in counts {
            acc += c;
            cum.push(acc);
        }
        debug_assert_eq!(acc, CDF_TOTAL);
        Self { cum }
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }

    /// Ideal code length of `symbol` in bits.
    pub fn cost_bits(&self, symbol: usize) -> f64 {
        16.0 - f64::from(self.count(symbol)).log2()
    }

    pub(crate) fn hash_into(&self, h: &mut crc32fast::Hasher) {
        for c in &self.cum {
            h.update(&c.to_le_bytes());
        }
    }
}

impl SymbolModel for QuantizedCdf {
    fn total(&self) -> u32 {
        CDF_TOTAL
    }

    fn interval(&self, symbol: usize) -> (u32, u32) {
        (self.cum[symbol], self.count(symbol))
    }

    fn lookup(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }
}
