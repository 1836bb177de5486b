//! Order-0 adaptive frequency models.
//!
//! Counts start at 1. After each coded symbol its count grows by the
//! increment; once the total exceeds `2^16 - 32` every count is halved,
//! rounding up so none reaches zero. Encoder and decoder apply the same
//! updates in the same order.

use super::SymbolModel;

/// Totals above this trigger halving.
pub const RESCALE_LIMIT: u32 = (1 << 16) - 32;
/// Increment used by the token models of the run-length coder.
pub const TOKEN_INCREMENT: u32 = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdaptiveModel {
    counts: Vec<u32>,
    total: u32,
    increment: u32,
}

impl AdaptiveModel {
    pub fn new(alphabet: usize, increment: u32) -> Self {
        assert!(alphabet >= 1 && alphabet as u32 <= RESCALE_LIMIT / 2, "alphabet size out of range");
        assert!((1..=32).contains(&increment), "increment out of range");
        Self {
            counts: vec![1; alphabet],
            total: alphabet as u32,
            increment,
        }
    }

    pub fn alphabet(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, symbol: usize) -> u32 {
        self.counts[symbol]
    }

    /// Current probability of `symbol`.
    pub fn probability(&self, symbol: usize) -> f64 {
        f64::from(self.counts[symbol]) / f64::from(self.total)
    }

    pub fn observe(&mut self, symbol: usize) {
        self.counts[symbol] += self.increment;
        self.total += self.increment;
        if self.total > RESCALE_LIMIT {
            self.total = 0;
            for c in &mut self.counts {
                *c = (*c).div_ceil(2);
                self.total += *c;
            }
        }
    }
}

impl SymbolModel for AdaptiveModel {
    fn total(&self) -> u32 {
        self.total
    }

    fn interval(&self, symbol: usize) -> (u32, u32) {
        let start = self.counts[..symbol].iter().sum();
        (start, self.counts[symbol])
    }

    fn lookup(&self, target: u32) -> usize {
        let mut acc = 0;
        for (s, &c) in self.counts.iter().enumerate() {
            acc += c;
            if target < acc {
                return s;
            }
        }
        self.counts.len() - 1
    }

    fn update(&mut self, symbol: usize) {
        self.observe(symbol);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_uniform_and_counts() {
        let mut m = AdaptiveModel::new(511, 1);
        assert_eq!(m.probability(7), 1.0 / 511.0);
        m.observe(7);
        assert_eq!(m.probability(7), 2.0 / 512.0);
        assert_eq!(m.interval(8), (9, 1));
    }

    #[test]
    fn halving_keeps_counts_positive_and_total_bounded() {
        let mut m = AdaptiveModel::new(65, TOKEN_INCREMENT);
        for i in 0..100_000 {
            m.observe(if i % 10 == 0 { 3 } else { 0 });
            assert!(m.total() <= 1 << 16);
            assert_eq!(m.total(), m.counts.iter().sum::<u32>());
        }
        assert!(m.counts.iter().all(|&c| c >= 1));
        assert!(m.count(0) > m.count(3));
    }

    #[test]
    fn lookup_matches_interval() {
        let mut m = AdaptiveModel::new(5, 32);
        for s in [1, 1, 4, 0] {
            m.observe(s);
        }
        for s in 0..5 {
            let (start, freq) = m.interval(s);
            assert_eq!(m.lookup(start), s);
            assert_eq!(m.lookup(start + freq - 1), s);
        }
    }
}
