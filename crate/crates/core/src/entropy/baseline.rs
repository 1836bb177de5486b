use crate::coder::adaptive::AdaptiveModel;

use super::ALPHABET;

/// Trainingless fallback: an order-0 adaptive model over the residual
/// alphabet with unit increments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaselineModel {
    pub model: AdaptiveModel,
}

impl Default for BaselineModel {
    fn default() -> Self {
        Self::new()
    }
}

impl BaselineModel {
    pub fn new() -> Self {
        Self {
            model: AdaptiveModel::new(ALPHABET, 1),
        }
    }

    pub fn probability(&self, symbol: usize) -> f64 {
        self.model.probability(symbol)
    }

    pub fn observe(&mut self, symbol: usize) {
        self.model.observe(symbol);
    }
}
