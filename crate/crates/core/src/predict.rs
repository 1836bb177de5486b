//! Inverse-distance-weighted prediction and residual formation.
//!
//! `â = round(Σ a_j/d_j² / Σ 1/d_j²)` with half-away-from-zero rounding.
//! Weights are scaled by `lcm(d_j²)` so the quotient is exact in integer
//! arithmetic; when the lcm would exceed 2^100 the prediction falls back to
//! `f64`. Either way the result is a pure function of the inputs, so encoder
//! and decoder agree.

use rayon::prelude::*;

use crate::error::{corrupt, invalid, Result};
use crate::lod::LodStructure;

/// Inclusive value range of a working channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelRange {
    pub min: i32,
    pub max: i32,
}

impl ChannelRange {
    /// Luma or a single 8-bit attribute.
    pub const UNSIGNED_8: Self = Self { min: 0, max: 255 };
    /// YCoCg-R chroma.
    pub const CHROMA: Self = Self { min: -255, max: 255 };

    pub fn contains(self, v: i32) -> bool {
        (self.min..=self.max).contains(&v)
    }

    /// Largest possible `|a - â|`.
    pub fn residual_bound(self) -> i32 {
        self.max - self.min
    }
}

const LCM_CAP: u128 = 1 << 100;

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn round_half_away(num: i128, den: u128) -> i64 {
    let mag = num.unsigned_abs();
    let q = (2 * mag + den) / (2 * den);
    if num < 0 {
        -(q as i64)
    } else {
        q as i64
    }
}

fn exact_weights(dists: &[u32]) -> Option<Vec<u128>> {
    let mut l: u128 = 1;
    for &d in dists {
        let sq = u128::from(d) * u128::from(d);
        l = (l / gcd(l, sq)).checked_mul(sq)?;
        if l > LCM_CAP {
            return None;
        }
    }
    Some(dists.iter().map(|&d| l / (u128::from(d) * u128::from(d))).collect())
}

/// IDW prediction from neighbor values and Manhattan distances.
pub fn idw_predict(attrs: &[i32], dists: &[u32]) -> Result<i32> {
    if attrs.is_empty() || attrs.len() != dists.len() {
        return Err(invalid(format!(
            "prediction needs equal, non-empty neighbor lists (got {} values, {} distances)",
            attrs.len(),
            dists.len()
        )));
    }
    if dists.contains(&0) {
        return Err(invalid("neighbor distance 0"));
    }
    if let Some(&d0) = dists.first() {
        if dists.iter().all(|&d| d == d0) {
            let sum: i64 = attrs.iter().map(|&a| i64::from(a)).sum();
            return Ok(round_half_away(i128::from(sum), attrs.len() as u128) as i32);
        }
    }
    if let Some(w) = exact_weights(dists) {
        let num: i128 = attrs.iter().zip(&w).map(|(&a, &w)| i128::from(a) * w as i128).sum();
        let den: u128 = w.iter().sum();
        return Ok(round_half_away(num, den) as i32);
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (&a, &d) in attrs.iter().zip(dists) {
        let w = 1.0 / (f64::from(d) * f64::from(d));
        num += f64::from(a) * w;
        den += w;
    }
    Ok((num / den).round() as i32)
}

/// `a = â + r`, rejecting values outside the channel range.
pub fn reconstruct(predicted: i32, residual: i32, range: ChannelRange) -> Result<i32> {
    let a = predicted + residual;
    if !range.contains(a) {
        return Err(corrupt(format!("reconstructed value {a} outside {}..={}", range.min, range.max)));
    }
    Ok(a)
}

/// Prediction for point `p` from the current channel values, or `None` for
/// the context-free first point.
pub fn predict_point(values: &[i32], lod: &LodStructure, p: u32) -> Option<i32> {
    let nbrs = lod.neighbors(p);
    if nbrs.is_empty() {
        return None;
    }
    let mut attrs = [0i32; 64];
    for (slot, &j) in attrs.iter_mut().zip(nbrs) {
        *slot = values[j as usize];
    }
    Some(idw_predict(&attrs[..nbrs.len()], lod.distances(p)).expect("neighbor lists are valid"))
}

/// Predictions for every point of one inference layer, in layer order.
/// `available` marks points whose values are already reconstructed.
pub fn predict_layer(values: &[i32], available: &[bool], lod: &LodStructure, layer: usize) -> Result<Vec<i32>> {
    lod.layers[layer]
        .par_iter()
        .map(|&p| {
            if let Some(&j) = lod.neighbors(p).iter().find(|&&j| !available[j as usize]) {
                return Err(invalid(format!("point {p} predicts from unreconstructed neighbor {j}")));
            }
            Ok(predict_point(values, lod, p).unwrap_or(0))
        })
        .collect()
}

/// Residuals `a_i - â_i` of one inference layer. The first point of the
/// cloud, which has no context, is predicted as 0.
pub fn residuals_for_layer(values: &[i32], available: &[bool], lod: &LodStructure, layer: usize) -> Result<Vec<i32>> {
    let preds = predict_layer(values, available, lod, layer)?;
    Ok(lod.layers[layer].iter().zip(preds).map(|(&p, pred)| values[p as usize] - pred).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lod::{build, DistanceSchedule, LodConfig};
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use proptest::prelude::*;

    fn rational_oracle(attrs: &[i32], dists: &[u32]) -> i64 {
        let mut num = BigRational::from_integer(0.into());
        let mut den = BigRational::from_integer(0.into());
        for (&a, &d) in attrs.iter().zip(dists) {
            let w = BigRational::new(1.into(), BigInt::from(d) * BigInt::from(d));
            num += &w * BigInt::from(a);
            den += w;
        }
        let q = num / den;
        let half = BigRational::new(1.into(), 2.into());
        let r = if q >= BigRational::from_integer(0.into()) { (q + half).floor() } else { (q - half).ceil() };
        r.to_integer().try_into().unwrap()
    }

    #[test]
    fn hand_values() {
        assert_eq!(idw_predict(&[37], &[5]).unwrap(), 37);
        assert_eq!(idw_predict(&[10, 20], &[1, 1]).unwrap(), 15);
        assert_eq!(idw_predict(&[8, 16], &[1, 2]).unwrap(), 10);
        assert!(idw_predict(&[], &[]).is_err());
        assert!(idw_predict(&[1], &[0]).is_err());
    }

    #[test]
    fn halves_round_away_from_zero() {
        assert_eq!(idw_predict(&[0, 1], &[3, 3]).unwrap(), 1);
        assert_eq!(idw_predict(&[0, -1], &[3, 3]).unwrap(), -1);
        assert_eq!(idw_predict(&[-3, 0], &[1, 1]).unwrap(), -2);
    }

    #[test]
    fn reconstruct_examples() {
        let r = ChannelRange::UNSIGNED_8;
        assert_eq!(reconstruct(97, 3, r).unwrap(), 100);
        assert_eq!(reconstruct(0, 0, r).unwrap(), 0);
        assert_eq!(reconstruct(255, -255, r).unwrap(), 0);
        assert!(reconstruct(255, 1, r).is_err());
        assert!(reconstruct(-255, -1, ChannelRange::CHROMA).is_err());
    }

    #[test]
    fn huge_distances_use_float_path() {
        let d = [4_000_000_007u32, 3_999_999_989, 17];
        let a = [200, -100, 31];
        assert!(exact_weights(&d).is_none());
        assert_eq!(i64::from(idw_predict(&a, &d).unwrap()), rational_oracle(&a, &d));
    }

    fn ramp_cloud() -> (Vec<[u32; 3]>, Vec<i32>) {
        let pos: Vec<[u32; 3]> = (0..64).map(|x| [x, 0, 0]).collect();
        let vals = pos.iter().map(|p| p[0] as i32 * 3).collect();
        (pos, vals)
    }

    #[test]
    fn constant_cloud_has_zero_residuals() {
        let (pos, _) = ramp_cloud();
        let vals = vec![42; pos.len()];
        let lod = build(&pos, &LodConfig::desk()).unwrap();
        let avail = vec![true; pos.len()];
        for t in lod.inference_layer_range() {
            assert!(residuals_for_layer(&vals, &avail, &lod, t).unwrap().iter().all(|&r| r == 0));
        }
    }

    #[test]
    fn symmetric_ramp_is_predicted_exactly() {
        let (pos, vals) = ramp_cloud();
        let cfg = LodConfig {
            base_levels: 1,
            total_levels: 2,
            neighbors: 2,
            schedule: DistanceSchedule::Explicit(vec![1]),
        };
        let lod = build(&pos, &cfg).unwrap();
        // Even x form the base; each odd interior x sees x-1 and x+1.
        assert_eq!(lod.layers[1], (0..32).map(|i| 2 * i + 1).collect::<Vec<u32>>());
        let avail = vec![true; pos.len()];
        let res = residuals_for_layer(&vals, &avail, &lod, 1).unwrap();
        assert!(res[..31].iter().all(|&r| r == 0), "{res:?}");
    }

    #[test]
    fn unavailable_neighbor_is_reported() {
        let (pos, vals) = ramp_cloud();
        let lod = build(&pos, &LodConfig::desk()).unwrap();
        let avail = vec![false; pos.len()];
        let t = lod.inference_layer_range().start;
        assert!(residuals_for_layer(&vals, &avail, &lod, t).is_err());
    }

    proptest! {
        #[test]
        fn matches_rational_oracle(
            pairs in prop::collection::vec((-510i32..=510, 1u32..5000), 1..12),
        ) {
            let (a, d): (Vec<i32>, Vec<u32>) = pairs.into_iter().unzip();
            prop_assert_eq!(i64::from(idw_predict(&a, &d).unwrap()), rational_oracle(&a, &d));
        }

        #[test]
        fn distance_scaling_is_neutral(
            pairs in prop::collection::vec((0i32..=255, 1u32..200), 1..12),
            s in 1u32..50,
        ) {
            let (a, d): (Vec<i32>, Vec<u32>) = pairs.into_iter().unzip();
            let scaled: Vec<u32> = d.iter().map(|&x| x * s).collect();
            prop_assert_eq!(idw_predict(&a, &d).unwrap(), idw_predict(&a, &scaled).unwrap());
        }

        #[test]
        fn residual_roundtrip(
            pairs in prop::collection::vec((0i32..=255, 1u32..100), 1..12),
            target in 0i32..=255,
        ) {
            let (a, d): (Vec<i32>, Vec<u32>) = pairs.into_iter().unzip();
            let pred = idw_predict(&a, &d).unwrap();
            prop_assert_eq!(reconstruct(pred, target - pred, ChannelRange::UNSIGNED_8).unwrap(), target);
        }
    }
}
