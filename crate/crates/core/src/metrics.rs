//! Density and entropy measurements.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};

/// Half-width of the cubic window: radius 2 is a 5×5×5 kernel.
pub const DEFAULT_KERNEL_RADIUS: u32 = 2;

/// Mean number of points, self included, within Chebyshev distance
/// `radius` of each point.
pub fn nn_density(positions: &[[u32; 3]], radius: u32) -> Result<f64> {
    if positions.is_empty() {
        return Err(invalid("density of an empty cloud"));
    }
    let cell = u64::from(radius) + 1;
    let key = |p: [u32; 3]| p.map(|v| u64::from(v) / cell);
    let mut grid: HashMap<[u64; 3], Vec<[u32; 3]>> = HashMap::new();
    for &p in positions {
        grid.entry(key(p)).or_default().push(p);
    }
    let total: u64 = positions
        .par_iter()
        .map(|&p| {
            let c = key(p);
            let mut count = 0u64;
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dz in -1i64..=1 {
                        let n = [c[0] as i64 + dx, c[1] as i64 + dy, c[2] as i64 + dz];
                        if n.iter().any(|&v| v < 0) {
                            continue;
                        }
                        let Some(bucket) = grid.get(&n.map(|v| v as u64)) else { continue };
                        count += bucket
                            .iter()
                            .filter(|q| (0..3).all(|a| p[a].abs_diff(q[a]) <= radius))
                            .count() as u64;
                    }
                }
            }
            count
        })
        .sum();
    Ok(total as f64 / positions.len() as f64)
}

/// `-Σ p̂ log2 p̂` over the observed symbol frequencies.
pub fn empirical_entropy<T: std::hash::Hash + Eq>(symbols: impl IntoIterator<Item = T>) -> Result<f64> {
    let mut counts: HashMap<T, u64> = HashMap::new();
    let mut n = 0u64;
    for s in symbols {
        *counts.entry(s).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return Err(invalid("entropy of an empty stream"));
    }
    let n = n as f64;
    let mut c: Vec<u64> = counts.into_values().collect();
    c.sort_unstable();
    Ok(c.iter().map(|&k| k as f64 / n).map(|p| -p * p.log2()).sum::<f64>().max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DensitySample {
    pub ratio: f64,
    pub nn: f64,
    pub points: usize,
}

/// NN density of seeded uniform subsamples. The samples are nested
/// prefixes of one random permutation, each keeping `round(ratio·n)` points
/// (at least one).
pub fn sampled_density_curve(positions: &[[u32; 3]], ratios: &[f64], radius: u32, seed: u64) -> Result<Vec<DensitySample>> {
    if positions.is_empty() {
        return Err(invalid("density of an empty cloud"));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(invalid(format!("sampling ratio {r} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ratios
        .iter()
        .map(|&ratio| {
            let keep = ((ratio * positions.len() as f64).round() as usize).clamp(1, positions.len());
            let sub: Vec<[u32; 3]> = order[..keep].iter().map(|&i| positions[i]).collect();
            Ok(DensitySample {
                ratio,
                nn: nn_density(&sub, radius)?,
                points: keep,
            })
        })
        .collect()
}

/// CSV with header `ratio,nn,points`.
pub fn density_curve_csv(curve: &[DensitySample]) -> String {
    let mut s = String::from("ratio,nn,points\n");
    for d in curve {
        let _ = writeln!(s, "{},{:.6},{}", d.ratio, d.nn, d.points);
    }
    s
}

/// Mean over blocks of the per-channel population standard deviation of
/// attribute values, averaged over channels. `labels[i]` is the block of
/// sample `i`; empty blocks are skipped.
pub fn mean_within_block_std(values: &[Vec<i32>], labels: &[u32]) -> f64 {
    let blocks = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut per_block = Vec::new();
    for b in 0..blocks {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] as usize == b).collect();
        if members.is_empty() {
            continue;
        }
        let mut s = 0.0;
        for ch in values {
            let n = members.len() as f64;
            let mean = members.iter().map(|&i| f64::from(ch[i])).sum::<f64>() / n;
            let var = members.iter().map(|&i| (f64::from(ch[i]) - mean).powi(2)).sum::<f64>() / n;
            s += var.sqrt();
        }
        per_block.push(s / values.len() as f64);
    }
    if per_block.is_empty() {
        return 0.0;
    }
    per_block.iter().sum::<f64>() / per_block.len() as f64
}
