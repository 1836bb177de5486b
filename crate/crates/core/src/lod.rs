//! Hybrid levels of detail.
//!
//! The first `T` refinement layers (the base layer) come from greedy
//! distance-based subsampling with a decreasing Manhattan threshold per
//! level. The remaining points are dealt round-robin into `L - T` inference
//! layers. Every point except the very first gets `k` nearest neighbors:
//! base points may use any earlier point in coding order (inter and intra),
//! inference points only points of strictly earlier layers.
//!
//! The structure depends on geometry and configuration alone, so the
//! decoder rebuilds it bit-identically.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kdtree::{KdTree, Metric, Neighbor};

/// How the per-level minimum distances of the base layer are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSchedule {
    /// `schedule[t] = 2^(T-1-t) * d_min`, with `d_min` searched so the base
    /// layer holds roughly `base_fraction` of the points.
    Auto { base_fraction: f64 },
    /// Explicit thresholds, one per base level, non-increasing.
    Explicit(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LodConfig {
    /// `T`: number of distance-sampled refinement layers.
    pub base_levels: usize,
    /// `L`: total number of refinement layers.
    pub total_levels: usize,
    /// `k`: neighbors per point.
    pub neighbors: usize,
    pub schedule: DistanceSchedule,
}

impl LodConfig {
    /// Object point clouds: T=8, L=24, k=11.
    pub fn object() -> Self {
        Self {
            base_levels: 8,
            total_levels: 24,
            neighbors: 11,
            schedule: DistanceSchedule::Auto { base_fraction: 0.05 },
        }
    }

    /// LiDAR sweeps: T=8, L=16, k=9.
    pub fn lidar() -> Self {
        Self {
            base_levels: 8,
            total_levels: 16,
            neighbors: 9,
            schedule: DistanceSchedule::Auto { base_fraction: 0.05 },
        }
    }

    /// CPU-sized setting: T=8, L=16, k=7.
    pub fn desk() -> Self {
        Self {
            base_levels: 8,
            total_levels: 16,
            neighbors: 7,
            schedule: DistanceSchedule::Auto { base_fraction: 0.05 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_levels < 1 || self.base_levels >= self.total_levels {
            return Err(Error::Config(format!(
                "need 1 <= T < L, got T={} L={}",
                self.base_levels, self.total_levels
            )));
        }
        if self.total_levels > u16::MAX as usize {
            return Err(Error::Config("too many refinement layers".into()));
        }
        if self.neighbors < 1 || self.neighbors > 64 {
            return Err(Error::Config(format!("neighbor count {} outside 1..=64", self.neighbors)));
        }
        match &self.schedule {
            DistanceSchedule::Auto { base_fraction } if !(*base_fraction > 0.0 && *base_fraction <= 1.0) => {
                return Err(Error::Config(format!("base fraction {base_fraction} outside (0, 1]")));
            }
            DistanceSchedule::Explicit(s) => check_schedule(s, self.base_levels)?,
            _ => {}
        }
        Ok(())
    }
}

impl Default for LodConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn check_schedule(schedule: &[u64], levels: usize) -> Result<()> {
    if schedule.len() != levels {
        return Err(Error::Config(format!(
            "distance schedule has {} entries for {levels} base levels",
            schedule.len()
        )));
    }
    if schedule.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Config("distance schedule must be non-increasing".into()));
    }
    Ok(())
}

/// Refinement layers plus per-point neighbor lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LodStructure {
    /// `R_1..R_L`, each in Morton (index) order.
    pub layers: Vec<Vec<u32>>,
    /// `T`.
    pub base_levels: usize,
    pub k: usize,
    /// Realized base-layer distance thresholds.
    pub schedule: Vec<u64>,
    /// Zero-based layer of each point.
    pub layer_of_point: Vec<u16>,
    offsets: Vec<u32>,
    neighbor_index: Vec<u32>,
    neighbor_dist: Vec<u32>,
}

impl LodStructure {
    pub fn point_count(&self) -> usize {
        self.layer_of_point.len()
    }

    /// Neighbor indices of point `p`, nearest first. Empty only for the
    /// first point in coding order.
    pub fn neighbors(&self, p: u32) -> &[u32] {
        let (a, b) = (self.offsets[p as usize] as usize, self.offsets[p as usize + 1] as usize);
        &self.neighbor_index[a..b]
    }

    /// Manhattan distances matching [`neighbors`](Self::neighbors).
    pub fn distances(&self, p: u32) -> &[u32] {
        let (a, b) = (self.offsets[p as usize] as usize, self.offsets[p as usize + 1] as usize);
        &self.neighbor_dist[a..b]
    }

    /// Points of `R_1..R_T` concatenated in coding order.
    pub fn base_points(&self) -> Vec<u32> {
        self.layers[..self.base_levels].concat()
    }

    /// Points of `R_{T+1}..R_L` concatenated in coding order.
    pub fn inference_points(&self) -> Vec<u32> {
        self.layers[self.base_levels..].concat()
    }

    pub fn base_point_count(&self) -> usize {
        self.layers[..self.base_levels].iter().map(Vec::len).sum()
    }

    pub fn inference_point_count(&self) -> usize {
        self.point_count() - self.base_point_count()
    }

    /// Indices of the inference layers within `layers`.
    pub fn inference_layer_range(&self) -> std::ops::Range<usize> {
        self.base_levels..self.layers.len()
    }

    /// CRC-32 over every field; equal digests mean equal structures in practice.
    pub fn digest(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(&(self.base_levels as u32).to_le_bytes());
        h.update(&(self.k as u32).to_le_bytes());
        for s in &self.schedule {
            h.update(&s.to_le_bytes());
        }
        for layer in &self.layers {
            h.update(&(layer.len() as u32).to_le_bytes());
            for p in layer {
                h.update(&p.to_le_bytes());
            }
        }
        for v in self.offsets.iter().chain(&self.neighbor_index).chain(&self.neighbor_dist) {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }
}

/// Hash grid answering "is any stored point within Manhattan distance
/// `radius` of q", with cell edge `radius + 1` so only the 27 surrounding
/// cells need checking.
struct OccupancyGrid {
    cell: u64,
    radius: u64,
    cells: HashMap<[u64; 3], Vec<[u32; 3]>>,
}

impl OccupancyGrid {
    fn new(radius: u64) -> Self {
        Self {
            cell: radius.saturating_add(1),
            radius,
            cells: HashMap::new(),
        }
    }

    fn key(&self, p: [u32; 3]) -> [u64; 3] {
        p.map(|c| u64::from(c) / self.cell)
    }

    fn insert(&mut self, p: [u32; 3]) {
        let key = self.key(p);
        self.cells.entry(key).or_default().push(p);
    }

    fn any_within(&self, q: [u32; 3]) -> bool {
        let key = self.key(q);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let k = [key[0] as i64 + dx, key[1] as i64 + dy, key[2] as i64 + dz];
                    if k.iter().any(|&c| c < 0) {
                        continue;
                    }
                    if let Some(pts) = self.cells.get(&k.map(|c| c as u64)) {
                        if pts.iter().any(|&p| Metric::Manhattan.distance(p, q) <= self.radius) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Greedy distance-based subsampling into `R_1..R_T`.
///
/// At level `t` the points not yet accepted are scanned in Morton order; a
/// point is accepted when its Manhattan distance to every point accepted so
/// far (previous levels included) exceeds `schedule[t]`. Returns the layers
/// and the never-accepted remainder in Morton order.
pub fn build_base_layers(
    positions: &[[u32; 3]],
    levels: usize,
    schedule: &[u64],
) -> Result<(Vec<Vec<u32>>, Vec<u32>)> {
    if positions.is_empty() {
        return Err(invalid("cannot build levels of detail for an empty cloud"));
    }
    check_schedule(schedule, levels)?;
    let mut accepted = vec![false; positions.len()];
    let mut accepted_list: Vec<u32> = Vec::new();
    let mut layers = Vec::with_capacity(levels);
    for &radius in schedule {
        let mut layer = Vec::new();
        if radius == 0 {
            // Positions are unique, so every remaining point is farther than 0.
            for (i, a) in accepted.iter_mut().enumerate() {
                if !*a {
                    *a = true;
                    layer.push(i as u32);
                }
            }
        } else {
            let mut grid = OccupancyGrid::new(radius);
            for &i in &accepted_list {
                grid.insert(positions[i as usize]);
            }
            for i in 0..positions.len() {
                if accepted[i] || grid.any_within(positions[i]) {
                    continue;
                }
                accepted[i] = true;
                grid.insert(positions[i]);
                layer.push(i as u32);
            }
        }
        accepted_list.extend_from_slice(&layer);
        layers.push(layer);
    }
    let remainder = (0..positions.len() as u32).filter(|&i| !accepted[i as usize]).collect();
    Ok((layers, remainder))
}

/// Uniform sampling of the remainder: remainder index `i` goes to inference
/// layer `i mod count`.
pub fn build_inference_layers(remainder: &[u32], count: usize) -> Result<Vec<Vec<u32>>> {
    if count < 1 {
        return Err(Error::Config("need at least one inference layer".into()));
    }
    let mut layers = vec![Vec::with_capacity(remainder.len() / count + 1); count];
    for (i, &p) in remainder.iter().enumerate() {
        layers[i % count].push(p);
    }
    Ok(layers)
}

fn single_level_count(positions: &[[u32; 3]], radius: u64) -> usize {
    let mut grid = OccupancyGrid::new(radius);
    let mut count = 0;
    for &p in positions {
        if !grid.any_within(p) {
            grid.insert(p);
            count += 1;
        }
    }
    count
}

/// Geometric schedule `2^(T-1-t) * d_min` with `d_min >= 1` chosen so that
/// a single greedy pass at `d_min` keeps about `fraction` of the points.
pub fn auto_schedule(positions: &[[u32; 3]], levels: usize, fraction: f64) -> Vec<u64> {
    let n = positions.len();
    let target = ((fraction * n as f64).round() as usize).max(1);
    let max_coord = positions.iter().flat_map(|p| p.iter().copied()).max().unwrap_or(0);
    let (mut lo, mut hi) = (1u64, 3 * u64::from(max_coord) + 1);
    // Smallest radius whose pass keeps at most `target` points.
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if single_level_count(positions, mid) <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut d_min = lo;
    if d_min > 1 {
        let below = single_level_count(positions, d_min - 1);
        let at = single_level_count(positions, d_min);
        if below.abs_diff(target) < at.abs_diff(target) {
            d_min -= 1;
        }
    }
    (0..levels)
        .map(|t| d_min.saturating_mul(1u64.checked_shl((levels - 1 - t) as u32).unwrap_or(u64::MAX)))
        .collect()
}

/// Repeats the nearest neighbor up to length `k`. Copies go right after it
/// so the list stays sorted by distance.
fn pad(found: Vec<Neighbor>, k: usize) -> Vec<Neighbor> {
    if found.is_empty() || found.len() >= k {
        return found;
    }
    let mut out = vec![found[0]; k - found.len() + 1];
    out.extend_from_slice(&found[1..]);
    out
}

/// k nearest `candidates` (Manhattan, ties to the lower index) for every
/// point of `layer_points`. Lists shorter than `k` are padded by repeating
/// the nearest candidate.
pub fn knn_for_layer(positions: &[[u32; 3]], layer_points: &[u32], candidates: &[u32], k: usize) -> Vec<Vec<Neighbor>> {
    let tree = KdTree::from_indices(positions, candidates);
    layer_points
        .par_iter()
        .map(|&p| pad(tree.knn(positions[p as usize], k, Metric::Manhattan, |_| true), k))
        .collect()
}

/// Builds the full hybrid LoD for a canonical cloud's positions.
pub fn build(positions: &[[u32; 3]], config: &LodConfig) -> Result<LodStructure> {
    config.validate()?;
    let n = positions.len();
    if n == 0 {
        return Err(invalid("cannot build levels of detail for an empty cloud"));
    }
    if n > u32::MAX as usize / 2 {
        return Err(invalid("cloud too large"));
    }
    let schedule = match &config.schedule {
        DistanceSchedule::Auto { base_fraction } => auto_schedule(positions, config.base_levels, *base_fraction),
        DistanceSchedule::Explicit(s) => s.clone(),
    };
    let (mut layers, remainder) = build_base_layers(positions, config.base_levels, &schedule)?;
    layers.extend(build_inference_layers(&remainder, config.total_levels - config.base_levels)?);

    let mut layer_of_point = vec![0u16; n];
    let mut rank = vec![0u32; n];
    let mut next = 0u32;
    for (t, layer) in layers.iter().enumerate() {
        for &p in layer {
            layer_of_point[p as usize] = t as u16;
            rank[p as usize] = next;
            next += 1;
        }
    }

    let k = config.neighbors;
    let mut lists: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
    let base: Vec<u32> = layers[..config.base_levels].concat();
    let base_tree = KdTree::from_indices(positions, &base);
    let base_lists: Vec<Vec<Neighbor>> = base
        .par_iter()
        .map(|&p| {
            let r = rank[p as usize];
            let found = base_tree.knn(positions[p as usize], k, Metric::Manhattan, |j| rank[j as usize] < r);
            pad(found, k)
        })
        .collect();
    for (&p, list) in base.iter().zip(base_lists) {
        lists[p as usize] = list;
    }
    let mut available = base;
    for layer in &layers[config.base_levels..] {
        if layer.is_empty() {
            continue;
        }
        for (&p, list) in layer.iter().zip(knn_for_layer(positions, layer, &available, k)) {
            lists[p as usize] = list;
        }
        available.extend_from_slice(layer);
    }

    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbor_index = Vec::with_capacity(n * k);
    let mut neighbor_dist = Vec::with_capacity(n * k);
    offsets.push(0u32);
    for list in &lists {
        for nb in list {
            neighbor_index.push(nb.index);
            neighbor_dist.push(u32::try_from(nb.dist).map_err(|_| invalid("neighbor distance overflow"))?);
        }
        offsets.push(neighbor_index.len() as u32);
    }
    Ok(LodStructure {
        layers,
        base_levels: config.base_levels,
        k,
        schedule,
        layer_of_point,
        offsets,
        neighbor_index,
        neighbor_dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kdtree::brute_force_knn;
    use proptest::prelude::*;

    fn line(xs: &[u32]) -> Vec<[u32; 3]> {
        xs.iter().map(|&x| [x, 0, 0]).collect()
    }

    #[test]
    fn single_point_base() {
        let (layers, rest) = build_base_layers(&[[3, 3, 3]], 1, &[4]).unwrap();
        assert_eq!(layers, vec![vec![0]]);
        assert!(rest.is_empty());
    }

    #[test]
    fn collinear_hand_trace() {
        let (layers, rest) = build_base_layers(&line(&[0, 4, 8, 12]), 2, &[7, 3]).unwrap();
        assert_eq!(layers, vec![vec![0, 2], vec![1, 3]]);
        assert!(rest.is_empty());
    }

    #[test]
    fn zero_threshold_accepts_everything() {
        let pts = line(&[0, 1, 2, 3, 9]);
        let (layers, rest) = build_base_layers(&pts, 1, &[0]).unwrap();
        assert_eq!(layers, vec![vec![0, 1, 2, 3, 4]]);
        assert!(rest.is_empty());
    }

    #[test]
    fn base_layer_errors() {
        assert!(build_base_layers(&[], 1, &[1]).is_err());
        assert!(build_base_layers(&line(&[0]), 2, &[1]).is_err());
        assert!(build_base_layers(&line(&[0]), 2, &[1, 2]).is_err());
    }

    #[test]
    fn inference_modulo_assignment() {
        let layers = build_inference_layers(&[0, 1, 2, 3, 4, 5], 3).unwrap();
        assert_eq!(layers, vec![vec![0, 3], vec![1, 4], vec![2, 5]]);
        let sizes: Vec<usize> = build_inference_layers(&(0..14).collect::<Vec<_>>(), 2)
            .unwrap()
            .iter()
            .map(Vec::len)
            .collect();
        assert_eq!(sizes, vec![7, 7]);
        assert_eq!(build_inference_layers(&[], 4).unwrap(), vec![Vec::<u32>::new(); 4]);
        assert!(build_inference_layers(&[1], 0).is_err());
    }

    #[test]
    fn knn_brute_force_example() {
        let pos = vec![[0, 0, 0], [1, 0, 0], [0, 2, 0], [3, 3, 3]];
        let r = knn_for_layer(&pos, &[0], &[1, 2, 3], 2);
        assert_eq!(r[0], vec![Neighbor { dist: 1, index: 1 }, Neighbor { dist: 2, index: 2 }]);
    }

    #[test]
    fn knn_single_candidate_and_padding() {
        let pos = vec![[0, 0, 0], [5, 0, 0]];
        assert_eq!(knn_for_layer(&pos, &[0], &[1], 1)[0], vec![Neighbor { dist: 5, index: 1 }]);
        assert_eq!(knn_for_layer(&pos, &[0], &[1], 3)[0], vec![Neighbor { dist: 5, index: 1 }; 3]);
    }

    #[test]
    fn knn_tie_prefers_smaller_morton_index() {
        // Morton keys: (1,0,0) -> 1, (0,1,0) -> 2; canonical indices follow.
        let pos = vec![[0, 0, 0], [1, 0, 0], [0, 1, 0]];
        assert_eq!(knn_for_layer(&pos, &[0], &[2, 1], 1)[0], vec![Neighbor { dist: 1, index: 1 }]);
    }

    fn grid_cloud(side: u32) -> Vec<[u32; 3]> {
        let mut pts = Vec::new();
        for z in 0..side {
            for y in 0..side {
                for x in 0..side {
                    if (x * 7 + y * 3 + z) % 4 != 0 {
                        pts.push([x, y, z]);
                    }
                }
            }
        }
        let mut keyed: Vec<_> = pts.into_iter().map(|p| (crate::io::morton_code(p).unwrap(), p)).collect();
        keyed.sort();
        keyed.into_iter().map(|(_, p)| p).collect()
    }

    #[test]
    fn structure_invariants() {
        let pos = grid_cloud(9);
        let cfg = LodConfig::desk();
        let lod = build(&pos, &cfg).unwrap();
        assert_eq!(lod.layers.len(), cfg.total_levels);
        let total: usize = lod.layers.iter().map(Vec::len).sum();
        assert_eq!(total, pos.len());
        let mut seen = vec![false; pos.len()];
        for layer in &lod.layers {
            for &p in layer {
                assert!(!seen[p as usize], "layers overlap");
                seen[p as usize] = true;
            }
        }
        let first = lod.layers[0][0];
        assert_eq!(first, 0);
        for p in 0..pos.len() as u32 {
            let nbrs = lod.neighbors(p);
            let d = lod.distances(p);
            if p == first {
                assert!(nbrs.is_empty());
                continue;
            }
            assert_eq!(nbrs.len(), cfg.neighbors);
            assert!(d.windows(2).all(|w| w[0] <= w[1]));
            assert!(d.iter().all(|&x| x >= 1));
            let t = lod.layer_of_point[p as usize] as usize;
            for &j in nbrs {
                let tj = lod.layer_of_point[j as usize] as usize;
                if t >= cfg.base_levels {
                    assert!(tj < t, "inference neighbor from same or later layer");
                } else {
                    assert!(tj <= t);
                }
            }
        }
        assert_eq!(build(&pos, &cfg).unwrap(), lod);
    }

    #[test]
    fn auto_schedule_targets_fraction() {
        let pos = grid_cloud(24);
        let cfg = LodConfig::desk();
        let lod = build(&pos, &cfg).unwrap();
        let frac = lod.base_point_count() as f64 / pos.len() as f64;
        assert!(frac > 0.01 && frac < 0.15, "base fraction {frac}");
        assert!(lod.schedule.windows(2).all(|w| w[0] > w[1]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn neighbor_lists_match_exhaustive_oracle(
            pts in prop::collection::hash_set((0u32..24, 0u32..24, 0u32..8), 2..200),
            k in 1usize..8,
        ) {
            let mut keyed: Vec<_> = pts.into_iter().map(|p| [p.0, p.1, p.2]).map(|p| (crate::io::morton_code(p).unwrap(), p)).collect();
            keyed.sort();
            let pos: Vec<[u32; 3]> = keyed.into_iter().map(|(_, p)| p).collect();
            let cfg = LodConfig { base_levels: 3, total_levels: 6, neighbors: k, schedule: DistanceSchedule::Explicit(vec![8, 4, 2]) };
            let lod = build(&pos, &cfg).unwrap();
            let order: Vec<u32> = lod.layers.concat();
            for (r, &p) in order.iter().enumerate().skip(1) {
                let t = lod.layer_of_point[p as usize] as usize;
                let candidates: Vec<u32> = if t < cfg.base_levels {
                    order[..r].to_vec()
                } else {
                    order.iter().copied().filter(|&j| (lod.layer_of_point[j as usize] as usize) < t).collect()
                };
                let expect = pad(brute_force_knn(&pos, &candidates, pos[p as usize], k, Metric::Manhattan), k);
                let got: Vec<(u32, u32)> = lod.neighbors(p).iter().copied().zip(lod.distances(p).iter().copied()).collect();
                let want: Vec<(u32, u32)> = expect.iter().map(|n| (n.index, n.dist as u32)).collect();
                prop_assert_eq!(got, want);
            }
        }
    }
}
