//! Block partitioning of the inference layers.
//!
//! The reconstructed base layer is smoothed, clustered on attribute plus
//! scaled position, and every inference point joins the block of its
//! nearest base point. Each block's points of one refinement layer are then
//! cut into fixed-size Morton-ordered batches. Everything here depends only
//! on geometry, decoded base values and header fields, so the decoder
//! replays it exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kdtree::{KdTree, Metric};
use crate::lod::LodStructure;

/// Neighbors averaged when smoothing base attributes, self included.
pub const SMOOTHING_NEIGHBORS: usize = 50;
/// Weight of normalized position against attributes in the clustering features.
pub const POSITION_WEIGHT: f64 = 255.0;
/// Lloyd iteration cap.
pub const MAX_ITERATIONS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    /// Points per batch (`N`).
    pub batch_size: usize,
    /// Target batches per block; fixes the cluster count.
    pub batches_per_block: usize,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            batches_per_block: 32,
            seed: 0,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > 1 << 16 {
            return Err(crate::Error::Config(format!("batch size {} outside 1..=65536", self.batch_size)));
        }
        if self.batches_per_block == 0 {
            return Err(crate::Error::Config("batches_per_block must be at least 1".into()));
        }
        Ok(())
    }
}

/// `ceil(n_infer / (batches_per_block·N))`, clamped to `[1, base_count]`.
pub fn num_clusters(inference_count: usize, base_count: usize, config: &PartitionConfig) -> usize {
    let per_block = config.batches_per_block * config.batch_size;
    inference_count.div_ceil(per_block).clamp(1, base_count.max(1))
}

/// Mean of each channel over the `SMOOTHING_NEIGHBORS` nearest base points
/// (Manhattan, ties to the lower index). `values[c][i]` belongs to
/// `base[i]`; the result has the same layout.
pub fn smooth_base_attributes(positions: &[[u32; 3]], base: &[u32], values: &[Vec<i32>]) -> Vec<Vec<f64>> {
    let tree = KdTree::from_indices(positions, base);
    let slot: std::collections::HashMap<u32, usize> = base.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let k = SMOOTHING_NEIGHBORS.min(base.len());
    let neighborhoods: Vec<Vec<usize>> = base
        .par_iter()
        .map(|&p| {
            tree.knn(positions[p as usize], k, Metric::Manhattan, |_| true)
                .iter()
                .map(|n| slot[&n.index])
                .collect()
        })
        .collect();
    values
        .iter()
        .map(|ch| {
            neighborhoods
                .iter()
                .map(|nb| nb.iter().map(|&j| f64::from(ch[j])).sum::<f64>() / nb.len() as f64)
                .collect()
        })
        .collect()
}

/// Per-axis min-max normalization to `[0, 1]`; a constant axis maps to 0.
pub fn normalize_positions(points: impl IntoIterator<Item = [u32; 3]> + Clone) -> Vec<[f64; 3]> {
    let mut lo = [u32::MAX; 3];
    let mut hi = [0u32; 3];
    for p in points.clone() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    points
        .into_iter()
        .map(|p| {
            std::array::from_fn(|a| {
                let range = hi[a] - lo[a];
                if range == 0 {
                    0.0
                } else {
                    f64::from(p[a] - lo[a]) / f64::from(range)
                }
            })
        })
        .collect()
}

/// Clustering features `[ã_1..ã_c, 255·p̃]` of every base point.
pub fn base_features(positions: &[[u32; 3]], base: &[u32], smoothed: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let norm = normalize_positions(base.iter().map(|&p| positions[p as usize]));
    (0..base.len())
        .map(|i| {
            let mut f: Vec<f64> = smoothed.iter().map(|ch| ch[i]).collect();
            f.extend(norm[i].iter().map(|v| POSITION_WEIGHT * v));
            f
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub labels: Vec<u32>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lower cluster index.
fn nearest_centroid(f: &[f64], centroids: &[Vec<f64>]) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = sq_dist(f, m);
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

/// k-means++ seeding: the first center uniform, the rest drawn with
/// probability proportional to squared distance. When every distance is 0
/// the lowest-index point not yet chosen is taken.
fn seed_centroids(features: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![features[first].clone()];
    let mut d2: Vec<f64> = features.iter().map(|f| sq_dist(f, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && u < acc {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave u at the very top; take the last positive one.
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            chosen.iter().position(|&c| !c).unwrap()
        };
        chosen[pick] = true;
        centroids.push(features[pick].clone());
        for (d, f) in d2.iter_mut().zip(features) {
            *d = d.min(sq_dist(f, &features[pick]));
        }
    }
    centroids
}

/// Seeded k-means with at most `MAX_ITERATIONS` Lloyd steps. An empty
/// cluster takes the point farthest from its centroid (ties to the lower
/// index); if every point sits on its centroid it stays empty.
pub fn kmeans(features: &[Vec<f64>], clusters: usize, seed: u64) -> Result<KMeans> {
    if clusters == 0 {
        return Err(invalid("k-means needs at least one cluster"));
    }
    if clusters > features.len() {
        return Err(invalid(format!("{clusters} clusters for {} points", features.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(features, clusters, &mut rng);
    let mut labels: Vec<u32> = Vec::new();
    let mut objective = Vec::new();
    let dim = features[0].len();
    for _ in 0..MAX_ITERATIONS {
        let assigned: Vec<(u32, f64)> = features.par_iter().map(|f| nearest_centroid(f, &centroids)).collect();
        let new_labels: Vec<u32> = assigned.iter().map(|a| a.0).collect();
        let mut dist: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        objective.push(dist.iter().sum());
        if new_labels == labels {
            break;
        }
        labels = new_labels;

        let mut sums = vec![vec![0.0; dim]; clusters];
        let mut counts = vec![0usize; clusters];
        for (f, &l) in features.iter().zip(&labels) {
            counts[l as usize] += 1;
            for (s, v) in sums[l as usize].iter_mut().zip(f) {
                *s += v;
            }
        }
        for c in 0..clusters {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                continue;
            }
            let far = (0..features.len()).fold(None, |best: Option<usize>, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            });
            if let Some(i) = far.filter(|&i| dist[i] > 0.0) {
                centroids[c] = features[i].clone();
                dist[i] = 0.0;
            }
        }
    }
    Ok(KMeans {
        labels,
        centroids,
        objective,
    })
}

/// Block of each inference point: the block of its Euclidean-nearest base
/// point, ties to the lower index.
pub fn assign_inference_blocks(
    positions: &[[u32; 3]],
    base: &[u32],
    base_bkids: &[u32],
    inference: &[u32],
) -> Result<Vec<u32>> {
    if base.is_empty() {
        return Err(invalid("cannot assign blocks without base points"));
    }
    let tree = KdTree::from_indices(positions, base);
    let slot: std::collections::HashMap<u32, usize> = base.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    Ok(inference
        .par_iter()
        .map(|&p| {
            let n = tree.nearest(positions[p as usize], Metric::SquaredEuclidean, |_| true).expect("tree not empty");
            base_bkids[slot[&n.index]]
        })
        .collect())
}

/// `N` point indices, the first `real` genuine and the rest copies of the
/// last genuine point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub points: Vec<u32>,
    pub real: usize,
}

impl Batch {
    pub fn padded(&self) -> usize {
        self.points.len() - self.real
    }

    pub fn real_points(&self) -> &[u32] {
        &self.points[..self.real]
    }
}

/// Cuts Morton-sorted `points` into batches of `n`, padding the last.
pub fn batch_blocks(points: &[u32], n: usize) -> Vec<Batch> {
    points
        .chunks(n)
        .map(|chunk| {
            let mut pts = chunk.to_vec();
            pts.resize(n, *chunk.last().unwrap());
            Batch {
                points: pts,
                real: chunk.len(),
            }
        })
        .collect()
}

/// Block assignment of the whole cloud and the batches of every inference
/// layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockAssignment {
    pub num_clusters: usize,
    /// Block of every point; base points carry their cluster label.
    pub bkid: Vec<u32>,
    /// Per block, its inference points in Morton order.
    pub blocks: Vec<Vec<u32>>,
    /// Per inference layer, batches ordered by block then Morton order.
    pub layer_batches: Vec<Vec<Batch>>,
}

impl BlockAssignment {
    pub fn digest(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(&(self.num_clusters as u32).to_le_bytes());
        for b in &self.bkid {
            h.update(&b.to_le_bytes());
        }
        for layer in &self.layer_batches {
            h.update(&(layer.len() as u32).to_le_bytes());
            for batch in layer {
                h.update(&(batch.real as u32).to_le_bytes());
                for p in &batch.points {
                    h.update(&p.to_le_bytes());
                }
            }
        }
        h.finalize()
    }
}

/// Groups already-labelled inference points into blocks and batches.
pub fn assemble_batches(lod: &LodStructure, bkid: Vec<u32>, num_clusters: usize, batch_size: usize) -> BlockAssignment {
    let mut blocks = vec![Vec::new(); num_clusters];
    for p in lod.inference_points() {
        blocks[bkid[p as usize] as usize].push(p);
    }
    for b in &mut blocks {
        b.sort_unstable();
    }
    let layer_batches = lod
        .inference_layer_range()
        .map(|t| {
            let t = t as u16;
            blocks
                .iter()
                .flat_map(|block| {
                    let in_layer: Vec<u32> =
                        block.iter().copied().filter(|&p| lod.layer_of_point[p as usize] == t).collect();
                    batch_blocks(&in_layer, batch_size)
                })
                .collect()
        })
        .collect();
    BlockAssignment {
        num_clusters,
        bkid,
        blocks,
        layer_batches,
    }
}

/// Full prior-guided partition. `values[c]` holds reconstructed channel
/// values for every point; only base entries are read.
pub fn partition(
    positions: &[[u32; 3]],
    lod: &LodStructure,
    values: &[Vec<i32>],
    clusters: usize,
    config: &PartitionConfig,
) -> Result<BlockAssignment> {
    let base = lod.base_points();
    let inference = lod.inference_points();
    let mut bkid = vec![0u32; lod.point_count()];
    if !inference.is_empty() {
        let base_values: Vec<Vec<i32>> =
            values.iter().map(|ch| base.iter().map(|&p| ch[p as usize]).collect()).collect();
        let smoothed = smooth_base_attributes(positions, &base, &base_values);
        let features = base_features(positions, &base, &smoothed);
        let km = kmeans(&features, clusters, config.seed)?;
        for (&p, &l) in base.iter().zip(&km.labels) {
            bkid[p as usize] = l;
        }
        let inf = assign_inference_blocks(positions, &base, &km.labels, &inference)?;
        for (&p, l) in inference.iter().zip(inf) {
            bkid[p as usize] = l;
        }
    }
    Ok(assemble_batches(lod, bkid, clusters, config.batch_size))
}

/// Median-split KD partition of `points` into `blocks` leaves, cycling
/// axes x, y, z by depth. Returns a block label per entry of `points`.
pub fn kdtree_partition(positions: &[[u32; 3]], points: &[u32], blocks: usize) -> Result<Vec<u32>> {
    if blocks == 0 || blocks > points.len().max(1) {
        return Err(invalid(format!("{blocks} blocks for {} points", points.len())));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut labels = vec![0u32; points.len()];
    let mut next = 0u32;
    split(positions, points, &mut order, blocks, 0, &mut labels, &mut next);
    Ok(labels)
}

fn split(
    positions: &[[u32; 3]],
    points: &[u32],
    slots: &mut [usize],
    blocks: usize,
    depth: usize,
    labels: &mut [u32],
    next: &mut u32,
) {
    if blocks == 1 {
        for &s in slots.iter() {
            labels[s] = *next;
        }
        *next += 1;
        return;
    }
    let axis = depth % 3;
    slots.sort_unstable_by_key(|&s| (positions[points[s] as usize][axis], points[s]));
    let left_blocks = blocks / 2;
    let cut = slots.len() * left_blocks / blocks;
    let (l, r) = slots.split_at_mut(cut);
    split(positions, points, l, left_blocks, depth + 1, labels, next);
    split(positions, points, r, blocks - left_blocks, depth + 1, labels, next);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lod::{self, LodConfig};
    use proptest::prelude::*;

    #[test]
    fn smoothing_examples() {
        let pos = vec![[0, 0, 0], [1, 0, 0], [5, 0, 0]];
        let s = smooth_base_attributes(&pos, &[0, 1], &[vec![0, 100]]);
        assert_eq!(s, vec![vec![50.0, 50.0]]);
        let s = smooth_base_attributes(&pos, &[2], &[vec![77]]);
        assert_eq!(s, vec![vec![77.0]]);
        let s = smooth_base_attributes(&pos, &[0, 1, 2], &[vec![9, 9, 9], vec![-3, -3, -3]]);
        assert_eq!(s, vec![vec![9.0; 3], vec![-3.0; 3]]);
    }

    #[test]
    fn smoothing_window_is_fifty_nearest() {
        // 60 points on a line with value = x; the window of x=0 is x in 0..50.
        let pos: Vec<[u32; 3]> = (0..60).map(|x| [x, 0, 0]).collect();
        let base: Vec<u32> = (0..60).collect();
        let s = smooth_base_attributes(&pos, &base, &[(0..60).collect()]);
        assert_eq!(s[0][0], 24.5);
        assert_eq!(s[0][59], (10..60).sum::<i32>() as f64 / 50.0);
    }

    #[test]
    fn cluster_count_rule() {
        let c = PartitionConfig { batch_size: 256, batches_per_block: 32, seed: 0 };
        assert_eq!(num_clusters(0, 10, &c), 1);
        assert_eq!(num_clusters(8192, 10, &c), 1);
        assert_eq!(num_clusters(8193, 10, &c), 2);
        assert_eq!(num_clusters(1_000_000, 3, &c), 3);
    }

    #[test]
    fn kmeans_single_cluster_and_errors() {
        let f: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        assert!(kmeans(&f, 1, 0).unwrap().labels.iter().all(|&l| l == 0));
        assert!(kmeans(&f, 11, 0).is_err());
        assert!(kmeans(&f, 0, 0).is_err());
    }

    #[test]
    fn identical_features_share_one_cluster() {
        let f = vec![vec![3.0, 4.0]; 20];
        let km = kmeans(&f, 3, 7).unwrap();
        assert!(km.labels.iter().all(|&l| l == 0));
    }

    /// Optimal 2-means on a line is a single cut of the sorted points.
    fn brute_force_two_means(xs: &[f64]) -> f64 {
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        let cost = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        };
        (1..s.len()).map(|c| cost(&s[..c]) + cost(&s[c..])).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn planted_two_clusters_recovered() {
        let mut xs: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
        xs.extend((0..30).map(|i| 500.0 + (i % 5) as f64));
        let f: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        for seed in 0..5 {
            let km = kmeans(&f, 2, seed).unwrap();
            assert!(km.labels[..30].iter().all(|&l| l == km.labels[0]));
            assert!(km.labels[30..].iter().all(|&l| l == km.labels[30]));
            assert_ne!(km.labels[0], km.labels[30]);
            assert!((km.objective.last().unwrap() - brute_force_two_means(&xs)).abs() < 1e-9);
        }
    }

    #[test]
    fn inference_blocks_follow_nearest_base() {
        let pos = vec![[0, 0, 0], [100, 0, 0], [10, 0, 0], [50, 0, 0], [60, 0, 0]];
        let got = assign_inference_blocks(&pos, &[0, 1], &[0, 1], &[2, 3, 4]).unwrap();
        assert_eq!(got, vec![0, 0, 1]);
        assert_eq!(assign_inference_blocks(&pos, &[1], &[4], &[0, 2]).unwrap(), vec![4, 4]);
        assert!(assign_inference_blocks(&pos, &[], &[], &[0]).is_err());
    }

    #[test]
    fn batching_arithmetic() {
        let pts: Vec<u32> = (0..2050).collect();
        let b = batch_blocks(&pts, 1024);
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|x| x.points.len() == 1024));
        assert_eq!(b[2].real, 2);
        assert_eq!(b[2].padded(), 1022);
        assert!(b[2].points[2..].iter().all(|&p| p == 2049));
        assert_eq!(batch_blocks(&pts[..1024], 1024)[0].padded(), 0);
        let one = batch_blocks(&[7], 16);
        assert_eq!((one.len(), one[0].padded()), (1, 15));
        assert!(batch_blocks(&[], 16).is_empty());
    }

    #[test]
    fn kd_partition_balances_blocks() {
        let pos: Vec<[u32; 3]> = (0..100u32).map(|i| [i % 10, i / 10, 0]).collect();
        let pts: Vec<u32> = (0..100).collect();
        for blocks in [1, 2, 3, 4, 7] {
            let labels = kdtree_partition(&pos, &pts, blocks).unwrap();
            let mut counts = vec![0; blocks];
            labels.iter().for_each(|&l| counts[l as usize] += 1);
            assert!(counts.iter().all(|&c| c >= 100 / blocks - 1 && c <= 100 / blocks + 2), "{counts:?}");
        }
        let labels = kdtree_partition(&pos, &pts, 2).unwrap();
        assert!((0..100).all(|i| labels[i] == u32::from(pos[i][0] >= 5)));
    }

    #[test]
    fn full_partition_invariants() {
        let pos: Vec<[u32; 3]> = (0..4000u32).map(|i| [i % 20, (i / 20) % 20, i / 400]).collect();
        let mut order: Vec<usize> = (0..pos.len()).collect();
        order.sort_by_key(|&i| crate::io::morton_code(pos[i]).unwrap());
        let pos: Vec<[u32; 3]> = order.iter().map(|&i| pos[i]).collect();
        let values: Vec<i32> = pos.iter().map(|p| (p[0] * 10) as i32).collect();
        let lod = lod::build(&pos, &LodConfig::desk()).unwrap();
        let cfg = PartitionConfig { batch_size: 64, batches_per_block: 4, seed: 5 };
        let clusters = num_clusters(lod.inference_point_count(), lod.base_point_count(), &cfg);
        assert!(clusters > 1);
        let a = partition(&pos, &lod, std::slice::from_ref(&values), clusters, &cfg).unwrap();
        let b = partition(&pos, &lod, &[values], clusters, &cfg).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a, b);
        let mut seen = vec![0u32; pos.len()];
        for layer in &a.layer_batches {
            for batch in layer {
                assert_eq!(batch.points.len(), 64);
                assert!(batch.real_points().windows(2).all(|w| w[0] < w[1]));
                let block = a.bkid[batch.points[0] as usize];
                assert!(batch.real_points().iter().all(|&p| a.bkid[p as usize] == block));
                batch.real_points().iter().for_each(|&p| seen[p as usize] += 1);
            }
        }
        for p in 0..pos.len() {
            let infer = lod.layer_of_point[p] as usize >= lod.base_levels;
            assert_eq!(seen[p], u32::from(infer));
        }
    }

    proptest! {
        #[test]
        fn objective_never_increases(
            pts in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 3..80),
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            let f: Vec<Vec<f64>> = pts.iter().map(|&(a, b)| vec![a, b]).collect();
            let k = k.min(f.len());
            let km = kmeans(&f, k, seed).unwrap();
            prop_assert!(km.objective.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-9));
            prop_assert_eq!(km.labels.len(), f.len());
            prop_assert!(km.labels.iter().all(|&l| (l as usize) < k));
            prop_assert_eq!(kmeans(&f, k, seed).unwrap(), km);
        }
    }
}
