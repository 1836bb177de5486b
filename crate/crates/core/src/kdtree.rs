//! Static KD-tree over integer voxel positions with exact k-nearest-neighbor
//! queries.
//!
//! Results are ordered by `(distance, index)`, so equal distances resolve to
//! the smaller point index. Canonical clouds are Morton sorted, which makes
//! this the Morton tie-break the codec needs. Queries accept a predicate
//! that restricts which indexed points may be returned; pruning stays exact
//! because the predicate only removes candidates.

use std::collections::BinaryHeap;

/// Distance used by a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Manhattan,
    SquaredEuclidean,
}

impl Metric {
    #[inline]
    pub fn distance(self, a: [u32; 3], b: [u32; 3]) -> u64 {
        let d = [
            u64::from(a[0].abs_diff(b[0])),
            u64::from(a[1].abs_diff(b[1])),
            u64::from(a[2].abs_diff(b[2])),
        ];
        match self {
            Metric::Manhattan => d[0] + d[1] + d[2],
            Metric::SquaredEuclidean => d[0] * d[0] + d[1] * d[1] + d[2] * d[2],
        }
    }

    #[inline]
    fn to_box(self, q: [u32; 3], lo: [u32; 3], hi: [u32; 3]) -> u64 {
        let mut gaps = [0u64; 3];
        for a in 0..3 {
            gaps[a] = if q[a] < lo[a] {
                u64::from(lo[a] - q[a])
            } else if q[a] > hi[a] {
                u64::from(q[a] - hi[a])
            } else {
                0
            };
        }
        match self {
            Metric::Manhattan => gaps.iter().sum(),
            Metric::SquaredEuclidean => gaps.iter().map(|g| g * g).sum(),
        }
    }
}

/// A query result: index of the indexed point and its distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Neighbor {
    pub dist: u64,
    pub index: u32,
}

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
struct Node {
    lo: [u32; 3],
    hi: [u32; 3],
    /// Points of the subtree are `items[start..end]`; leaves have
    /// `left == u32::MAX`.
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

#[derive(Clone, Debug, Default)]
pub struct KdTree {
    items: Vec<(u32, [u32; 3])>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// Builds a tree over `(index, position)` pairs. Indices should be unique.
    pub fn build(points: impl IntoIterator<Item = (u32, [u32; 3])>) -> Self {
        let mut tree = KdTree {
            items: points.into_iter().collect(),
            nodes: Vec::new(),
        };
        if !tree.items.is_empty() {
            let n = tree.items.len();
            tree.build_node(0, n);
        }
        tree
    }

    /// Tree over `positions[i]` for every `i` in `indices`.
    pub fn from_indices(positions: &[[u32; 3]], indices: &[u32]) -> Self {
        Self::build(indices.iter().map(|&i| (i, positions[i as usize])))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let slice = &self.items[start..end];
        let mut lo = [u32::MAX; 3];
        let mut hi = [0u32; 3];
        for (_, p) in slice {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            lo,
            hi,
            start: start as u32,
            end: end as u32,
            left: u32::MAX,
            right: u32::MAX,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..3).max_by_key(|&a| (hi[a] - lo[a], 2 - a)).unwrap();
        let mid = (end - start) / 2;
        self.items[start..end].select_nth_unstable_by_key(mid, |&(i, p)| (p[axis], i));
        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        let node = &mut self.nodes[id as usize];
        node.left = left;
        node.right = right;
        id
    }

    /// The `k` nearest accepted points to `query`, sorted by
    /// `(distance, index)`. Returns fewer when fewer points are accepted.
    pub fn knn(&self, query: [u32; 3], k: usize, metric: Metric, accept: impl Fn(u32) -> bool) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, metric, &accept, &mut heap);
        heap.into_sorted_vec()
    }

    /// Nearest accepted point, if any.
    pub fn nearest(&self, query: [u32; 3], metric: Metric, accept: impl Fn(u32) -> bool) -> Option<Neighbor> {
        self.knn(query, 1, metric, accept).into_iter().next()
    }

    fn search(
        &self,
        node: u32,
        q: [u32; 3],
        k: usize,
        metric: Metric,
        accept: &impl Fn(u32) -> bool,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        let n = &self.nodes[node as usize];
        if heap.len() == k && metric.to_box(q, n.lo, n.hi) > heap.peek().unwrap().dist {
            return;
        }
        if n.left == u32::MAX {
            for &(index, p) in &self.items[n.start as usize..n.end as usize] {
                if !accept(index) {
                    continue;
                }
                let cand = Neighbor {
                    dist: metric.distance(q, p),
                    index,
                };
                if heap.len() < k {
                    heap.push(cand);
                } else if cand < *heap.peek().unwrap() {
                    heap.pop();
                    heap.push(cand);
                }
            }
            return;
        }
        let (l, r) = (&self.nodes[n.left as usize], &self.nodes[n.right as usize]);
        let (dl, dr) = (metric.to_box(q, l.lo, l.hi), metric.to_box(q, r.lo, r.hi));
        let (first, second) = if dl <= dr { (n.left, n.right) } else { (n.right, n.left) };
        self.search(first, q, k, metric, accept, heap);
        self.search(second, q, k, metric, accept, heap);
    }
}

/// Exhaustive reference search with the same ordering contract.
pub fn brute_force_knn(
    positions: &[[u32; 3]],
    candidates: &[u32],
    query: [u32; 3],
    k: usize,
    metric: Metric,
) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = candidates
        .iter()
        .map(|&i| Neighbor {
            dist: metric.distance(query, positions[i as usize]),
            index: i,
        })
        .collect();
    all.sort_unstable();
    all.truncate(k);
    all
}
