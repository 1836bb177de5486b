//! Density-adaptive neighborhood descriptors.
//!
//! Each neighbor's offset from the central point is binned per axis relative
//! to the batch's mean nearest-neighbor spacing, so the same label means
//! "one typical spacing to the left" whether the cloud is dense or sparse.
//! The three axis labels combine into one of `(2n+1)^3` relative-position
//! labels, each owning a learned embedding row.
//!
//! Descriptor layout for a point `i` with neighbors `j_1..j_k`:
//!
//! ```text
//! [ p_i (3, min-max normalized) | E_a(â_i) | E_l(l_j1) E_a(a_j1) E_r(a_j1 - â_i) | ... | for j_k ]
//! ```
//!
//! In color mode `E_a` and `E_r` have one table per channel and the three
//! per-channel embeddings are summed, keeping the dimension independent of
//! the channel count.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::entropy::Real;
use crate::error::{invalid, Error, Result};
use crate::lod::LodStructure;
use crate::predict::{predict_point, ChannelRange};

/// Lower clamp on the batch mean axis spacing, in voxels.
pub const MIN_MEAN_DISTANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaldConfig {
    /// Bins per side; each axis has `2n+1` labels.
    pub n: usize,
    /// Per-axis increasing thresholds `t_0..t_n`, `t_n = +inf`.
    pub thresholds: [Vec<f32>; 3],
    pub k: usize,
    pub label_dim: usize,
    pub attr_dim: usize,
    pub rel_dim: usize,
}

impl DaldConfig {
    fn uniform(k: usize, t: &[f32]) -> Self {
        Self {
            n: t.len() - 1,
            thresholds: [t.to_vec(), t.to_vec(), t.to_vec()],
            k,
            label_dim: 6,
            attr_dim: 3,
            rel_dim: 6,
        }
    }

    /// Object clouds: k=11, thresholds {0,1,3,inf} on every axis.
    pub fn object() -> Self {
        Self::uniform(11, &[0.0, 1.0, 3.0, f32::INFINITY])
    }

    /// LiDAR: k=9, x/y {0.2,1,3,inf}, z {0.2,0.4,1,inf}.
    pub fn lidar() -> Self {
        let xy = vec![0.2, 1.0, 3.0, f32::INFINITY];
        Self {
            thresholds: [xy.clone(), xy, vec![0.2, 0.4, 1.0, f32::INFINITY]],
            ..Self::uniform(9, &[0.0, 1.0, 3.0, f32::INFINITY])
        }
    }

    /// Object thresholds with k=7.
    pub fn desk() -> Self {
        Self::uniform(7, &[0.0, 1.0, 3.0, f32::INFINITY])
    }

    pub fn label_count(&self) -> usize {
        (2 * self.n + 1).pow(3)
    }

    /// `k·(N_El + N_Ea + N_Er) + 3 + N_Ea`.
    pub fn descriptor_dim(&self) -> usize {
        self.k * (self.label_dim + self.attr_dim + self.rel_dim) + 3 + self.attr_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.n > 10 {
            return Err(Error::Config(format!("DALD n={} outside 1..=10", self.n)));
        }
        if self.k < 1 {
            return Err(Error::Config("DALD needs k >= 1".into()));
        }
        for (axis, t) in self.thresholds.iter().enumerate() {
            if t.len() != self.n + 1 {
                return Err(Error::Config(format!(
                    "axis {axis} has {} thresholds, need n+1 = {}",
                    t.len(),
                    self.n + 1
                )));
            }
            if t.iter().any(|v| v.is_nan()) || t.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("axis {axis} thresholds must strictly increase")));
            }
            if t[0] < 0.0 {
                return Err(Error::Config(format!("axis {axis} thresholds must be non-negative")));
            }
            if t[self.n] != f32::INFINITY {
                return Err(Error::Config(format!("axis {axis} last threshold must be +inf")));
            }
        }
        Ok(())
    }
}

impl Default for DaldConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Value domain of a working channel, which fixes its table sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    /// Y, or a single 8-bit attribute: values in 0..=255.
    Unsigned8,
    /// Co or Cg: values in -255..=255.
    Chroma,
}

impl ChannelKind {
    pub fn range(self) -> ChannelRange {
        match self {
            ChannelKind::Unsigned8 => ChannelRange::UNSIGNED_8,
            ChannelKind::Chroma => ChannelRange::CHROMA,
        }
    }

    pub fn attr_rows(self) -> usize {
        match self {
            ChannelKind::Unsigned8 => 256,
            ChannelKind::Chroma => 512,
        }
    }

    pub fn rel_rows(self) -> usize {
        match self {
            ChannelKind::Unsigned8 => 511,
            ChannelKind::Chroma => 1023,
        }
    }

    fn attr_offset(self) -> i32 {
        match self {
            ChannelKind::Unsigned8 => 0,
            ChannelKind::Chroma => 255,
        }
    }

    fn rel_offset(self) -> i32 {
        match self {
            ChannelKind::Unsigned8 => 255,
            ChannelKind::Chroma => 510,
        }
    }

    fn attr_index(self, a: i32) -> Result<u16> {
        table_index(a + self.attr_offset(), self.attr_rows())
    }

    fn rel_index(self, delta: i32) -> Result<u16> {
        table_index(delta + self.rel_offset(), self.rel_rows())
    }
}

fn table_index(i: i32, rows: usize) -> Result<u16> {
    if i < 0 || i as usize >= rows {
        return Err(invalid(format!("embedding index {i} outside table of {rows} rows")));
    }
    Ok(i as u16)
}

/// Axis label `sign(δ)·k + n` where `t_{k-1} < |δ|/d̄ <= t_k`.
pub fn axis_label(delta: i64, mean_distance: f64, thresholds: &[f32], n: usize) -> usize {
    let ratio = delta.unsigned_abs() as f64 / mean_distance;
    // First k with ratio <= t_k; t_n = inf guarantees one exists.
    let k = thresholds.partition_point(|&t| f64::from(t) < ratio).min(n);
    match delta.signum() {
        0 => n,
        s if s > 0 => n + k,
        _ => n - k,
    }
}

/// `l_x + l_y·(2n+1) + l_z·(2n+1)^2`.
pub fn combine_label(lx: usize, ly: usize, lz: usize, n: usize) -> usize {
    let side = 2 * n + 1;
    lx + ly * side + lz * side * side
}

/// Per-axis mean absolute offset from each point to its nearest neighbor,
/// clamped below at [`MIN_MEAN_DISTANCE`].
pub fn batch_mean_axis_distance(offsets: &[[i64; 3]]) -> Result<[f64; 3]> {
    if offsets.is_empty() {
        return Err(invalid("mean neighbor distance of an empty batch"));
    }
    let mut sums = [0u64; 3];
    for o in offsets {
        for a in 0..3 {
            sums[a] += o[a].unsigned_abs();
        }
    }
    Ok(sums.map(|s| (s as f64 / offsets.len() as f64).max(MIN_MEAN_DISTANCE)))
}

/// Embedding-table indices and normalized positions for one batch; the
/// model-independent half of the descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchFeatures {
    /// Rows including padding.
    pub rows: usize,
    /// Leading rows that are real points.
    pub real: usize,
    pub k: usize,
    pub positions: Vec<[f64; 3]>,
    /// `rows × k` combined relative-position labels.
    pub labels: Vec<u16>,
    /// Per channel, per row: prediction `â_i`.
    pub predictions: Vec<Vec<i32>>,
    /// Per channel, per row: `E_a` index of `â_i`.
    pub center_attr: Vec<Vec<u16>>,
    /// Per channel, `rows × k`: `E_a` index of `a_j`.
    pub neighbor_attr: Vec<Vec<u16>>,
    /// Per channel, `rows × k`: `E_r` index of `a_j - â_i`.
    pub neighbor_rel: Vec<Vec<u16>>,
}

/// Gathers descriptor inputs for the batch `points` (padding included, the
/// first `real` entries are genuine). `values[c]` must hold reconstructed
/// values for every neighbor of the batch.
pub fn build_features(
    config: &DaldConfig,
    kinds: &[ChannelKind],
    positions: &[[u32; 3]],
    lod: &LodStructure,
    values: &[Vec<i32>],
    points: &[u32],
    real: usize,
) -> Result<BatchFeatures> {
    let k = config.k;
    if points.is_empty() || real == 0 || real > points.len() {
        return Err(invalid("batch needs at least one real point"));
    }
    if values.len() != kinds.len() {
        return Err(invalid("channel count mismatch"));
    }
    for &p in points {
        if lod.neighbors(p).len() != k {
            return Err(Error::ModelMismatch(format!(
                "point {p} has {} neighbors, descriptor expects k={k}",
                lod.neighbors(p).len()
            )));
        }
    }

    let offset = |p: u32, j: u32| -> [i64; 3] {
        let (a, b) = (positions[p as usize], positions[j as usize]);
        [0, 1, 2].map(|ax| i64::from(b[ax]) - i64::from(a[ax]))
    };
    let nearest: Vec<[i64; 3]> = points[..real].iter().map(|&p| offset(p, lod.neighbors(p)[0])).collect();
    let dbar = batch_mean_axis_distance(&nearest)?;

    let mut lo = [u32::MAX; 3];
    let mut hi = [0u32; 3];
    for &p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(positions[p as usize][a]);
            hi[a] = hi[a].max(positions[p as usize][a]);
        }
    }
    let norm = points
        .iter()
        .map(|&p| {
            [0, 1, 2].map(|a| {
                let range = hi[a] - lo[a];
                if range == 0 {
                    0.0
                } else {
                    f64::from(positions[p as usize][a] - lo[a]) / f64::from(range)
                }
            })
        })
        .collect();

    let n = config.n;
    let mut labels = Vec::with_capacity(points.len() * k);
    for &p in points {
        for &j in lod.neighbors(p) {
            let o = offset(p, j);
            let l = [0, 1, 2].map(|a| axis_label(o[a], dbar[a], &config.thresholds[a], n));
            labels.push(combine_label(l[0], l[1], l[2], n) as u16);
        }
    }

    let mut predictions = Vec::with_capacity(kinds.len());
    let mut center_attr = Vec::with_capacity(kinds.len());
    let mut neighbor_attr = Vec::with_capacity(kinds.len());
    let mut neighbor_rel = Vec::with_capacity(kinds.len());
    for (c, &kind) in kinds.iter().enumerate() {
        let vals = &values[c];
        let mut pred = Vec::with_capacity(points.len());
        let mut ca = Vec::with_capacity(points.len());
        let mut na = Vec::with_capacity(points.len() * k);
        let mut nr = Vec::with_capacity(points.len() * k);
        for &p in points {
            let ph = predict_point(vals, lod, p).expect("batch points have neighbors");
            pred.push(ph);
            ca.push(kind.attr_index(ph)?);
            for &j in lod.neighbors(p) {
                let a = vals[j as usize];
                na.push(kind.attr_index(a)?);
                nr.push(kind.rel_index(a - ph)?);
            }
        }
        predictions.push(pred);
        center_attr.push(ca);
        neighbor_attr.push(na);
        neighbor_rel.push(nr);
    }
    Ok(BatchFeatures {
        rows: points.len(),
        real,
        k,
        positions: norm,
        labels,
        predictions,
        center_attr,
        neighbor_attr,
        neighbor_rel,
    })
}

/// Learned embedding tables: one shared label table, and per channel an
/// attribute and a relative-attribute table.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings<R> {
    pub label: Array2<R>,
    pub attr: Vec<Array2<R>>,
    pub rel: Vec<Array2<R>>,
}

impl<R: Real> Embeddings<R> {
    pub fn zeros(config: &DaldConfig, kinds: &[ChannelKind]) -> Self {
        Self {
            label: Array2::zeros((config.label_count(), config.label_dim)),
            attr: kinds.iter().map(|k| Array2::zeros((k.attr_rows(), config.attr_dim))).collect(),
            rel: kinds.iter().map(|k| Array2::zeros((k.rel_rows(), config.rel_dim))).collect(),
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.label.ncols(), self.attr[0].ncols(), self.rel[0].ncols())
    }

    /// Descriptor dimension these tables produce for `k` neighbors.
    pub fn descriptor_dim(&self, k: usize) -> usize {
        let (el, ea, er) = self.dims();
        k * (el + ea + er) + 3 + ea
    }

    /// Descriptors `g_i` for every row of the batch.
    pub fn assemble(&self, f: &BatchFeatures) -> Array2<R> {
        let (el, ea, er) = self.dims();
        let k = f.k;
        let mut g = Array2::<R>::zeros((f.rows, self.descriptor_dim(k)));
        for (i, mut row) in g.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            for a in 0..3 {
                row[a] = R::of(f.positions[i][a]);
            }
            for c in 0..f.center_attr.len() {
                add_row(&mut row[3..3 + ea], &self.attr[c], f.center_attr[c][i]);
            }
            let mut at = 3 + ea;
            for j in 0..k {
                let e = i * k + j;
                add_row(&mut row[at..at + el], &self.label, f.labels[e]);
                at += el;
                for c in 0..f.neighbor_attr.len() {
                    add_row(&mut row[at..at + ea], &self.attr[c], f.neighbor_attr[c][e]);
                }
                at += ea;
                for c in 0..f.neighbor_rel.len() {
                    add_row(&mut row[at..at + er], &self.rel[c], f.neighbor_rel[c][e]);
                }
                at += er;
            }
        }
        g
    }

    /// Scatter-adds `dL/dg` into the table gradients `self`.
    pub fn accumulate_grad(&mut self, f: &BatchFeatures, dg: ArrayView2<R>) {
        let (el, ea, er) = self.dims();
        let k = f.k;
        for i in 0..f.rows {
            let row = dg.slice(s![i, ..]);
            let row = row.as_slice().expect("standard layout");
            for c in 0..f.center_attr.len() {
                scatter(&mut self.attr[c], f.center_attr[c][i], &row[3..3 + ea]);
            }
            let mut at = 3 + ea;
            for j in 0..k {
                let e = i * k + j;
                scatter(&mut self.label, f.labels[e], &row[at..at + el]);
                at += el;
                for c in 0..f.neighbor_attr.len() {
                    scatter(&mut self.attr[c], f.neighbor_attr[c][e], &row[at..at + ea]);
                }
                at += ea;
                for c in 0..f.neighbor_rel.len() {
                    scatter(&mut self.rel[c], f.neighbor_rel[c][e], &row[at..at + er]);
                }
                at += er;
            }
        }
    }
}

#[inline]
fn add_row<R: Real>(dst: &mut [R], table: &Array2<R>, index: u16) {
    let src = table.row(index as usize);
    for (d, &s) in dst.iter_mut().zip(src.iter()) {
        *d += s;
    }
}

#[inline]
fn scatter<R: Real>(table: &mut Array2<R>, index: u16, grad: &[R]) {
    let mut dst = table.row_mut(index as usize);
    for (d, &g) in dst.iter_mut().zip(grad) {
        *d += g;
    }
}
