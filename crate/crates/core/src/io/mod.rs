//! Point cloud container, canonical ordering, and PLY serialization.
//!
//! Every cloud handed to the codec is canonical: positions are unique and
//! sorted by ascending Morton code. Point indices therefore double as Morton
//! ranks, which the neighbor search and partitioning tie-break rules rely on.

mod morton;
mod ply;

pub use morton::{morton_code, morton_decode, MORTON_AXIS_BITS};
pub use ply::{load_geometry, load_ply, read_ply_file, save_ply, write_ply_file};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Which attribute layout a cloud carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeMode {
    /// One 8-bit scalar such as reflectance or intensity.
    Single,
    /// Three 8-bit color channels in R, G, B order.
    Rgb,
}

impl AttributeMode {
    pub fn channel_count(self) -> usize {
        match self {
            AttributeMode::Single => 1,
            AttributeMode::Rgb => 3,
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            AttributeMode::Single => 0,
            AttributeMode::Rgb => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(AttributeMode::Single),
            1 => Some(AttributeMode::Rgb),
            _ => None,
        }
    }
}

/// Attribute layout and channel names. All channels are 8 bits deep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeConfig {
    pub mode: AttributeMode,
    pub names: Vec<String>,
}

impl AttributeConfig {
    pub fn rgb() -> Self {
        Self {
            mode: AttributeMode::Rgb,
            names: vec!["red".into(), "green".into(), "blue".into()],
        }
    }

    pub fn single(name: impl Into<String>) -> Self {
        Self {
            mode: AttributeMode::Single,
            names: vec![name.into()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.mode.channel_count() {
            return Err(invalid(format!(
                "{:?} mode needs {} channel names, got {}",
                self.mode,
                self.mode.channel_count(),
                self.names.len()
            )));
        }
        Ok(())
    }
}

/// Voxelized positions with per-point 8-bit attribute channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointCloud {
    pub positions: Vec<[u32; 3]>,
    pub attributes: AttributeConfig,
    /// One array per channel, each with one value per point.
    pub channels: Vec<Vec<u8>>,
    /// Geometry depth: every coordinate is below `2^bit_depth`.
    pub bit_depth: u8,
}

impl PointCloud {
    /// Builds a canonical cloud. Duplicate positions keep their first
    /// occurrence; the result is Morton sorted. When `bit_depth` is `None`
    /// the smallest depth covering the largest coordinate is used.
    pub fn new(
        positions: Vec<[u32; 3]>,
        attributes: AttributeConfig,
        channels: Vec<Vec<u8>>,
        bit_depth: Option<u8>,
    ) -> Result<Self> {
        attributes.validate()?;
        if channels.len() != attributes.mode.channel_count() {
            return Err(invalid(format!(
                "expected {} attribute channels, got {}",
                attributes.mode.channel_count(),
                channels.len()
            )));
        }
        for (c, values) in channels.iter().enumerate() {
            if values.len() != positions.len() {
                return Err(invalid(format!(
                    "channel {c} has {} values for {} points",
                    values.len(),
                    positions.len()
                )));
            }
        }
        let max_coord = positions
            .iter()
            .flat_map(|p| p.iter().copied())
            .max()
            .unwrap_or(0);
        let depth = match bit_depth {
            Some(d) => {
                if d == 0 || u32::from(d) > MORTON_AXIS_BITS {
                    return Err(invalid(format!(
                        "geometry bit depth {d} outside 1..={MORTON_AXIS_BITS}"
                    )));
                }
                if u64::from(max_coord) >= 1u64 << d {
                    return Err(invalid(format!(
                        "coordinate {max_coord} exceeds geometry bit depth {d}"
                    )));
                }
                d
            }
            None => depth_for(max_coord)?,
        };
        let cloud = Self {
            positions,
            attributes,
            channels,
            bit_depth: depth,
        };
        cloud.canonicalize()
    }

    /// RGB cloud from per-point color triples.
    pub fn from_rgb(positions: Vec<[u32; 3]>, colors: &[[u8; 3]], bit_depth: Option<u8>) -> Result<Self> {
        let channels = (0..3).map(|c| colors.iter().map(|col| col[c]).collect()).collect();
        Self::new(positions, AttributeConfig::rgb(), channels, bit_depth)
    }

    /// Single-channel cloud.
    pub fn from_scalar(
        positions: Vec<[u32; 3]>,
        name: &str,
        values: Vec<u8>,
        bit_depth: Option<u8>,
    ) -> Result<Self> {
        Self::new(positions, AttributeConfig::single(name), vec![values], bit_depth)
    }

    /// An empty cloud with the given layout.
    pub fn empty(attributes: AttributeConfig, bit_depth: u8) -> Self {
        let channels = vec![Vec::new(); attributes.mode.channel_count()];
        Self {
            positions: Vec::new(),
            attributes,
            channels,
            bit_depth,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn mode(&self) -> AttributeMode {
        self.attributes.mode
    }

    /// Removes duplicate positions (first occurrence wins) and sorts by
    /// Morton code. Idempotent.
    pub fn canonicalize(self) -> Result<Self> {
        let mut seen = HashSet::with_capacity(self.positions.len());
        let mut keyed = Vec::with_capacity(self.positions.len());
        for (i, p) in self.positions.iter().enumerate() {
            if seen.insert(*p) {
                keyed.push((morton_code(*p)?, i));
            }
        }
        // Keys are unique after dedup, so an unstable sort is deterministic.
        keyed.sort_unstable();
        let positions = keyed.iter().map(|&(_, i)| self.positions[i]).collect();
        let channels = self
            .channels
            .iter()
            .map(|ch| keyed.iter().map(|&(_, i)| ch[i]).collect())
            .collect();
        Ok(Self {
            positions,
            attributes: self.attributes,
            channels,
            bit_depth: self.bit_depth,
        })
    }

    /// Morton codes of all points, ascending.
    pub fn morton_codes(&self) -> Vec<u64> {
        self.positions
            .iter()
            .map(|&p| morton_code(p).expect("canonical cloud coordinates fit"))
            .collect()
    }

    /// Copy of this cloud's geometry with the attributes replaced.
    pub fn with_channels(&self, attributes: AttributeConfig, channels: Vec<Vec<u8>>) -> Result<Self> {
        Self::new(self.positions.clone(), attributes, channels, Some(self.bit_depth))
    }

    /// The subset of points at `indices`, re-canonicalized.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let positions = indices.iter().map(|&i| self.positions[i]).collect();
        let channels = self
            .channels
            .iter()
            .map(|ch| indices.iter().map(|&i| ch[i]).collect())
            .collect();
        Self::new(positions, self.attributes.clone(), channels, Some(self.bit_depth))
    }
}

/// Smallest depth `d >= 1` with `max_coord < 2^d`.
pub fn depth_for(max_coord: u32) -> Result<u8> {
    let bits = 32 - max_coord.leading_zeros();
    let d = bits.max(1);
    if d > MORTON_AXIS_BITS {
        return Err(invalid(format!(
            "coordinate {max_coord} needs {d} bits; at most {MORTON_AXIS_BITS} supported"
        )));
    }
    Ok(d as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb_cloud(points: &[[u32; 3]]) -> PointCloud {
        let colors: Vec<[u8; 3]> = (0..points.len()).map(|i| [i as u8, 2 * i as u8, 3]).collect();
        PointCloud::from_rgb(points.to_vec(), &colors, None).unwrap()
    }

    #[test]
    fn duplicates_keep_first_occurrence() {
        let c = PointCloud::from_scalar(vec![[1, 1, 1], [0, 0, 0], [1, 1, 1]], "reflectance", vec![7, 8, 9], None)
            .unwrap();
        assert_eq!(c.positions, vec![[0, 0, 0], [1, 1, 1]]);
        assert_eq!(c.channels[0], vec![8, 7]);
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let c = rgb_cloud(&[[5, 1, 0], [0, 3, 2], [5, 1, 0], [2, 2, 2]]);
        let again = c.clone().canonicalize().unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn inferred_bit_depth() {
        assert_eq!(depth_for(0).unwrap(), 1);
        assert_eq!(depth_for(1).unwrap(), 1);
        assert_eq!(depth_for(2).unwrap(), 2);
        assert_eq!(depth_for(1023).unwrap(), 10);
        assert_eq!(depth_for(1024).unwrap(), 11);
        assert!(depth_for(1 << 21).is_err());
    }

    #[test]
    fn rejects_coordinate_beyond_declared_depth() {
        let r = PointCloud::from_scalar(vec![[16, 0, 0]], "i", vec![0], Some(4));
        assert!(r.is_err());
    }

    #[test]
    fn rejects_channel_length_mismatch() {
        let r = PointCloud::from_scalar(vec![[0, 0, 0], [1, 0, 0]], "i", vec![0], None);
        assert!(r.is_err());
    }
}
