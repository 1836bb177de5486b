//! Seeded synthetic point clouds for tests, benchmarks and examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{AttributeConfig, AttributeMode, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Randomly sampled sphere surface.
    Sphere,
    /// Fully occupied wavy height field, one point per (x, y).
    Terrain,
    /// Solid cube.
    Solid,
    /// Uniform scatter in a large box; sparse like a LiDAR sweep.
    Scatter,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Constant([u8; 3]),
    /// Low-frequency sinusoids of position.
    Gradient,
    /// Four constant colors split at fractions `[x, y]` of the extent.
    Quadrants([f64; 2]),
    /// Independent uniform values.
    Noise,
    /// Gradient plus noise whose amplitude changes from region to region.
    Textured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Synthetic {
    pub shape: Shape,
    pub pattern: Pattern,
    pub mode: AttributeMode,
    /// Approximate point count; duplicates after voxelization are dropped.
    pub points: usize,
    pub seed: u64,
}

impl Synthetic {
    pub fn new(shape: Shape, pattern: Pattern, mode: AttributeMode, points: usize, seed: u64) -> Self {
        Self {
            shape,
            pattern,
            mode,
            points,
            seed,
        }
    }

    /// Canonical (deduplicated, Morton-sorted) cloud.
    pub fn generate(&self) -> Result<PointCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let positions = self.positions(&mut rng);
        let bounds = extent(&positions);
        let phases: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
        let colors: Vec<[u8; 3]> = positions
            .iter()
            .map(|&p| {
                let u: [f64; 3] = std::array::from_fn(|a| f64::from(p[a]) / bounds[a].max(1) as f64);
                self.color(u, &phases, &mut rng)
            })
            .collect();
        let cloud = match self.mode {
            AttributeMode::Rgb => PointCloud::from_rgb(positions, &colors, None)?,
            AttributeMode::Single => {
                let v: Vec<u8> = colors.iter().map(|c| c[0]).collect();
                PointCloud::new(positions, AttributeConfig::single("reflectance"), vec![v], None)?
            }
        };
        Ok(cloud)
    }

    fn positions(&self, rng: &mut ChaCha8Rng) -> Vec<[u32; 3]> {
        let n = self.points.max(1);
        match self.shape {
            Shape::Sphere => {
                let r = (n as f64 * 1.6 / (4.0 * std::f64::consts::PI)).sqrt().max(1.0);
                (0..n)
                    .map(|_| {
                        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
                        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
                        v.map(|c| (r + 1.0 + r * c / len).round() as u32)
                    })
                    .collect()
            }
            Shape::Terrain => {
                let side = (n as f64).sqrt().ceil() as u32;
                let amp = f64::from(side) / 8.0;
                (0..side * side)
                    .take(n)
                    .map(|i| {
                        let (x, y) = (i % side, i / side);
                        let (fx, fy) = (f64::from(x) / f64::from(side), f64::from(y) / f64::from(side));
                        let h = amp * (1.0 + (6.0 * fx).sin() * (4.0 * fy).cos());
                        [x, y, h.round() as u32]
                    })
                    .collect()
            }
            Shape::Solid => {
                let side = (n as f64).cbrt().ceil() as u32;
                (0..side.pow(3)).take(n).map(|i| [i % side, (i / side) % side, i / (side * side)]).collect()
            }
            Shape::Scatter => {
                let extent = ((n as f64 * 400.0).cbrt() as u32).max(4);
                (0..n)
                    .map(|_| std::array::from_fn(|_| rng.random_range(0..extent)))
                    .collect()
            }
        }
    }

    fn color(&self, u: [f64; 3], phases: &[f64; 3], rng: &mut ChaCha8Rng) -> [u8; 3] {
        let smooth = |c: usize| {
            let t = 2.0 * std::f64::consts::PI;
            let f = [1.3, 0.9, 1.7][c];
            128.0 + 90.0 * (t * (f * u[0] + 0.6 * u[1] + 0.4 * u[2] + phases[c])).sin()
        };
        match self.pattern {
            Pattern::Constant(c) => c,
            Pattern::Gradient => std::array::from_fn(|c| quantize(smooth(c))),
            Pattern::Quadrants([sx, sy]) => {
                const PALETTE: [[u8; 3]; 4] = [[230, 40, 40], [40, 200, 60], [30, 60, 220], [240, 220, 30]];
                PALETTE[usize::from(u[0] >= sx) + 2 * usize::from(u[1] >= sy)]
            }
            Pattern::Noise => std::array::from_fn(|_| rng.random()),
            Pattern::Textured => {
                // Regions of a coarse checkerboard get different noise levels.
                let cell = (u[0] * 4.0).floor() as usize + 4 * (u[1] * 4.0).floor() as usize + (u[2] * 2.0).floor() as usize;
                let amp = [0.0, 1.5, 4.0, 10.0][cell % 4];
                std::array::from_fn(|c| {
                    let n: f64 = StandardNormal.sample(rng);
                    quantize(smooth(c) + amp * n)
                })
            }
        }
    }
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn extent(positions: &[[u32; 3]]) -> [u32; 3] {
    let mut hi = [0u32; 3];
    for p in positions {
        for a in 0..3 {
            hi[a] = hi[a].max(p[a]);
        }
    }
    hi
}

/// `count` points on a lattice of pitch 3, so no two share a 5×5×5 window.
pub fn isolated_points(count: usize) -> Vec<[u32; 3]> {
    let side = (count as f64).cbrt().ceil().max(1.0) as u32;
    (0..count as u32).map(|i| [3 * (i % side), 3 * ((i / side) % side), 3 * (i / (side * side))]).collect()
}
