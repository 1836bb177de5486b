//! Lossless point cloud attribute compression.
//!
//! Attributes are predicted over a hybrid level-of-detail structure and the
//! residuals are range coded. The base layer uses adaptive run-length
//! coding; the inference layers use a small attention model over
//! density-adaptive neighborhood descriptors, one Morton-ordered batch at a
//! time.

pub mod cli;
pub mod coder;
pub mod color;
pub mod dald;
pub mod entropy;
pub mod error;
pub mod io;
pub mod kdtree;
pub mod lod;
pub mod metrics;
pub mod partition;
pub mod pipeline;
pub mod predict;
pub mod synth;
mod wire;

pub use error::{Error, Result};
pub use io::{AttributeConfig, AttributeMode, PointCloud};
