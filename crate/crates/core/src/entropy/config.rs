use serde::{Deserialize, Serialize};

use crate::dald::{ChannelKind, DaldConfig};
use crate::error::{Error, Result};
use crate::io::AttributeMode;

/// Shape of the learned entropy model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dald: DaldConfig,
    pub mode: AttributeMode,
    /// Encoder layers.
    pub layers: usize,
    /// Attention heads; must divide the descriptor dimension.
    pub heads: usize,
    /// Feed-forward width, `4·d` by default.
    pub ff_dim: usize,
    /// Hidden width of each per-channel head MLP.
    pub head_hidden: usize,
}

impl ModelConfig {
    /// 3 layers, 3 heads, feed-forward `4·d`, head width 128.
    pub fn new(dald: DaldConfig, mode: AttributeMode) -> Self {
        let d = dald.descriptor_dim();
        Self {
            dald,
            mode,
            layers: 3,
            heads: 3,
            ff_dim: 4 * d,
            head_hidden: 128,
        }
    }

    pub fn desk(mode: AttributeMode) -> Self {
        Self::new(DaldConfig::desk(), mode)
    }

    pub fn object() -> Self {
        Self::new(DaldConfig::object(), AttributeMode::Rgb)
    }

    pub fn lidar() -> Self {
        Self::new(DaldConfig::lidar(), AttributeMode::Single)
    }

    /// Model dimension `d`, equal to the descriptor dimension.
    pub fn dim(&self) -> usize {
        self.dald.descriptor_dim()
    }

    pub fn channel_kinds(&self) -> Vec<ChannelKind> {
        channel_kinds(self.mode)
    }

    pub fn validate(&self) -> Result<()> {
        self.dald.validate()?;
        let d = self.dim();
        if self.layers == 0 || self.heads == 0 || self.ff_dim == 0 || self.head_hidden == 0 {
            return Err(Error::Config("model layer, head and width counts must be positive".into()));
        }
        if !d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("{} heads do not divide model dimension {d}", self.heads)));
        }
        Ok(())
    }
}

/// Working channels of an attribute mode: Y/Co/Cg for color, the raw
/// value otherwise.
pub fn channel_kinds(mode: AttributeMode) -> Vec<ChannelKind> {
    match mode {
        AttributeMode::Single => vec![ChannelKind::Unsigned8],
        AttributeMode::Rgb => vec![ChannelKind::Unsigned8, ChannelKind::Chroma, ChannelKind::Chroma],
    }
}
