use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dald::DaldConfig;
use crate::entropy::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::io::AttributeMode;
use crate::lod::LodConfig;
use crate::partition::PartitionConfig;

/// Named parameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Dense object clouds: L=24, k=11, N=1024.
    Object,
    /// LiDAR sweeps: L=16, k=9, N=4096, tighter z thresholds.
    Lidar,
    /// Small enough to train on a laptop CPU: L=16, k=7, N=256.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "object" => Ok(Preset::Object),
            "lidar" => Ok(Preset::Lidar),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset {s:?} (object, lidar, desk)"))),
        }
    }
}

/// Encoder architecture apart from the descriptor, which fixes `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `d`.
    pub ff_multiplier: usize,
    pub head_hidden: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            layers: 3,
            heads: 3,
            ff_multiplier: 4,
            head_hidden: 128,
        }
    }
}

/// Every tunable of the codec. Loaded from TOML as a preset plus overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub lod: LodConfig,
    pub dald: DaldConfig,
    pub model: ModelSettings,
    pub partition: PartitionConfig,
    pub train: TrainConfig,
    /// Carry geometry inside the bitstream.
    pub embed_geometry: bool,
    /// Store a CRC of every quantized CDF so the decoder can detect a
    /// diverging model forward pass.
    pub cdf_checksum: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl CodecConfig {
    pub fn preset(preset: Preset) -> Self {
        let (lod, dald, batch_size) = match preset {
            Preset::Object => (LodConfig::object(), DaldConfig::object(), 1024),
            Preset::Lidar => (LodConfig::lidar(), DaldConfig::lidar(), 4096),
            Preset::Desk => (LodConfig::desk(), DaldConfig::desk(), 256),
        };
        Self {
            lod,
            dald,
            model: ModelSettings::default(),
            partition: PartitionConfig {
                batch_size,
                ..PartitionConfig::default()
            },
            train: TrainConfig::default(),
            embed_geometry: true,
            cdf_checksum: false,
        }
    }

    /// Parses TOML: an optional top-level `preset` (default `desk`) whose
    /// values any other keys override, table by table.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut user: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let preset = match user.remove("preset") {
            None => Preset::Desk,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(v) => return Err(Error::Config(format!("preset must be a string, got {v}"))),
        };
        let mut base = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(format!("{e}")))?;
        merge(&mut base, user);
        let config: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Learned-model shape for clouds of `mode`.
    pub fn model_config(&self, mode: AttributeMode) -> ModelConfig {
        let d = self.dald.descriptor_dim();
        ModelConfig {
            dald: self.dald.clone(),
            mode,
            layers: self.model.layers,
            heads: self.model.heads,
            ff_dim: self.model.ff_multiplier * d,
            head_hidden: self.model.head_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lod.validate()?;
        self.dald.validate()?;
        self.partition.validate()?;
        self.train.validate()?;
        self.model_config(AttributeMode::Rgb).validate()?;
        if self.dald.k != self.lod.neighbors {
            return Err(Error::Config(format!(
                "descriptor k={} differs from LoD neighbor count {}",
                self.dald.k, self.lod.neighbors
            )));
        }
        Ok(())
    }
}

/// Recursive table merge; scalars and arrays in `over` replace those in `base`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for p in [Preset::Object, Preset::Lidar, Preset::Desk] {
            let c = CodecConfig::preset(p);
            c.validate().unwrap();
            let text = c.to_toml().unwrap();
            assert_eq!(CodecConfig::from_toml(&text).unwrap(), c);
        }
        assert_eq!(CodecConfig::preset(Preset::Object).model_config(AttributeMode::Rgb).dim(), 171);
        assert_eq!(CodecConfig::preset(Preset::Lidar).model_config(AttributeMode::Single).dim(), 141);
    }

    #[test]
    fn overrides_apply_over_preset() {
        let c = CodecConfig::from_toml("preset = \"object\"\n[partition]\nbatch_size = 64\n[train]\nepochs = 2\n").unwrap();
        assert_eq!(c.partition.batch_size, 64);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.lod.total_levels, 24);
        assert_eq!(CodecConfig::from_toml("").unwrap(), CodecConfig::default());
    }

    #[test]
    fn bad_files_rejected() {
        assert!(CodecConfig::from_toml("preset = \"huge\"").is_err());
        assert!(CodecConfig::from_toml("[lod]\nbogus = 1").is_err());
        assert!(CodecConfig::from_toml("[lod]\nneighbors = 5").is_err());
        assert!(CodecConfig::from_toml("[model]\nheads = 4").is_err());
        assert!(CodecConfig::from_toml("not toml ===").is_err());
    }
}
