//! Lab configuration file (TOML).
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//!
//! [channel]        # radio and sampling, see ChannelConfigBuilder
//! noise_std = 0.02
//!
//! [dataset]
//! per_class = 40
//! activity_duration = 2.0
//! [dataset.windowing]
//! window_width = 100
//! stride = 8
//! clip_length = 16
//! clips_per_stream = 1
//!
//! [model]          # conv_blocks, fc_units, attention flags
//! [train]          # TrainConfig
//! [baseline]       # components, k
//!
//! [[activity]]     # optional; the built-in library is used when absent
//! ```
//!
//! Every section is optional. Values are validated while parsing, so errors
//! point at the offending line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::baseline::BaselineConfig;
use crate::channel::{default_activity_library, ActivitySpec, ChannelConfig};
use crate::dataset::WindowingParams;
use crate::model::{C3DConfig, ConvBlock, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabConfig {
    #[serde(deserialize_with = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default, rename = "activity", deserialize_with = "activities", skip_serializing_if = "Vec::is_empty")]
    pub activities: Vec<ActivitySpec>,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            channel: ChannelConfig::default(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            activities: Vec::new(),
        }
    }
}

fn schema_version<'de, D: Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
    let v = u32::deserialize(d)?;
    if v != SCHEMA_VERSION {
        return Err(serde::de::Error::custom(format!(
            "unsupported schema_version {v}; this build reads version {SCHEMA_VERSION}"
        )));
    }
    Ok(v)
}

fn activities<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<ActivitySpec>, D::Error> {
    let specs = Vec::<ActivitySpec>::deserialize(d)?;
    for (i, s) in specs.iter().enumerate() {
        if s.label != i {
            return Err(serde::de::Error::custom(format!(
                "activity '{}' has label {}, labels must be 0, 1, 2, ... in file order",
                s.name, s.label
            )));
        }
        s.validate().map_err(serde::de::Error::custom)?;
    }
    if specs.len() == 1 {
        return Err(serde::de::Error::custom("need at least two activities"));
    }
    Ok(specs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, try_from = "RawDataset")]
pub struct DatasetSection {
    /// Streams generated per class, split 50/50 into train and test.
    pub per_class: usize,
    /// Duration of each built-in activity, seconds.
    pub activity_duration: f64,
    pub windowing: WindowingParams,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { per_class: 40, activity_duration: 2.0, windowing: WindowingParams::default() }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDataset {
    per_class: usize,
    activity_duration: f64,
    windowing: WindowingParams,
}

impl Default for RawDataset {
    fn default() -> Self {
        let d = DatasetSection::default();
        Self { per_class: d.per_class, activity_duration: d.activity_duration, windowing: d.windowing }
    }
}

impl TryFrom<RawDataset> for DatasetSection {
    type Error = String;

    fn try_from(r: RawDataset) -> Result<Self, String> {
        if r.per_class < 2 {
            return Err(format!("per_class must be >= 2 so both splits are populated, got {}", r.per_class));
        }
        if !(r.activity_duration > 0.0) || !r.activity_duration.is_finite() {
            return Err(format!("activity_duration must be > 0, got {}", r.activity_duration));
        }
        r.windowing.validate().map_err(|e| e.to_string())?;
        Ok(Self { per_class: r.per_class, activity_duration: r.activity_duration, windowing: r.windowing })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub conv_blocks: Vec<ConvBlock>,
    pub fc_units: usize,
    pub use_spatial_attention: bool,
    pub use_temporal_attention: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = C3DConfig::default_for(2, [1, 1, 1]);
        Self { conv_blocks: d.conv_blocks, fc_units: d.fc_units, use_spatial_attention: false, use_temporal_attention: false }
    }
}

impl ModelSection {
    pub fn to_config(&self, n_classes: usize, input_shape: [usize; 3]) -> C3DConfig {
        C3DConfig {
            conv_blocks: self.conv_blocks.clone(),
            fc_units: self.fc_units,
            n_classes,
            use_spatial_attention: self.use_spatial_attention,
            use_temporal_attention: self.use_temporal_attention,
            input_shape,
        }
    }
}

impl LabConfig {
    /// Parse and validate; `origin` names the source in error messages.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let invalid = |message: String| ConfigError::Invalid { path: origin.to_string(), message };
        let cfg: LabConfig = toml::from_str(text).map_err(|e| invalid(e.to_string().trim_end().to_string()))?;
        // Cross-section checks: anchored at the section header when present.
        let specs = cfg.activity_specs().map_err(|e| invalid(format!("{}{e}", anchor(text, "[[activity]]"))))?;
        cfg.model_config(specs.len())
            .block_shapes()
            .map_err(|e| invalid(format!("{}[model] does not fit the clip shape: {e}", anchor(text, "[model]"))))?;
        cfg.train.validate().map_err(|e| invalid(format!("{}[train]: {e}", anchor(text, "[train]"))))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("lab config serialises")
    }

    /// Configured activities, or the built-in library.
    pub fn activity_specs(&self) -> Result<Vec<ActivitySpec>, String> {
        if self.activities.is_empty() {
            default_activity_library(self.dataset.activity_duration).map_err(|e| e.to_string())
        } else {
            Ok(self.activities.clone())
        }
    }

    /// Clip shape `(clip_length, n_channels, window_width)`.
    pub fn clip_shape(&self) -> [usize; 3] {
        let w = &self.dataset.windowing;
        [w.clip_length, self.channel.n_channels, w.window_width]
    }

    pub fn model_config(&self, n_classes: usize) -> C3DConfig {
        self.model.to_config(n_classes, self.clip_shape())
    }
}

fn anchor(text: &str, header: &str) -> String {
    text.lines()
        .position(|l| l.trim_start().starts_with(header))
        .map(|i| format!("line {}: ", i + 1))
        .unwrap_or_default()
}
