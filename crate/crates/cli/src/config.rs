use std::path::Path;

use dfp_core::data::FeatureLayout;
use dfp_core::ess::EssParams;
use dfp_core::predictor::{PredictorKind, ResnetConfig};
use dfp_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Pipeline configuration file. Every section is optional and falls back to
/// its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub ess: EssParams,
    pub train: TrainConfig,
    pub layout: FeatureLayout,
    pub predictor: PredictorConfig,
    pub data: DataConfig,
    /// Storage energy capacity that report money fields are scaled by.
    pub capacity_mwh: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ess: EssParams::default(),
            train: TrainConfig::default(),
            layout: FeatureLayout::default(),
            predictor: PredictorConfig::default(),
            data: DataConfig::default(),
            capacity_mwh: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub resnet: ResnetConfig,
    pub init_seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::Linear,
            resnet: ResnetConfig::default(),
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Longest gap, in hours, that cleaning may interpolate.
    pub max_gap: usize,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            max_gap: 6,
            split_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> dfp_core::Result<Self> {
        let cfg: Self = match path {
            Some(p) => {
                let text = dfp_core::error::read_text(p)?;
                serde_json::from_str(&text)?
            }
            None => Self::default(),
        };
        cfg.ess.check()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}
