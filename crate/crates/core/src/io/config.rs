use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compress::CompressionConfig;
use crate::error::Result;
use crate::optimizer::OptimConfig;

/// JSON configuration shared by the CLI subcommands; missing sections take
/// their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub compression: CompressionConfig,
    pub optim: OptimConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.compression.validate()?;
        self.optim.validate()
    }
}

/// Parses and validates a config file.
pub fn read_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let config: PipelineConfig = serde_json::from_slice(&std::fs::read(path)?)?;
    config.validate()?;
    Ok(config)
}
