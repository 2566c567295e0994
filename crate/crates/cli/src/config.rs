use std::path::Path;

use serde::Deserialize;

use mvlabel::evalkit::EvalConfig;
use mvlabel::explore::WorldGenConfig;
use mvlabel::pipeline::{GenerateConfig, PoseRefineConfig, SimulateConfig};
use mvlabel::{Error, Result};

/// Contents of a `--config` file. Every section is optional and unknown keys
/// are rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub world: WorldGenConfig,
    pub simulate: SimulateConfig,
    pub generate: GenerateConfig,
    pub refine: PoseRefineConfig,
    pub eval: EvalConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }
}
