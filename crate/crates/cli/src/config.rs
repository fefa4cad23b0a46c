use std::path::{Path, PathBuf};

use railchoice::calibration::CalibrationSettings;
use railchoice::io;
use railchoice::latent::ModelSpec;
use railchoice::pipeline::EstimateOptions;
use railchoice::simulator::SimulationConfig;
use railchoice::Result;
use serde::{Deserialize, Serialize};

/// Contents of the `--config` file. Every section is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub simulation: SimulationConfig,
    /// Model to estimate; the simulation model when absent.
    pub model: Option<ModelSpec>,
    pub estimation: EstimateOptions,
    pub calibration: CalibrationSettings,
    pub paths: Paths,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Input directory; the output directory when absent.
    pub data: Option<PathBuf>,
    pub left_behind: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Density cache; `<out>/cache` when absent.
    pub cache: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => io::read_json(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn model(&self) -> ModelSpec {
        self.model.clone().unwrap_or_else(|| self.simulation.model.clone())
    }
}
