//! JSON run configuration shared by the CLI subcommands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, ResidualConvNet};
use crate::error::{Error, Result};
use crate::fbf::{ArmijoConfig, BoxConstraint, StopConfig};
use crate::spectral::ProbeConfig;
use crate::trainer::TrainConfig;
use crate::tv::TvConfig;

pub const SNAPSHOT_FILE: &str = "resolved_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub activation: Activation,
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: vec![1, 8, 8, 1],
            kernel_size: 3,
            activation: Activation::default(),
            residual: true,
        }
    }
}

impl ModelConfig {
    /// A network with this architecture, initialized from `seed`.
    pub fn build(&self, seed: u64) -> Result<ResidualConvNet> {
        let mut net = ResidualConvNet::new(
            self.channels.clone(),
            self.kernel_size,
            self.activation,
            self.residual,
        )?;
        net.init_uniform(seed);
        Ok(net)
    }
}

/// Every section is optional; missing keys take their defaults and unknown
/// keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds model initialization.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Side length for the linear kernel variant.
    pub linear_kernel_size: Option<usize>,
    pub probe: ProbeConfig,
    pub armijo: ArmijoConfig,
    pub stop: StopConfig,
    pub tv: TvConfig,
    pub constraint: BoxConstraint,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.probe.validate()?;
        self.armijo.validate()?;
        self.tv.validate()?;
        self.constraint.validate()?;
        if let Some(d) = self.linear_kernel_size {
            if d % 2 == 0 {
                return Err(Error::Config(format!(
                    "linear_kernel_size must be odd, got {d}"
                )));
            }
        }
        ResidualConvNet::new(
            self.model.channels.clone(),
            self.model.kernel_size,
            self.model.activation,
            self.model.residual,
        )?;
        Ok(())
    }

    pub fn linear_kernel_size(&self) -> usize {
        self.linear_kernel_size.unwrap_or(5)
    }

    /// Writes the fully resolved configuration to `path`.
    pub fn write_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}
