//! Model checkpoints: a JSON header plus an F32T parameter blob stored
//! next to it (`model.json` + `model.f32t`).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, ConvMap, DifferentiableMap, ResidualConvNet, Trainable};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{Kernel, Tensor};

pub const FORMAT_TAG: &str = "monofbf-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    ResidualConvNet {
        channels: Vec<usize>,
        kernel_size: usize,
        activation: Activation,
        residual: bool,
    },
    LinearKernel {
        size: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    /// File name of the parameter blob, relative to the header.
    pub params_file: String,
    pub param_count: usize,
    /// Free-form provenance: variant, training config, history summary.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Clone, Debug)]
pub enum Model {
    Net(ResidualConvNet),
    Linear(Kernel),
}

impl Model {
    pub fn architecture(&self) -> Architecture {
        match self {
            Model::Net(n) => Architecture::ResidualConvNet {
                channels: n.channels().to_vec(),
                kernel_size: n.kernel_size(),
                activation: n.activation(),
                residual: n.residual(),
            },
            Model::Linear(k) => Architecture::LinearKernel { size: k.size() },
        }
    }

    fn param_values(&self) -> Vec<f64> {
        match self {
            Model::Net(n) => n
                .params()
                .map(|p| p.as_slice().to_vec())
                .unwrap_or_default(),
            Model::Linear(k) => k.as_slice().to_vec(),
        }
    }

    /// The model as an operator; a linear kernel becomes `x ↦ k ⊛ x`.
    pub fn into_map(self) -> Arc<dyn DifferentiableMap> {
        match self {
            Model::Net(n) => Arc::new(n),
            Model::Linear(k) => Arc::new(ConvMap::new(k, 1.0)),
        }
    }
}

fn blob_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("f32t")
}

/// Writes `path` (JSON header) and the parameter blob beside it.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    metadata: serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let blob = blob_path(path);
    let values = model.param_values();
    let header = CheckpointHeader {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        architecture: model.architecture(),
        params_file: blob
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        param_count: values.len(),
        metadata,
    };
    io::write_f32t(&blob, &Tensor::from_vec(values))?;
    std::fs::write(path, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, CheckpointHeader)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(&text)?;
    let bad = |reason: String| Error::Format {
        format: "checkpoint",
        reason,
    };
    if header.format != FORMAT_TAG {
        return Err(bad(format!("unexpected format tag {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let values = io::read_f32t(dir.join(&header.params_file))?.into_vec();
    if values.len() != header.param_count {
        return Err(bad(format!(
            "header declares {} parameters, blob holds {}",
            header.param_count,
            values.len()
        )));
    }
    let model = match &header.architecture {
        Architecture::ResidualConvNet {
            channels,
            kernel_size,
            activation,
            residual,
        } => {
            let mut net =
                ResidualConvNet::new(channels.clone(), *kernel_size, *activation, *residual)?;
            if net.num_params() != values.len() {
                return Err(bad(format!(
                    "architecture needs {} parameters, blob holds {}",
                    net.num_params(),
                    values.len()
                )));
            }
            net.params_mut().set_values(&values)?;
            Model::Net(net)
        }
        Architecture::LinearKernel { size } => {
            Model::Linear(Kernel::new(*size, values)?.normalized()?)
        }
    };
    Ok((model, header))
}
