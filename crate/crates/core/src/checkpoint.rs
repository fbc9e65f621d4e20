//! JSON checkpoint format for controller weights (and optionally the
//! optimizer state needed to resume training bit-exactly).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerParams, ConvLayer, LAYER_CHANNELS};
use crate::error::{Error, Result};
use crate::optim::OptimizerState;
use crate::tensor::{Real, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: String,
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub activation: String,
    pub output_smoothing: String,
}

impl Default for Architecture {
    fn default() -> Self {
        let mut channels = vec![LAYER_CHANNELS[0].0];
        channels.extend(LAYER_CHANNELS.iter().map(|&(_, co)| co));
        Self {
            kind: "conv3x3_stack".into(),
            channels,
            kernel_size: 3,
            activation: "tanh".into(),
            output_smoothing: "box3x3".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub kernel_shape: Vec<usize>,
    pub bias_shape: Vec<usize>,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub episodes: usize,
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub regime: String,
    #[serde(default)]
    pub grid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub layers: Vec<LayerRecord>,
    pub metadata: TrainingMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerRecord>,
}

fn widen<T: Real>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.to_f64_lossy()).collect()
}

fn narrow<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

impl Checkpoint {
    pub fn new<T: Real>(params: &ControllerParams<T>, metadata: TrainingMetadata) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| LayerRecord {
                kernel_shape: l.kernel.shape().to_vec(),
                bias_shape: l.bias.shape().to_vec(),
                kernel: widen(l.kernel.data()),
                bias: widen(l.bias.data()),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            architecture: Architecture::default(),
            layers,
            metadata,
            optimizer: None,
        }
    }

    pub fn with_optimizer<T: Real>(mut self, opt: &OptimizerState<T>) -> Self {
        self.optimizer = Some(OptimizerRecord {
            step: opt.step,
            first_moment: opt.first.iter().map(|m| widen(m)).collect(),
            second_moment: opt.second.iter().map(|v| widen(v)).collect(),
        });
        self
    }

    pub fn params<T: Real>(&self) -> Result<ControllerParams<T>> {
        if self.architecture != Architecture::default() {
            return Err(Error::config(format!(
                "checkpoint architecture {:?} does not match this build",
                self.architecture
            )));
        }
        if self.layers.len() != 3 {
            return Err(Error::config(format!(
                "checkpoint has {} layers, expected 3",
                self.layers.len()
            )));
        }
        let layer = |r: &LayerRecord| -> Result<ConvLayer<T>> {
            Ok(ConvLayer {
                kernel: Tensor::new(r.kernel_shape.clone(), narrow(&r.kernel))?,
                bias: Tensor::new(r.bias_shape.clone(), narrow(&r.bias))?,
            })
        };
        let p = ControllerParams {
            layers: [
                layer(&self.layers[0])?,
                layer(&self.layers[1])?,
                layer(&self.layers[2])?,
            ],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn optimizer_state<T: Real>(&self) -> Option<OptimizerState<T>> {
        self.optimizer.as_ref().map(|o| OptimizerState {
            step: o.step,
            first: o.first_moment.iter().map(|m| narrow(m)).collect(),
            second: o.second_moment.iter().map(|v| narrow(v)).collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a checkpoint, rejecting any `format_version` other than the
    /// current one before looking at the rest of the document.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::config("checkpoint is missing format_version"))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(Error::CheckpointVersion {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
