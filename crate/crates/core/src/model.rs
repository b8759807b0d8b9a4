//! Parameterized detection-network graphs and their static accounting.
//!
//! A [`NetworkConfig`] describes one member of the architecture family: a
//! stack of same-padded stride-1 convolutions interleaved with 2x2 max-pools,
//! followed by a single fully connected layer producing the `S*S*(5B+C)`
//! grid prediction vector. [`build_graph`] expands a config into a
//! shape-checked [`ModelGraph`]; the `count_*` helpers account parameters,
//! multiply-accumulates and activation bytes.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Channel counts of the default nine-conv backbone.
pub const DEFAULT_BACKBONE: [usize; 9] = [16, 16, 32, 32, 64, 64, 64, 128, 128];
/// 1-based conv indices followed by a 2x2 stride-2 max-pool.
pub const DEFAULT_POOL_AFTER: [usize; 5] = [1, 2, 4, 7, 9];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("backbone_channels must not be empty")]
    EmptyBackbone,
    #[error("{field} must be >= 1")]
    ZeroField { field: &'static str },
    #[error("first_kernel must be an odd size, got {0}")]
    EvenKernel(usize),
    #[error("pool_after index {index} out of range 1..={convs}")]
    PoolIndex { index: usize, convs: usize },
    #[error("resolution {resolution} pools to zero after {pools} stride-2 stages")]
    ResolutionTooSmall { resolution: usize, pools: usize },
    #[error("unknown preset {0:?}, expected TY:<classes>-<kernel>-<resolution>")]
    UnknownPreset(String),
}

fn default_boxes() -> usize {
    2
}
fn default_grid() -> usize {
    4
}
fn default_in_channels() -> usize {
    3
}
fn default_backbone() -> Vec<usize> {
    DEFAULT_BACKBONE.to_vec()
}
fn default_pool_after() -> Vec<usize> {
    DEFAULT_POOL_AFTER.to_vec()
}

/// Architecture hyper-parameters. This is also the model description file
/// schema (JSON).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Pixels per side of the square input.
    pub resolution: usize,
    pub classes: usize,
    /// Side of the first convolution kernel.
    pub first_kernel: usize,
    #[serde(default = "default_boxes")]
    pub boxes: usize,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_backbone")]
    pub backbone_channels: Vec<usize>,
    /// 1-based conv indices that are followed by a max-pool.
    #[serde(default = "default_pool_after")]
    pub pool_after: Vec<usize>,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
}

impl NetworkConfig {
    /// Default backbone with the given head and input parameters.
    pub fn new(classes: usize, first_kernel: usize, resolution: usize) -> Self {
        Self {
            resolution,
            classes,
            first_kernel,
            boxes: default_boxes(),
            grid: default_grid(),
            backbone_channels: default_backbone(),
            pool_after: default_pool_after(),
            in_channels: default_in_channels(),
        }
    }

    /// Parses a preset name of the form `TY:<classes>-<kernel>-<resolution>`.
    pub fn preset(name: &str) -> Result<Self, ModelError> {
        name.parse()
    }

    /// Canonical preset name for configs using the default backbone and head.
    pub fn preset_name(&self) -> String {
        format!("TY:{}-{}-{}", self.classes, self.first_kernel, self.resolution)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, v) in [
            ("resolution", self.resolution),
            ("classes", self.classes),
            ("boxes", self.boxes),
            ("grid", self.grid),
            ("in_channels", self.in_channels),
            ("first_kernel", self.first_kernel),
        ] {
            if v == 0 {
                return Err(ModelError::ZeroField { field });
            }
        }
        if self.first_kernel % 2 == 0 {
            return Err(ModelError::EvenKernel(self.first_kernel));
        }
        if self.backbone_channels.is_empty() {
            return Err(ModelError::EmptyBackbone);
        }
        if self.backbone_channels.contains(&0) {
            return Err(ModelError::ZeroField { field: "backbone_channels" });
        }
        let convs = self.backbone_channels.len();
        for &index in &self.pool_after {
            if index == 0 || index > convs {
                return Err(ModelError::PoolIndex { index, convs });
            }
        }
        let pools = self.pools().len();
        if self.resolution >> pools == 0 {
            return Err(ModelError::ResolutionTooSmall {
                resolution: self.resolution,
                pools,
            });
        }
        Ok(())
    }

    fn pools(&self) -> BTreeSet<usize> {
        self.pool_after.iter().copied().collect()
    }

    /// Length of the prediction vector, `S*S*(5B+C)`.
    pub fn output_len(&self) -> usize {
        output_vector_len(self.grid, self.boxes, self.classes)
    }
}

impl FromStr for NetworkConfig {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ModelError::UnknownPreset(s.to_string());
        let rest = s.strip_prefix("TY:").ok_or_else(err)?;
        let parts: Vec<usize> = rest
            .split('-')
            .map(|p| p.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| err())?;
        let [classes, kernel, resolution] = parts[..] else {
            return Err(err());
        };
        let config = Self::new(classes, kernel, resolution);
        config.validate().map_err(|_| err())?;
        Ok(config)
    }
}

/// `S*S*(B*5+C)`.
pub fn output_vector_len(grid: usize, boxes: usize, classes: usize) -> usize {
    grid * grid * (boxes * 5 + classes)
}

/// Channel-major tensor shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Same-padded, stride-1 convolution with bias.
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    },
    /// 2x2, stride 2, floor division on odd sides.
    MaxPool,
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
    },
    /// Requantization of the preceding conv's accumulators; `conv` is the
    /// layer index of that conv.
    Requant { conv: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Requant { .. } => "requant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub spec: LayerSpec,
    pub input: TensorShape,
    pub output: TensorShape,
}

impl Layer {
    pub fn params(&self) -> usize {
        match self.spec {
            LayerSpec::Conv { in_ch, out_ch, kernel } => kernel * kernel * in_ch * out_ch + out_ch,
            LayerSpec::Linear { in_features, out_features } => in_features * out_features + out_features,
            _ => 0,
        }
    }

    pub fn macs(&self) -> usize {
        match self.spec {
            LayerSpec::Conv { in_ch, out_ch, kernel } => {
                kernel * kernel * in_ch * out_ch * self.output.plane()
            }
            LayerSpec::Linear { in_features, out_features } => in_features * out_features,
            _ => 0,
        }
    }

    /// Deployed parameter bytes: int8 weights, int32 biases, and per-channel
    /// requant multiplier and addend for convs.
    pub fn weight_bytes(&self) -> usize {
        match self.spec {
            LayerSpec::Conv { in_ch, out_ch, kernel } => kernel * kernel * in_ch * out_ch + out_ch * 12,
            LayerSpec::Linear { in_features, out_features } => in_features * out_features + out_features * 4,
            _ => 0,
        }
    }

    /// Bytes of the output tensor as it lives in memory: int32 for the
    /// linear accumulators, int8 otherwise (conv accumulators are requantized
    /// in place).
    pub fn output_bytes(&self) -> usize {
        match self.spec {
            LayerSpec::Linear { .. } => self.output.len() * 4,
            _ => self.output.len(),
        }
    }
}

/// Expanded, shape-checked network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub config: NetworkConfig,
    pub layers: Vec<Layer>,
}

impl ModelGraph {
    pub fn input_shape(&self) -> TensorShape {
        self.layers[0].input
    }

    pub fn output_shape(&self) -> TensorShape {
        self.layers[self.layers.len() - 1].output
    }

    /// Spatial side of the last backbone feature map.
    pub fn final_side(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find(|l| matches!(l.spec, LayerSpec::Flatten))
            .map(|l| l.input.height)
            .unwrap_or(0)
    }

    pub fn linear(&self) -> Option<&Layer> {
        self.layers.iter().find(|l| matches!(l.spec, LayerSpec::Linear { .. }))
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l.spec, LayerSpec::Conv { .. })).count()
    }

    pub fn pool_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l.spec, LayerSpec::MaxPool)).count()
    }

    pub fn weight_bytes(&self) -> usize {
        self.layers.iter().map(Layer::weight_bytes).sum()
    }

    /// Per-layer summary rows for the graph dump.
    pub fn rows(&self) -> Vec<LayerRow> {
        self.layers
            .iter()
            .map(|l| LayerRow {
                name: l.name.clone(),
                kind: l.spec.kind().to_string(),
                input: l.input.to_string(),
                output: l.output.to_string(),
                params: l.params(),
                macs: l.macs(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRow {
    pub name: String,
    pub kind: String,
    pub input: String,
    pub output: String,
    pub params: usize,
    pub macs: usize,
}

pub fn build_graph(config: &NetworkConfig) -> Result<ModelGraph, ModelError> {
    config.validate()?;
    let pools = config.pools();
    let mut layers = Vec::new();
    let mut shape = TensorShape::new(config.in_channels, config.resolution, config.resolution);
    let mut pool_no = 0;

    for (i, &out_ch) in config.backbone_channels.iter().enumerate() {
        let kernel = if i == 0 { config.first_kernel } else { 3 };
        let out = TensorShape::new(out_ch, shape.height, shape.width);
        layers.push(Layer {
            name: format!("conv{}", i + 1),
            spec: LayerSpec::Conv { in_ch: shape.channels, out_ch, kernel },
            input: shape,
            output: out,
        });
        let conv = layers.len() - 1;
        layers.push(Layer {
            name: format!("requant{}", i + 1),
            spec: LayerSpec::Requant { conv },
            input: out,
            output: out,
        });
        shape = out;
        if pools.contains(&(i + 1)) {
            pool_no += 1;
            let out = TensorShape::new(shape.channels, shape.height / 2, shape.width / 2);
            layers.push(Layer {
                name: format!("pool{pool_no}"),
                spec: LayerSpec::MaxPool,
                input: shape,
                output: out,
            });
            shape = out;
        }
    }

    let features = shape.len();
    let flat = TensorShape::new(features, 1, 1);
    layers.push(Layer { name: "flatten".into(), spec: LayerSpec::Flatten, input: shape, output: flat });
    let out_features = config.output_len();
    layers.push(Layer {
        name: "fc".into(),
        spec: LayerSpec::Linear { in_features: features, out_features },
        input: flat,
        output: TensorShape::new(out_features, 1, 1),
    });

    Ok(ModelGraph { config: config.clone(), layers })
}

pub fn count_params(graph: &ModelGraph) -> usize {
    graph.layers.iter().map(Layer::params).sum()
}

pub fn count_macs(graph: &ModelGraph) -> usize {
    graph.layers.iter().map(Layer::macs).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationMemory {
    /// Input plus output bytes of each layer, one byte per element.
    /// Requantization rewrites its input buffer in place and counts once.
    pub per_layer: Vec<usize>,
    pub peak: usize,
}

pub fn activation_memory(graph: &ModelGraph) -> ActivationMemory {
    let per_layer: Vec<usize> = graph
        .layers
        .iter()
        .map(|l| match l.spec {
            LayerSpec::Requant { .. } => l.output.len(),
            _ => l.input.len() + l.output.len(),
        })
        .collect();
    let peak = per_layer.iter().copied().max().unwrap_or(0);
    ActivationMemory { per_layer, peak }
}
