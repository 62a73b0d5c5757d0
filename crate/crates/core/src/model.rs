//! Layer geometry, network tables and latency measurements.
//!
//! Everything here is geometry only: no weights, no tensors. A layer is
//! described by its channel counts, kernel, input extent, stride and
//! padding, and the output extent must come out as an exact integer.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unvalidated layer geometry, as read from files or typed by hand.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub layer_id: String,
    pub in_channels: u32,
    pub out_channels: u32,
    pub kernel_h: u32,
    pub kernel_w: u32,
    pub input_h: u32,
    pub input_w: u32,
    pub stride: u32,
    pub padding: u32,
}

/// A validated convolutional layer.
///
/// Construct with [`make_layer_spec`] or [`ConvLayerSpec::new`]; the
/// output extent is guaranteed to be a positive integer in both axes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LayerGeometry", into = "LayerGeometry")]
pub struct ConvLayerSpec {
    geometry: LayerGeometry,
}

fn output_extent(axis: &'static str, input: u32, kernel: u32, stride: u32, padding: u32) -> Result<u32> {
    let err = || Error::Geometry { axis, input, kernel, stride, padding };
    let padded = u64::from(input) + 2 * u64::from(padding);
    let span = padded.checked_sub(u64::from(kernel)).ok_or_else(err)?;
    if span % u64::from(stride) != 0 {
        return Err(err());
    }
    u32::try_from(span / u64::from(stride) + 1).map_err(|_| err())
}

impl ConvLayerSpec {
    pub fn new(geometry: LayerGeometry) -> Result<Self> {
        let g = &geometry;
        for (name, v) in [
            ("in_channels", g.in_channels),
            ("out_channels", g.out_channels),
            ("kernel_h", g.kernel_h),
            ("kernel_w", g.kernel_w),
            ("input_h", g.input_h),
            ("input_w", g.input_w),
            ("stride", g.stride),
        ] {
            if v == 0 {
                return Err(Error::validation(format!("{name} must be at least 1 (layer `{}`)", g.layer_id)));
            }
        }
        output_extent("height", g.input_h, g.kernel_h, g.stride, g.padding)?;
        output_extent("width", g.input_w, g.kernel_w, g.stride, g.padding)?;
        Ok(Self { geometry })
    }

    pub fn geometry(&self) -> &LayerGeometry {
        &self.geometry
    }

    pub fn layer_id(&self) -> &str {
        &self.geometry.layer_id
    }

    pub fn in_channels(&self) -> u32 {
        self.geometry.in_channels
    }

    pub fn out_channels(&self) -> u32 {
        self.geometry.out_channels
    }

    pub fn kernel(&self) -> (u32, u32) {
        (self.geometry.kernel_h, self.geometry.kernel_w)
    }

    pub fn input(&self) -> (u32, u32) {
        (self.geometry.input_h, self.geometry.input_w)
    }

    pub fn stride(&self) -> u32 {
        self.geometry.stride
    }

    pub fn padding(&self) -> u32 {
        self.geometry.padding
    }

    /// Output spatial extent `(height, width)`.
    pub fn output(&self) -> (u32, u32) {
        let g = &self.geometry;
        // validated at construction
        let h = output_extent("height", g.input_h, g.kernel_h, g.stride, g.padding).unwrap();
        let w = output_extent("width", g.input_w, g.kernel_w, g.stride, g.padding).unwrap();
        (h, w)
    }

    /// Same layer with a different filter count. Every other field is kept.
    pub fn with_out_channels(&self, out_channels: u32) -> Result<Self> {
        if out_channels == 0 {
            return Err(Error::validation(format!("out_channels must be at least 1 (layer `{}`)", self.layer_id())));
        }
        let mut geometry = self.geometry.clone();
        geometry.out_channels = out_channels;
        Ok(Self { geometry })
    }
}

impl TryFrom<LayerGeometry> for ConvLayerSpec {
    type Error = Error;

    fn try_from(g: LayerGeometry) -> Result<Self> {
        Self::new(g)
    }
}

impl From<ConvLayerSpec> for LayerGeometry {
    fn from(spec: ConvLayerSpec) -> Self {
        spec.geometry
    }
}

pub fn make_layer_spec(geometry: LayerGeometry) -> Result<ConvLayerSpec> {
    ConvLayerSpec::new(geometry)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct NetworkModel {
    name: String,
    layers: Vec<ConvLayerSpec>,
}

#[derive(Deserialize)]
struct RawNetwork {
    name: String,
    layers: Vec<ConvLayerSpec>,
}

impl TryFrom<RawNetwork> for NetworkModel {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        NetworkModel::new(raw.name, raw.layers)
    }
}

impl NetworkModel {
    pub fn new(name: impl Into<String>, layers: Vec<ConvLayerSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for layer in &layers {
            if !seen.insert(layer.layer_id()) {
                return Err(Error::validation(format!("duplicate layer_id `{}`", layer.layer_id())));
            }
        }
        Ok(Self { name: name.into(), layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[ConvLayerSpec] {
        &self.layers
    }

    pub fn layer(&self, layer_id: &str) -> Option<&ConvLayerSpec> {
        self.layers.iter().find(|l| l.layer_id() == layer_id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// One timed run of one layer configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub layer_id: String,
    pub out_channels: u32,
    pub run_index: u32,
    pub latency_ms: f64,
}

impl LatencySample {
    pub fn new(layer_id: impl Into<String>, out_channels: u32, run_index: u32, latency_ms: f64) -> Result<Self> {
        if !(latency_ms.is_finite() && latency_ms > 0.0) {
            return Err(Error::validation(format!("latency_ms must be a positive finite number, got {latency_ms}")));
        }
        Ok(Self { layer_id: layer_id.into(), out_channels, run_index, latency_ms })
    }
}

/// Aggregated latency of one layer as a function of its filter count.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyCurve {
    layer_id: String,
    points: BTreeMap<u32, f64>,
}

impl LatencyCurve {
    pub fn new(layer_id: impl Into<String>, points: BTreeMap<u32, f64>) -> Result<Self> {
        let layer_id = layer_id.into();
        for (&c, &t) in &points {
            if c == 0 {
                return Err(Error::validation(format!("curve `{layer_id}` has a point at 0 channels")));
            }
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::validation(format!(
                    "curve `{layer_id}` has non-positive latency {t} at {c} channels"
                )));
            }
        }
        Ok(Self { layer_id, points })
    }

    pub fn from_points(layer_id: impl Into<String>, points: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        Self::new(layer_id, points.into_iter().collect())
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn latency(&self, channels: u32) -> Option<f64> {
        self.points.get(&channels).copied()
    }

    /// Points in increasing channel order.
    pub fn iter(&self) -> impl DoubleEndedIterator<Item = (u32, f64)> + ExactSizeIterator + '_ {
        self.points.iter().map(|(&c, &t)| (c, t))
    }

    pub fn channels(&self) -> impl DoubleEndedIterator<Item = u32> + '_ {
        self.points.keys().copied()
    }

    /// Largest channel count in the curve, i.e. the unpruned configuration.
    pub fn base_channels(&self) -> Option<u32> {
        self.points.keys().next_back().copied()
    }

    pub fn points(&self) -> &BTreeMap<u32, f64> {
        &self.points
    }

    /// Multiply every latency by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.layer_id.clone(), self.points.iter().map(|(&c, &t)| (c, t * factor)).collect())
    }
}

fn conv(
    layer_id: String,
    in_ch: u32,
    out_ch: u32,
    kernel: u32,
    input: u32,
    stride: u32,
    padding: u32,
) -> ConvLayerSpec {
    ConvLayerSpec::new(LayerGeometry {
        layer_id,
        in_channels: in_ch,
        out_channels: out_ch,
        kernel_h: kernel,
        kernel_w: kernel,
        input_h: input,
        input_w: input,
        stride,
        padding,
    })
    .expect("built-in layer tables are valid")
}

/// Built-in layer tables for `"vgg16"`, `"alexnet"` and `"resnet50"`.
///
/// Only unique convolution shapes are listed; repeated shapes appear once.
/// Layer ids carry the conventional position index (`VGG.L5`, `ResNet.L16`).
///
/// Strided layers store the *effective* input extent, i.e. the rows and
/// columns the kernel actually touches (223 instead of 224 for the 7x7/2
/// stem, 55 instead of 56 for 3x3/2 and 1x1/2 layers), so the output size
/// is integral without silent flooring.
pub fn builtin_network(name: &str) -> Result<NetworkModel> {
    let layers = match name {
        "vgg16" => {
            // (index, in, out, input extent)
            const VGG: [(u32, u32, u32, u32); 9] = [
                (0, 3, 64, 224),
                (2, 64, 64, 224),
                (5, 64, 128, 112),
                (7, 128, 128, 112),
                (10, 128, 256, 56),
                (12, 256, 256, 56),
                (17, 256, 512, 28),
                (19, 512, 512, 28),
                (24, 512, 512, 14),
            ];
            VGG.iter().map(|&(i, cin, cout, hw)| conv(format!("VGG.L{i}"), cin, cout, 3, hw, 1, 1)).collect()
        }
        "alexnet" => {
            // (index, in, out, kernel, input, stride, padding)
            const ALEX: [(u32, u32, u32, u32, u32, u32, u32); 5] = [
                (0, 3, 64, 11, 227, 4, 0),
                (3, 64, 192, 5, 27, 1, 2),
                (6, 192, 384, 3, 13, 1, 1),
                (8, 384, 256, 3, 13, 1, 1),
                (10, 256, 256, 3, 13, 1, 1),
            ];
            ALEX.iter()
                .map(|&(i, cin, cout, k, hw, s, p)| conv(format!("AlexNet.L{i}"), cin, cout, k, hw, s, p))
                .collect()
        }
        "resnet50" => {
            // Best-effort mapping of position index to bottleneck stage: the
            // unique shapes are taken in network order (stem, conv2_x ..
            // conv5_x, projection shortcut after each stage's first 3x3).
            const RESNET: [(u32, u32, u32, u32, u32, u32, u32); 23] = [
                (0, 3, 64, 7, 223, 2, 3),
                (1, 64, 64, 1, 56, 1, 0),
                (2, 64, 64, 3, 56, 1, 1),
                (3, 64, 256, 1, 56, 1, 0),
                (5, 256, 64, 1, 56, 1, 0),
                (11, 256, 128, 1, 56, 1, 0),
                (12, 128, 128, 3, 55, 2, 1),
                (13, 128, 512, 1, 28, 1, 0),
                (14, 256, 512, 1, 55, 2, 0),
                (15, 512, 128, 1, 28, 1, 0),
                (16, 128, 128, 3, 28, 1, 1),
                (24, 512, 256, 1, 28, 1, 0),
                (25, 256, 256, 3, 27, 2, 1),
                (26, 256, 1024, 1, 14, 1, 0),
                (27, 512, 1024, 1, 27, 2, 0),
                (28, 1024, 256, 1, 14, 1, 0),
                (29, 256, 256, 3, 14, 1, 1),
                (43, 1024, 512, 1, 14, 1, 0),
                (44, 512, 512, 3, 13, 2, 1),
                (45, 512, 2048, 1, 7, 1, 0),
                (46, 1024, 2048, 1, 13, 2, 0),
                (47, 2048, 512, 1, 7, 1, 0),
                (48, 512, 512, 3, 7, 1, 1),
            ];
            RESNET
                .iter()
                .map(|&(i, cin, cout, k, hw, s, p)| conv(format!("ResNet.L{i}"), cin, cout, k, hw, s, p))
                .collect()
        }
        other => return Err(Error::UnknownNetwork(other.to_string())),
    };
    NetworkModel::new(name, layers)
}

pub const BUILTIN_NETWORKS: [&str; 3] = ["vgg16", "alexnet", "resnet50"];
