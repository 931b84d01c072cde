//! Multiply-accumulate accounting for encoder topologies and detection heads.
//!
//! One MAC counts as one FLOP. Only convolutions are counted: bias, norm,
//! activation, upsampling and element-wise adds are left out. Each layer is
//! charged at the spatial size of the level it produces, where a level of
//! stride `s` on an `H x W` image is `ceil(H / s) x ceil(W / s)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderSpec, FeatureLevel};
use crate::geometry::ImageSize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlopsError {
    #[error("unknown feature level {0:?}")]
    UnknownLevel(String),
    #[error("topology has no output levels")]
    NoOutputs,
    #[error("unknown topology {0:?} (expected mimo, simo, miso, siso or dilated)")]
    UnknownTopology(String),
}

/// `h * w * out_ch * in_ch * kernel^2`.
pub fn conv_flops(in_ch: u64, out_ch: u64, kernel: u64, h: u64, w: u64) -> u64 {
    h * w * out_ch * in_ch * kernel * kernel
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    MiMo,
    SiMo,
    MiSo,
    SiSo,
    DilatedEncoder,
    Custom,
}

impl std::str::FromStr for TopologyKind {
    type Err = FlopsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "mimo" => TopologyKind::MiMo,
            "simo" => TopologyKind::SiMo,
            "miso" => TopologyKind::MiSo,
            "siso" => TopologyKind::SiSo,
            "dilated" | "dilated_encoder" | "yolof" => TopologyKind::DilatedEncoder,
            _ => return Err(FlopsError::UnknownTopology(s.to_string())),
        })
    }
}

/// A convolution charged at the resolution of `level`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConvLayer {
    pub name: String,
    pub level: FeatureLevel,
    pub in_channels: u64,
    pub out_channels: u64,
    pub kernel: u64,
}

impl ConvLayer {
    pub fn new(name: impl Into<String>, level: FeatureLevel, in_channels: u64, out_channels: u64, kernel: u64) -> Self {
        Self {
            name: name.into(),
            level,
            in_channels,
            out_channels,
            kernel,
        }
    }
}

/// Config-file form of [`ConvLayer`], with the level as text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub level: String,
    pub in_channels: u64,
    pub out_channels: u64,
    pub kernel: u64,
}

impl TryFrom<&LayerSpec> for ConvLayer {
    type Error = FlopsError;

    fn try_from(s: &LayerSpec) -> Result<Self, Self::Error> {
        let level = s
            .level
            .parse()
            .map_err(|_| FlopsError::UnknownLevel(s.level.clone()))?;
        Ok(ConvLayer::new(s.name.clone(), level, s.in_channels, s.out_channels, s.kernel))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncoderTopology {
    pub kind: TopologyKind,
    /// Output width of the encoder.
    pub channels: u64,
    pub inputs: Vec<FeatureLevel>,
    pub outputs: Vec<FeatureLevel>,
    pub layers: Vec<ConvLayer>,
}

fn backbone(level: FeatureLevel) -> u64 {
    level.backbone_channels().expect("backbone level") as u64
}

impl EncoderTopology {
    /// Layer inventory of one of the four pyramid-style encoders. MiMo is the
    /// RetinaNet FPN (lateral 1x1 and output 3x3 per level, strided 3x3 for
    /// P6 from C5 and P7 from P6). SiMo drops the C3/C4 laterals and builds
    /// P3/P4 from the upsampled C5 path. MiSo adds a PANet-style bottom-up
    /// path (strided 3x3 then fusing 3x3 per step) ending at P5. SiSo keeps
    /// only the C5 lateral and P5 output conv.
    pub fn standard(kind: TopologyKind, channels: u64) -> Result<Self, FlopsError> {
        use FeatureLevel::*;
        let c = channels;
        let lateral = |src: FeatureLevel, dst: FeatureLevel| {
            ConvLayer::new(format!("lateral_{}", src.as_str().to_lowercase()), dst, backbone(src), c, 1)
        };
        let output = |lvl: FeatureLevel| ConvLayer::new(format!("output_{}", lvl.as_str().to_lowercase()), lvl, c, c, 3);
        let p6 = ConvLayer::new("p6_from_c5", P6, backbone(C5), c, 3);
        let p7 = ConvLayer::new("p7_from_p6", P7, c, c, 3);

        let (inputs, outputs, layers) = match kind {
            TopologyKind::MiMo => (
                vec![C3, C4, C5],
                vec![P3, P4, P5, P6, P7],
                vec![
                    lateral(C3, P3),
                    lateral(C4, P4),
                    lateral(C5, P5),
                    output(P3),
                    output(P4),
                    output(P5),
                    p6,
                    p7,
                ],
            ),
            TopologyKind::SiMo => (
                vec![C5],
                vec![P3, P4, P5, P6, P7],
                vec![lateral(C5, P5), output(P3), output(P4), output(P5), p6, p7],
            ),
            TopologyKind::MiSo => (
                vec![C3, C4, C5],
                vec![P5],
                vec![
                    lateral(C3, P3),
                    lateral(C4, P4),
                    lateral(C5, P5),
                    output(P3),
                    output(P4),
                    output(P5),
                    ConvLayer::new("downsample_n3", P4, c, c, 3),
                    ConvLayer::new("fuse_n4", P4, c, c, 3),
                    ConvLayer::new("downsample_n4", P5, c, c, 3),
                    ConvLayer::new("fuse_n5", P5, c, c, 3),
                ],
            ),
            TopologyKind::SiSo => (vec![C5], vec![P5], vec![lateral(C5, P5), output(P5)]),
            TopologyKind::DilatedEncoder | TopologyKind::Custom => {
                return Err(FlopsError::UnknownTopology(format!("{kind:?}")));
            }
        };
        Ok(Self {
            kind,
            channels,
            inputs,
            outputs,
            layers,
        })
    }

    /// The dilated encoder applied to one backbone level (C5 or DC5).
    pub fn dilated_encoder(spec: &EncoderSpec, level: FeatureLevel) -> Self {
        let (cin, mid, blk) = (
            spec.in_channels as u64,
            spec.mid_channels as u64,
            spec.block_channels() as u64,
        );
        let mut layers = vec![
            ConvLayer::new("projector_1x1", level, cin, mid, 1),
            ConvLayer::new("projector_3x3", level, mid, mid, 3),
        ];
        for (i, &d) in spec.dilations.iter().enumerate() {
            layers.push(ConvLayer::new(format!("block{i}_reduce"), level, mid, blk, 1));
            layers.push(ConvLayer::new(format!("block{i}_dilated_d{d}"), level, blk, blk, 3));
            layers.push(ConvLayer::new(format!("block{i}_expand"), level, blk, mid, 1));
        }
        Self {
            kind: TopologyKind::DilatedEncoder,
            channels: mid,
            inputs: vec![level],
            outputs: vec![level],
            layers,
        }
    }

    pub fn custom(channels: u64, outputs: &[&str], layers: &[LayerSpec]) -> Result<Self, FlopsError> {
        let outputs = outputs
            .iter()
            .map(|s| s.parse().map_err(|_| FlopsError::UnknownLevel(s.to_string())))
            .collect::<Result<Vec<FeatureLevel>, _>>()?;
        let layers = layers.iter().map(ConvLayer::try_from).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            kind: TopologyKind::Custom,
            channels,
            inputs: Vec::new(),
            outputs,
            layers,
        })
    }
}

/// Classification and regression heads shared across output levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSpec {
    pub cls_convs: u64,
    pub reg_convs: u64,
    /// Head width; the first conv of each head reads the encoder output.
    pub channels: u64,
    pub anchors_per_position: u64,
    pub num_classes: u64,
    /// Per-anchor objectness output on the regression head.
    pub objectness: bool,
}

impl Default for DecoderSpec {
    fn default() -> Self {
        Self::retinanet(256)
    }
}

impl DecoderSpec {
    /// Four convs per head, nine anchors per position.
    pub fn retinanet(channels: u64) -> Self {
        Self {
            cls_convs: 4,
            reg_convs: 4,
            channels,
            anchors_per_position: 9,
            num_classes: 80,
            objectness: false,
        }
    }

    /// Two classification convs, four regression convs, five anchors and an
    /// objectness output.
    pub fn yolof(channels: u64) -> Self {
        Self {
            cls_convs: 2,
            reg_convs: 4,
            channels,
            anchors_per_position: 5,
            num_classes: 80,
            objectness: true,
        }
    }

    fn layers(&self, level: FeatureLevel, in_channels: u64) -> Vec<ConvLayer> {
        let c = self.channels;
        let a = self.anchors_per_position;
        let mut out = Vec::new();
        let tower = |prefix: &str, n: u64, out: &mut Vec<ConvLayer>| -> u64 {
            let mut cin = in_channels;
            for i in 0..n {
                out.push(ConvLayer::new(format!("{prefix}_conv{i}"), level, cin, c, 3));
                cin = c;
            }
            cin
        };
        let cls_in = tower("cls", self.cls_convs, &mut out);
        let reg_in = tower("reg", self.reg_convs, &mut out);
        out.push(ConvLayer::new("cls_score", level, cls_in, a * self.num_classes, 3));
        out.push(ConvLayer::new("bbox_pred", level, reg_in, a * 4, 3));
        if self.objectness {
            out.push(ConvLayer::new("objectness", level, reg_in, a, 3));
        }
        out.retain(|l| l.in_channels > 0 && l.out_channels > 0);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerFlops {
    pub component: Component,
    pub name: String,
    pub level: FeatureLevel,
    pub in_channels: u64,
    pub out_channels: u64,
    pub kernel: u64,
    pub height: u64,
    pub width: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LevelFlops {
    pub level: FeatureLevel,
    pub height: u64,
    pub width: u64,
    pub encoder_macs: u64,
    pub decoder_macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopsReport {
    pub topology: TopologyKind,
    pub image: ImageSize,
    pub encoder_macs: u64,
    pub decoder_macs: u64,
    pub encoder_decoder_macs: u64,
    /// User-supplied backbone cost, when known.
    pub backbone_macs: Option<u64>,
    /// Backbone plus encoder and decoder; `None` without a backbone figure.
    pub total_macs: Option<u64>,
    pub per_level: Vec<LevelFlops>,
    pub layers: Vec<LayerFlops>,
    pub notes: Vec<String>,
}

impl FlopsReport {
    pub fn with_backbone(mut self, macs: u64) -> Self {
        self.backbone_macs = Some(macs);
        self.total_macs = Some(macs + self.encoder_decoder_macs);
        self
    }
}

fn charge(component: Component, layer: &ConvLayer, image: ImageSize) -> LayerFlops {
    let (h, w) = image.feature_shape(layer.level.stride());
    let (h, w) = (h as u64, w as u64);
    LayerFlops {
        component,
        name: layer.name.clone(),
        level: layer.level,
        in_channels: layer.in_channels,
        out_channels: layer.out_channels,
        kernel: layer.kernel,
        height: h,
        width: w,
        macs: conv_flops(layer.in_channels, layer.out_channels, layer.kernel, h, w),
    }
}

/// Charges every encoder layer once and the decoder heads on every output
/// level.
pub fn encoder_decoder_flops(
    topology: &EncoderTopology,
    decoder: &DecoderSpec,
    image: ImageSize,
) -> Result<FlopsReport, FlopsError> {
    if topology.outputs.is_empty() {
        return Err(FlopsError::NoOutputs);
    }
    let mut layers: Vec<LayerFlops> = topology
        .layers
        .iter()
        .map(|l| charge(Component::Encoder, l, image))
        .collect();
    for &level in &topology.outputs {
        layers.extend(
            decoder
                .layers(level, topology.channels)
                .iter()
                .map(|l| charge(Component::Decoder, l, image)),
        );
    }

    let mut per_level: BTreeMap<FeatureLevel, LevelFlops> = BTreeMap::new();
    let (mut enc, mut dec) = (0u64, 0u64);
    for l in &layers {
        let entry = per_level.entry(l.level).or_insert(LevelFlops {
            level: l.level,
            height: l.height,
            width: l.width,
            encoder_macs: 0,
            decoder_macs: 0,
        });
        match l.component {
            Component::Encoder => {
                entry.encoder_macs += l.macs;
                enc += l.macs;
            }
            Component::Decoder => {
                entry.decoder_macs += l.macs;
                dec += l.macs;
            }
        }
    }
    Ok(FlopsReport {
        topology: topology.kind,
        image,
        encoder_macs: enc,
        decoder_macs: dec,
        encoder_decoder_macs: enc + dec,
        backbone_macs: None,
        total_macs: None,
        per_level: per_level.into_values().collect(),
        layers,
        notes: vec![
            "1 MAC = 1 FLOP".to_string(),
            "convolutions only; bias, normalization, activation, upsampling and additions excluded".to_string(),
            "backbone excluded unless supplied".to_string(),
        ],
    })
}
