//! TOML run configuration. Every section is optional and falls back to the
//! built-in defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::balance::SizeBuckets;
use crate::encoder::EncoderSpec;
use crate::flops::{DecoderSpec, EncoderTopology, FlopsError, LayerSpec, TopologyKind};
use crate::geometry::{AnchorConfig, ImageSize, DEFAULT_MAX_SHIFT};
use crate::matching::MatcherConfig;
use crate::postprocess::DEFAULT_NMS_IOU;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSettings {
    pub enabled: bool,
    pub max_shift: u32,
}

impl Default for ShiftSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            max_shift: DEFAULT_MAX_SHIFT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlopsSettings {
    /// `mimo`, `simo`, `miso`, `siso`, `dilated` or `custom`.
    pub topology: String,
    pub channels: u64,
    /// Image as `HEIGHTxWIDTH`.
    pub image: String,
    pub decoder: DecoderSpec,
    pub backbone_macs: Option<u64>,
    /// Level the dilated encoder runs on.
    pub level: String,
    /// Output levels and layers of a `custom` topology.
    pub outputs: Vec<String>,
    pub layers: Vec<LayerSpec>,
}

impl Default for FlopsSettings {
    fn default() -> Self {
        Self {
            topology: "siso".to_string(),
            channels: 256,
            image: "800x1280".to_string(),
            decoder: DecoderSpec::retinanet(256),
            backbone_macs: None,
            level: "C5".to_string(),
            outputs: Vec::new(),
            layers: Vec::new(),
        }
    }
}

impl FlopsSettings {
    pub fn image_size(&self) -> Result<ImageSize, DataError> {
        self.image
            .parse()
            .map_err(|_| DataError::Config(format!("flops.image {:?} is not HEIGHTxWIDTH", self.image)))
    }

    pub fn topology(&self, encoder: &EncoderSpec) -> Result<EncoderTopology, DataError> {
        let cfg = |e: FlopsError| DataError::Config(e.to_string());
        if self.topology.eq_ignore_ascii_case("custom") {
            let outputs: Vec<&str> = self.outputs.iter().map(String::as_str).collect();
            return EncoderTopology::custom(self.channels, &outputs, &self.layers).map_err(cfg);
        }
        match self.topology.parse::<TopologyKind>().map_err(cfg)? {
            TopologyKind::DilatedEncoder => {
                let level = self
                    .level
                    .parse()
                    .map_err(|_| DataError::Config(format!("unknown level {:?}", self.level)))?;
                Ok(EncoderTopology::dilated_encoder(encoder, level))
            }
            kind => EncoderTopology::standard(kind, self.channels).map_err(cfg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsSettings {
    pub iou: f64,
    pub min_score: f64,
    pub max_keep: usize,
}

impl Default for NmsSettings {
    fn default() -> Self {
        Self {
            iou: DEFAULT_NMS_IOU,
            min_score: 0.0,
            max_keep: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub matcher: MatcherConfig,
    pub anchors: AnchorConfig,
    pub buckets: SizeBuckets,
    pub shift: ShiftSettings,
    pub encoder: EncoderSpec,
    pub flops: FlopsSettings,
    pub nms: NmsSettings,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let cfg = |m: String| DataError::Config(m);
        self.matcher.validate().map_err(|e| cfg(format!("matcher: {e}")))?;
        self.anchors.validate().map_err(|e| cfg(format!("anchors: {e}")))?;
        self.buckets.validate().map_err(|e| cfg(format!("buckets: {e}")))?;
        self.encoder.validate().map_err(|e| cfg(format!("encoder: {e}")))?;
        if !(0.0..=1.0).contains(&self.nms.iou) {
            return Err(cfg(format!("nms.iou {} is not in [0, 1]", self.nms.iou)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self, DataError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_col(text, s.start))
                .unwrap_or((0, 0));
            DataError::Parse {
                path: origin.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, or the built-in defaults when `path` is `default`.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        if path.as_os_str() == "default" {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::MaxIoUConfig;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml("", "mem").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig {
            seed: 9,
            matcher: MatcherConfig::MaxIou(MaxIoUConfig {
                low_quality_rescue: false,
                ..MaxIoUConfig::default()
            }),
            ..RunConfig::default()
        };
        cfg.shift.enabled = true;
        let back = RunConfig::from_toml(&cfg.to_toml(), "mem").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_sections() {
        let text = "seed = 3\n[matcher]\nkind = \"topk\"\nk = 1\n[shift]\nenabled = true\n";
        let cfg = RunConfig::from_toml(text, "mem").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.matcher, MatcherConfig::Topk { k: 1 });
        assert_eq!(cfg.shift.max_shift, DEFAULT_MAX_SHIFT);
    }

    #[test]
    fn errors_point_at_the_line() {
        let err = RunConfig::from_toml("seed = 1\nbogus = 2\n", "run.toml").unwrap_err();
        match err {
            DataError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let invalid = "[matcher]\nkind = \"uniform\"\nk = 0\n";
        assert!(matches!(RunConfig::from_toml(invalid, "mem"), Err(DataError::Config(_))));
    }

    #[test]
    fn flops_topologies_resolve() {
        let enc = EncoderSpec::default();
        let mut f = FlopsSettings::default();
        for name in ["mimo", "simo", "miso", "siso", "dilated"] {
            f.topology = name.to_string();
            assert!(f.topology(&enc).is_ok(), "{name}");
        }
        f.topology = "bogus".to_string();
        assert!(f.topology(&enc).is_err());
        assert_eq!(f.image_size().unwrap(), ImageSize { width: 1280, height: 800 });
    }
}
