//! Label assignment and encoder analysis for single-level-feature object
//! detectors: anchor geometry, uniform / max-IoU / ATSS / Hungarian / top-k
//! matching, positive-anchor balance statistics, dilated-encoder receptive
//! fields with a numeric forward pass, NMS, FLOPs accounting and COCO
//! ingestion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balance;
pub mod encoder;
pub mod flops;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod parallel;
pub mod postprocess;
pub mod synth;

pub use balance::{distribution, imbalance_ratio, Imbalance, MatchDistribution, SizeBucket, SizeBuckets};
pub use encoder::{forward, rf_profile, EncoderSpec, RFProfile};
pub use flops::{encoder_decoder_flops, DecoderSpec, EncoderTopology, FlopsReport, TopologyKind};
pub use geometry::{generate_anchors, giou, iou, AnchorConfig, BoxXYXY, ImageSize};
pub use matching::{
    atss_match, hungarian_match, max_iou_match, topk_match, uniform_match, GroundTruthSet, Label, MatchResult,
    MatcherConfig,
};
pub use parallel::Execution;
pub use postprocess::{nms, score_filter, Detection};
