//! Structural model of the dilated encoder: a projector (1x1 conv + BN,
//! 3x3 conv + BN) followed by bottleneck residual blocks whose middle 3x3
//! conv is dilated. Each block is 1x1 reduce, 3x3 dilated, 1x1 expand, every
//! conv followed by BN and ReLU, then an identity shortcut add.
//!
//! Receptive fields are measured in feature-grid cells. A signal path either
//! traverses or skips each block, so the output mixes the extents
//! `3 + 2 * sum(d_i for traversed blocks)` over all subsets of blocks.

use std::collections::BTreeSet;

use ndarray::{s, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::{self, Execution};

pub const BN_EPS: f64 = 1e-5;

/// Bottleneck channel reduction inside each residual block.
pub const REDUCTION: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("invalid encoder spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch in {what}: expected {expected:?}, got {actual:?}")]
    Shape {
        what: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("unknown feature level {0:?}")]
    UnknownLevel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSpec {
    pub in_channels: usize,
    pub mid_channels: usize,
    /// One dilation per residual block.
    pub dilations: Vec<usize>,
    pub shortcuts: bool,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            in_channels: 2048,
            mid_channels: 512,
            dilations: vec![2, 4, 6, 8],
            shortcuts: true,
        }
    }
}

impl EncoderSpec {
    pub fn with_dilations(dilations: Vec<usize>) -> Self {
        Self {
            dilations,
            ..Self::default()
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.dilations.len()
    }

    pub fn block_channels(&self) -> usize {
        self.mid_channels / REDUCTION
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.in_channels == 0 {
            return Err(EncoderError::InvalidSpec("in_channels must be positive".into()));
        }
        if self.mid_channels == 0 || !self.mid_channels.is_multiple_of(REDUCTION) {
            return Err(EncoderError::InvalidSpec(format!(
                "mid_channels must be a positive multiple of {REDUCTION}, got {}",
                self.mid_channels
            )));
        }
        if self.dilations.contains(&0) {
            return Err(EncoderError::InvalidSpec("dilations must be positive".into()));
        }
        Ok(())
    }
}

/// Distinct receptive-field extents produced by the encoder, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RFProfile {
    pub extents: Vec<usize>,
    pub max_extent: usize,
}

impl RFProfile {
    /// Approximate input-pixel coverage of each extent at `stride`.
    pub fn pixel_extents(&self, stride: usize) -> Vec<usize> {
        self.extents.iter().map(|e| e * stride).collect()
    }
}

pub fn rf_profile(spec: &EncoderSpec) -> RFProfile {
    let mut sums: BTreeSet<usize> = BTreeSet::from([0]);
    if spec.shortcuts {
        for &d in &spec.dilations {
            let shifted: Vec<usize> = sums.iter().map(|s| s + 2 * d).collect();
            sums.extend(shifted);
        }
    } else {
        sums = BTreeSet::from([2 * spec.dilations.iter().sum::<usize>()]);
    }
    let extents: Vec<usize> = sums.into_iter().map(|s| 3 + s).collect();
    let max_extent = *extents.last().expect("at least one path");
    RFProfile { extents, max_extent }
}

/// Closed interval of object scales in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleInterval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCoverage {
    /// One band per extent: `[extent * stride / 2, extent * stride]`.
    pub bands: Vec<ScaleInterval>,
    pub union: Vec<ScaleInterval>,
    /// Open intervals between consecutive pieces of the union.
    pub gaps: Vec<ScaleInterval>,
}

/// Heuristic object-scale coverage: an extent of `e` cells at `stride`
/// nominally suits objects between half and all of `e * stride` pixels.
pub fn scale_coverage(profile: &RFProfile, stride: usize) -> ScaleCoverage {
    let mut bands: Vec<ScaleInterval> = profile
        .extents
        .iter()
        .map(|&e| {
            let px = (e * stride) as f64;
            ScaleInterval { lo: px / 2.0, hi: px }
        })
        .collect();
    bands.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut union: Vec<ScaleInterval> = Vec::new();
    for band in &bands {
        match union.last_mut() {
            Some(last) if band.lo <= last.hi => last.hi = last.hi.max(band.hi),
            _ => union.push(*band),
        }
    }
    let gaps = union
        .windows(2)
        .map(|w| ScaleInterval {
            lo: w[0].hi,
            hi: w[1].lo,
        })
        .collect();
    ScaleCoverage { bands, union, gaps }
}

/// Backbone and pyramid feature levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureLevel {
    C3,
    C4,
    C5,
    DC5,
    P3,
    P4,
    P5,
    P6,
    P7,
}

impl FeatureLevel {
    pub fn stride(self) -> u32 {
        match self {
            FeatureLevel::C3 | FeatureLevel::P3 => 8,
            FeatureLevel::C4 | FeatureLevel::P4 | FeatureLevel::DC5 => 16,
            FeatureLevel::C5 | FeatureLevel::P5 => 32,
            FeatureLevel::P6 => 64,
            FeatureLevel::P7 => 128,
        }
    }

    /// ResNet-50 output channels for backbone levels; `None` for pyramid
    /// levels, whose width is set by the encoder.
    pub fn backbone_channels(self) -> Option<usize> {
        match self {
            FeatureLevel::C3 => Some(512),
            FeatureLevel::C4 => Some(1024),
            FeatureLevel::C5 | FeatureLevel::DC5 => Some(2048),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureLevel::C3 => "C3",
            FeatureLevel::C4 => "C4",
            FeatureLevel::C5 => "C5",
            FeatureLevel::DC5 => "DC5",
            FeatureLevel::P3 => "P3",
            FeatureLevel::P4 => "P4",
            FeatureLevel::P5 => "P5",
            FeatureLevel::P6 => "P6",
            FeatureLevel::P7 => "P7",
        }
    }
}

impl std::fmt::Display for FeatureLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureLevel {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "C3" => FeatureLevel::C3,
            "C4" => FeatureLevel::C4,
            "C5" => FeatureLevel::C5,
            "DC5" => FeatureLevel::DC5,
            "P3" => FeatureLevel::P3,
            "P4" => FeatureLevel::P4,
            "P5" => FeatureLevel::P5,
            "P6" => FeatureLevel::P6,
            "P7" => FeatureLevel::P7,
            _ => return Err(EncoderError::UnknownLevel(s.to_string())),
        })
    }
}

/// Bias-free convolution with `[out, in, k, k]` weights, zero padding
/// `dilation * (k / 2)` so spatial size is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: Array4<f64>,
    pub dilation: usize,
}

impl Conv {
    fn filled(out_ch: usize, in_ch: usize, k: usize, dilation: usize, value: f64) -> Self {
        Self {
            weight: Array4::from_elem((out_ch, in_ch, k, k), value),
            dilation,
        }
    }

    /// Copies input channel `i` to output channel `i` for `i < min(out, in)`
    /// through the center tap.
    fn channel_identity(out_ch: usize, in_ch: usize, k: usize, dilation: usize) -> Self {
        let mut c = Self::filled(out_ch, in_ch, k, dilation, 0.0);
        for i in 0..out_ch.min(in_ch) {
            c.weight[[i, i, k / 2, k / 2]] = 1.0;
        }
        c
    }

    fn random(out_ch: usize, in_ch: usize, k: usize, dilation: usize, rng: &mut Pcg32) -> Self {
        let weight = Array4::from_shape_simple_fn((out_ch, in_ch, k, k), || rng.random_range(-0.1..=0.1));
        Self { weight, dilation }
    }

    fn shape(&self) -> (usize, usize, usize) {
        let s = self.weight.shape();
        (s[0], s[1], s[2])
    }

    fn check(&self, what: &str, out_ch: usize, in_ch: usize, k: usize, dilation: usize) -> Result<(), EncoderError> {
        let s = self.weight.shape();
        if s != [out_ch, in_ch, k, k] || self.dilation != dilation {
            return Err(EncoderError::Shape {
                what: format!("{what} (weight shape, dilation)"),
                expected: vec![out_ch, in_ch, k, k, dilation],
                actual: vec![s[0], s[1], s[2], s[3], self.dilation],
            });
        }
        Ok(())
    }

    pub fn apply(&self, input: &Array3<f64>, exec: Execution) -> Array3<f64> {
        let (out_ch, in_ch, k) = self.shape();
        let (_, h, w) = input.dim();
        let half = (k / 2) as isize;
        let dil = self.dilation as isize;
        let planes: Vec<Vec<f64>> = parallel::map_range(exec, out_ch, |o| {
            let mut plane = vec![0.0f64; h * w];
            for c in 0..in_ch {
                for ky in 0..k {
                    let dy = (ky as isize - half) * dil;
                    for kx in 0..k {
                        let dx = (kx as isize - half) * dil;
                        let wgt = self.weight[[o, c, ky, kx]];
                        if wgt == 0.0 {
                            continue;
                        }
                        let y0 = (-dy).max(0) as usize;
                        let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let row = &mut plane[y * w..(y + 1) * w];
                            for (x, v) in row.iter_mut().enumerate().take(x1).skip(x0) {
                                let sx = (x as isize + dx) as usize;
                                *v += wgt * input[[c, sy, sx]];
                            }
                        }
                    }
                }
            }
            plane
        });
        let flat: Vec<f64> = planes.into_iter().flatten().collect();
        Array3::from_shape_vec((out_ch, h, w), flat).expect("plane sizes match")
    }
}

/// Inference-mode batch norm: `gamma * (x - mean) / sqrt(var + eps) + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNorm {
    /// gamma 1, beta 0, mean 0, var 1.
    pub fn neutral(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// Variance chosen so that `var + eps == 1` and the layer is the identity.
    pub fn exact_identity(channels: usize) -> Self {
        Self {
            var: vec![1.0 - BN_EPS; channels],
            ..Self::neutral(channels)
        }
    }

    fn random(channels: usize, rng: &mut Pcg32) -> Self {
        Self {
            gamma: (0..channels).map(|_| rng.random_range(0.5..=1.5)).collect(),
            beta: (0..channels).map(|_| rng.random_range(-0.1..=0.1)).collect(),
            mean: (0..channels).map(|_| rng.random_range(-0.1..=0.1)).collect(),
            var: (0..channels).map(|_| rng.random_range(0.5..=1.5)).collect(),
        }
    }

    fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, what: &str, channels: usize) -> Result<(), EncoderError> {
        let lens = [self.gamma.len(), self.beta.len(), self.mean.len(), self.var.len()];
        if lens.iter().any(|&l| l != channels) {
            return Err(EncoderError::Shape {
                what: format!("{what} (gamma, beta, mean, var)"),
                expected: vec![channels; 4],
                actual: lens.to_vec(),
            });
        }
        Ok(())
    }

    fn apply(&self, x: &mut Array3<f64>) {
        for (c, mut plane) in x.outer_iter_mut().enumerate() {
            let scale = self.gamma[c] / (self.var[c] + BN_EPS).sqrt();
            let shift = self.beta[c];
            let mean = self.mean[c];
            plane.mapv_inplace(|v| scale * (v - mean) + shift);
        }
    }
}

fn relu(x: &mut Array3<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub reduce: Conv,
    pub reduce_bn: BatchNorm,
    pub dilated: Conv,
    pub dilated_bn: BatchNorm,
    pub expand: Conv,
    pub expand_bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub lateral: Conv,
    pub lateral_bn: BatchNorm,
    pub fpn: Conv,
    pub fpn_bn: BatchNorm,
    pub blocks: Vec<BlockWeights>,
}

impl WeightSet {
    fn build(
        spec: &EncoderSpec,
        mut conv: impl FnMut(usize, usize, usize, usize) -> Conv,
        mut bn: impl FnMut(usize) -> BatchNorm,
    ) -> Self {
        let (cin, mid, blk) = (spec.in_channels, spec.mid_channels, spec.block_channels());
        let lateral = conv(mid, cin, 1, 1);
        let lateral_bn = bn(mid);
        let fpn = conv(mid, mid, 3, 1);
        let fpn_bn = bn(mid);
        let blocks = spec
            .dilations
            .iter()
            .map(|&d| {
                let reduce = conv(blk, mid, 1, 1);
                let reduce_bn = bn(blk);
                let dilated = conv(blk, blk, 3, d);
                let dilated_bn = bn(blk);
                let expand = conv(mid, blk, 1, 1);
                let expand_bn = bn(mid);
                BlockWeights {
                    reduce,
                    reduce_bn,
                    dilated,
                    dilated_bn,
                    expand,
                    expand_bn,
                }
            })
            .collect();
        Self {
            lateral,
            lateral_bn,
            fpn,
            fpn_bn,
            blocks,
        }
    }

    /// Seeded weights: convs uniform in `[-0.1, 0.1]`, BN statistics drawn
    /// from narrow positive ranges.
    pub fn random(spec: &EncoderSpec, seed: u64) -> Self {
        let rng = std::cell::RefCell::new(Pcg32::seed_from_u64(seed));
        Self::build(
            spec,
            |o, i, k, d| Conv::random(o, i, k, d, &mut rng.borrow_mut()),
            |c| BatchNorm::random(c, &mut rng.borrow_mut()),
        )
    }

    /// Channel-identity convs and exact-identity BN.
    pub fn identity(spec: &EncoderSpec) -> Self {
        Self::build(spec, Conv::channel_identity, BatchNorm::exact_identity)
    }

    /// Every conv weight equal to `value`, neutral BN.
    pub fn constant(spec: &EncoderSpec, value: f64) -> Self {
        Self::build(spec, |o, i, k, d| Conv::filled(o, i, k, d, value), BatchNorm::neutral)
    }

    pub fn check(&self, spec: &EncoderSpec) -> Result<(), EncoderError> {
        let (cin, mid, blk) = (spec.in_channels, spec.mid_channels, spec.block_channels());
        self.lateral.check("projector 1x1", mid, cin, 1, 1)?;
        self.lateral_bn.check("projector bn 1", mid)?;
        self.fpn.check("projector 3x3", mid, mid, 3, 1)?;
        self.fpn_bn.check("projector bn 2", mid)?;
        if self.blocks.len() != spec.num_blocks() {
            return Err(EncoderError::Shape {
                what: "residual block count".into(),
                expected: vec![spec.num_blocks()],
                actual: vec![self.blocks.len()],
            });
        }
        for (i, (b, &d)) in self.blocks.iter().zip(&spec.dilations).enumerate() {
            b.reduce.check(&format!("block {i} reduce"), blk, mid, 1, 1)?;
            b.reduce_bn.check(&format!("block {i} reduce bn"), blk)?;
            b.dilated.check(&format!("block {i} dilated"), blk, blk, 3, d)?;
            b.dilated_bn.check(&format!("block {i} dilated bn"), blk)?;
            b.expand.check(&format!("block {i} expand"), mid, blk, 1, 1)?;
            b.expand_bn.check(&format!("block {i} expand bn"), mid)?;
        }
        debug_assert_eq!(self.lateral_bn.channels(), mid);
        Ok(())
    }
}

/// Runs the encoder on a `C x H x W` map, returning `mid_channels x H x W`.
pub fn forward(spec: &EncoderSpec, input: &Array3<f64>, weights: &WeightSet) -> Result<Array3<f64>, EncoderError> {
    forward_with(spec, input, weights, Execution::default())
}

pub fn forward_with(
    spec: &EncoderSpec,
    input: &Array3<f64>,
    weights: &WeightSet,
    exec: Execution,
) -> Result<Array3<f64>, EncoderError> {
    spec.validate()?;
    weights.check(spec)?;
    let (c, h, w) = input.dim();
    if c != spec.in_channels || h == 0 || w == 0 {
        return Err(EncoderError::Shape {
            what: "input (C, H, W)".into(),
            expected: vec![spec.in_channels, h.max(1), w.max(1)],
            actual: vec![c, h, w],
        });
    }

    let mut x = weights.lateral.apply(input, exec);
    weights.lateral_bn.apply(&mut x);
    let mut x2 = weights.fpn.apply(&x, exec);
    weights.fpn_bn.apply(&mut x2);
    let mut x = x2;

    for block in &weights.blocks {
        let mut y = block.reduce.apply(&x, exec);
        block.reduce_bn.apply(&mut y);
        relu(&mut y);
        let mut y = block.dilated.apply(&y, exec);
        block.dilated_bn.apply(&mut y);
        relu(&mut y);
        let mut y = block.expand.apply(&y, exec);
        block.expand_bn.apply(&mut y);
        relu(&mut y);
        if spec.shortcuts {
            y += &x;
        }
        x = y;
    }
    Ok(x)
}

/// Bounding rectangle `(row0, col0, rows, cols)` of the positions where any
/// channel is nonzero.
pub fn nonzero_bounds(map: &Array3<f64>) -> Option<(usize, usize, usize, usize)> {
    let (_, h, w) = map.dim();
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..h {
        for x in 0..w {
            if map.slice(s![.., y, x]).iter().any(|v| *v != 0.0) {
                r0 = r0.min(y);
                r1 = r1.max(y);
                c0 = c0.min(x);
                c1 = c1.max(x);
            }
        }
    }
    (r0 != usize::MAX).then(|| (r0, c0, r1 - r0 + 1, c1 - c0 + 1))
}

/// Unit impulse at `(row, col)` on every input channel.
pub fn impulse(channels: usize, h: usize, w: usize, row: usize, col: usize) -> Array3<f64> {
    let mut x = Array3::zeros((channels, h, w));
    for c in 0..channels {
        x[[c, row, col]] = 1.0;
    }
    x
}

/// Side of the impulse-response footprint of an encoder with the given
/// dilations and shortcut setting, measured with a numeric forward pass on a
/// `grid x grid` map. Channel widths are reduced to 4 since the footprint
/// does not depend on them. Fails when the footprint is not square or
/// touches the border.
pub fn measured_extent(spec: &EncoderSpec, grid: usize, exec: Execution) -> Result<usize, EncoderError> {
    let probe = EncoderSpec {
        in_channels: 4,
        mid_channels: 4,
        dilations: spec.dilations.clone(),
        shortcuts: spec.shortcuts,
    };
    let centre = grid / 2;
    let out = forward_with(&probe, &impulse(4, grid, grid, centre, centre), &WeightSet::constant(&probe, 0.1), exec)?;
    let bad = |actual: Vec<usize>| EncoderError::Shape {
        what: "impulse footprint".into(),
        expected: vec![grid],
        actual,
    };
    let (r0, c0, rows, cols) = nonzero_bounds(&out).ok_or_else(|| bad(vec![0, 0]))?;
    if rows != cols || r0 == 0 || c0 == 0 || r0 + rows >= grid || c0 + cols >= grid {
        return Err(bad(vec![r0, c0, rows, cols]));
    }
    Ok(rows)
}
