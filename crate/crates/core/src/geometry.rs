//! Boxes, overlap metrics, anchor grids and the coordinate transforms used
//! around matching (random shift of annotations, delta decoding with a
//! center clamp).

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest `dw`/`dh` accepted by [`decode_deltas`] before exponentiation.
pub const SIZE_DELTA_CLAMP: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Default bound on the center displacement of decoded boxes, in pixels.
pub const DEFAULT_CENTER_CLAMP: f64 = 32.0;

/// Default maximum random shift, in pixels.
pub const DEFAULT_MAX_SHIFT: u32 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box [{0}, {1}, {2}, {3}]: coordinates must be finite with x1 <= x2 and y1 <= y2")]
    InvalidBox(f64, f64, f64, f64),
    #[error("image dimensions must be positive, got {width}x{height}")]
    InvalidImageSize { width: i64, height: i64 },
    #[error("invalid anchor config: {0}")]
    InvalidAnchorConfig(String),
    #[error("expected {expected} deltas (one per anchor), got {actual}")]
    DeltaCountMismatch { expected: usize, actual: usize },
    #[error("center clamp must be positive, got {0}")]
    InvalidCenterClamp(f64),
}

/// Axis-aligned box in absolute pixel coordinates, origin at the top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoxXYXY {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxXYXY {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 > x2 || y1 > y2 {
            return Err(GeometryError::InvalidBox(x1, y1, x2, y2));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Converts a COCO-style `[x, y, w, h]` box.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(x, y, x + w, y + h)
    }

    /// Box of the given size centered at `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x1: cx - 0.5 * w,
            y1: cy - 0.5 * h,
            x2: cx + 0.5 * w,
            y2: cy + 0.5 * h,
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Clamps the box to `[0, width] x [0, height]`.
    pub fn clamp_to(&self, image: ImageSize) -> Self {
        let w = image.width as f64;
        let h = image.height as f64;
        Self {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        }
    }

    /// True when `(x, y)` lies strictly inside the box.
    pub fn contains_strict(&self, x: f64, y: f64) -> bool {
        x > self.x1 && x < self.x2 && y > self.y1 && y < self.y2
    }

    fn intersection_area(&self, other: &Self) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        iw * ih
    }

    fn hull(&self, other: &Self) -> Self {
        Self {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }
}

impl TryFrom<[f64; 4]> for BoxXYXY {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoxXYXY> for [f64; 4] {
    fn from(b: BoxXYXY) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Intersection over union. Two degenerate boxes (zero union) give 0.
pub fn iou(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: IoU minus the fraction of the enclosing hull not
/// covered by the union.
pub fn giou(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.hull(b).area();
    if hull <= 0.0 {
        return 0.0;
    }
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    iou - (hull - union) / hull
}

/// Image extent in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: i64, height: i64) -> Result<Self, GeometryError> {
        if width < 1 || height < 1 || width > u32::MAX as i64 || height > u32::MAX as i64 {
            return Err(GeometryError::InvalidImageSize { width, height });
        }
        Ok(Self {
            width: width as u32,
            height: height as u32,
        })
    }

    /// Spatial extent `(rows, cols)` of a feature map at `stride`.
    pub fn feature_shape(&self, stride: u32) -> (usize, usize) {
        (
            self.height.div_ceil(stride) as usize,
            self.width.div_ceil(stride) as usize,
        )
    }
}

impl std::str::FromStr for ImageSize {
    type Err = GeometryError;

    /// Parses `HEIGHTxWIDTH`, e.g. `800x1280`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GeometryError::InvalidImageSize {
            width: 0,
            height: 0,
        };
        let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let h: i64 = h.trim().parse().map_err(|_| bad())?;
        let w: i64 = w.trim().parse().map_err(|_| bad())?;
        Self::new(w, h)
    }
}

/// Anchor shapes paved at every position of one feature level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub stride: u32,
    pub sizes: Vec<f64>,
    pub scale_multipliers: Vec<f64>,
    /// Height over width.
    pub aspect_ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    /// Five square anchors on the stride-32 C5 grid.
    fn default() -> Self {
        Self {
            stride: 32,
            sizes: vec![32.0, 64.0, 128.0, 256.0, 512.0],
            scale_multipliers: vec![1.0],
            aspect_ratios: vec![1.0],
        }
    }
}

impl AnchorConfig {
    /// RetinaNet-style anchors for one pyramid level: one base size, three
    /// octave scales and three aspect ratios (9 per position).
    pub fn retinanet_level(stride: u32, size: f64) -> Self {
        Self {
            stride,
            sizes: vec![size],
            scale_multipliers: vec![1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)],
            aspect_ratios: vec![0.5, 1.0, 2.0],
        }
    }

    /// The five P3-P7 levels of a multi-level detector.
    pub fn retinanet_pyramid() -> Vec<Self> {
        [(8, 32.0), (16, 64.0), (32, 128.0), (64, 256.0), (128, 512.0)]
            .into_iter()
            .map(|(s, size)| Self::retinanet_level(s, size))
            .collect()
    }

    /// Single-level anchors on the stride-16 dilated C5, with the extra
    /// size-16 anchor.
    pub fn dc5() -> Self {
        Self {
            stride: 16,
            sizes: vec![16.0, 32.0, 64.0, 128.0, 256.0, 512.0],
            ..Self::default()
        }
    }

    pub fn anchors_per_position(&self) -> usize {
        self.sizes.len() * self.scale_multipliers.len() * self.aspect_ratios.len()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let err = |m: &str| Err(GeometryError::InvalidAnchorConfig(m.to_string()));
        if self.stride == 0 {
            return err("stride must be positive");
        }
        for (name, list) in [
            ("sizes", &self.sizes),
            ("scale_multipliers", &self.scale_multipliers),
            ("aspect_ratios", &self.aspect_ratios),
        ] {
            if list.is_empty() {
                return Err(GeometryError::InvalidAnchorConfig(format!(
                    "{name} must not be empty"
                )));
            }
            if list.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(GeometryError::InvalidAnchorConfig(format!(
                    "{name} must be positive and finite"
                )));
            }
        }
        Ok(())
    }

    /// `(width, height)` of every anchor at one position, in order.
    fn shapes(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.anchors_per_position());
        for &size in &self.sizes {
            for &mult in &self.scale_multipliers {
                for &ratio in &self.aspect_ratios {
                    let side = size * mult;
                    let r = ratio.sqrt();
                    out.push((side / r, side * r));
                }
            }
        }
        out
    }
}

/// Anchors paved over one feature level, row-major over positions and then
/// by anchor index within a position.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub config: AnchorConfig,
    pub grid_h: usize,
    pub grid_w: usize,
    pub anchors: Vec<BoxXYXY>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Grid cell `(row, col)` and in-cell index of a flat anchor index.
    pub fn position_of(&self, index: usize) -> (usize, usize, usize) {
        let per = self.config.anchors_per_position();
        let cell = index / per;
        (cell / self.grid_w, cell % self.grid_w, index % per)
    }
}

pub fn generate_anchors(config: &AnchorConfig, image: ImageSize) -> Result<AnchorGrid, GeometryError> {
    config.validate()?;
    if image.width == 0 || image.height == 0 {
        return Err(GeometryError::InvalidImageSize {
            width: image.width as i64,
            height: image.height as i64,
        });
    }
    let (grid_h, grid_w) = image.feature_shape(config.stride);
    let shapes = config.shapes();
    let stride = config.stride as f64;
    let mut anchors = Vec::with_capacity(grid_h * grid_w * shapes.len());
    for i in 0..grid_h {
        let cy = (i as f64 + 0.5) * stride;
        for j in 0..grid_w {
            let cx = (j as f64 + 0.5) * stride;
            anchors.extend(shapes.iter().map(|&(w, h)| BoxXYXY::from_center(cx, cy, w, h)));
        }
    }
    Ok(AnchorGrid {
        config: config.clone(),
        grid_h,
        grid_w,
        anchors,
    })
}

/// One grid per level, in the order given.
pub fn generate_multilevel_anchors(
    levels: &[AnchorConfig],
    image: ImageSize,
) -> Result<Vec<AnchorGrid>, GeometryError> {
    levels.iter().map(|c| generate_anchors(c, image)).collect()
}

/// Result of shifting a set of annotation boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOutcome {
    pub boxes: Vec<BoxXYXY>,
    /// Input index of every surviving box, parallel to `boxes`.
    pub kept: Vec<usize>,
    pub offset: (i32, i32),
}

/// Draws the shift offset for `rng_seed`: both components uniform over the
/// integers in `[-max_shift, max_shift]`, x first.
pub fn draw_shift(max_shift: u32, rng_seed: u64) -> (i32, i32) {
    if max_shift == 0 {
        return (0, 0);
    }
    let m = max_shift.min(i32::MAX as u32) as i32;
    let mut rng = Pcg32::seed_from_u64(rng_seed);
    let dx = rng.random_range(-m..=m);
    let dy = rng.random_range(-m..=m);
    (dx, dy)
}

/// Translates the image content by a random offset: every box moves by
/// `(dx, dy)`, is clamped to the image and dropped if nothing remains.
pub fn random_shift(boxes: &[BoxXYXY], image: ImageSize, max_shift: u32, rng_seed: u64) -> ShiftOutcome {
    let (dx, dy) = draw_shift(max_shift, rng_seed);
    apply_shift(boxes, image, dx, dy)
}

/// [`random_shift`] with a fixed offset.
pub fn apply_shift(boxes: &[BoxXYXY], image: ImageSize, dx: i32, dy: i32) -> ShiftOutcome {
    let mut out = Vec::with_capacity(boxes.len());
    let mut kept = Vec::with_capacity(boxes.len());
    for (idx, b) in boxes.iter().enumerate() {
        let moved = b.translate(dx as f64, dy as f64).clamp_to(image);
        if moved.area() > 0.0 {
            out.push(moved);
            kept.push(idx);
        }
    }
    ShiftOutcome {
        boxes: out,
        kept,
        offset: (dx, dy),
    }
}

/// Regression target relative to an anchor, center-size parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDelta {
    pub fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        Self { dx, dy, dw, dh }
    }
}

/// Applies per-anchor deltas. The center displacement `(dx * w, dy * h)` is
/// clamped to `±center_clamp` pixels on each axis; `dw`/`dh` are capped at
/// [`SIZE_DELTA_CLAMP`].
pub fn decode_deltas(
    anchors: &[BoxXYXY],
    deltas: &[BoxDelta],
    center_clamp: f64,
) -> Result<Vec<BoxXYXY>, GeometryError> {
    if anchors.len() != deltas.len() {
        return Err(GeometryError::DeltaCountMismatch {
            expected: anchors.len(),
            actual: deltas.len(),
        });
    }
    if !(center_clamp > 0.0) {
        return Err(GeometryError::InvalidCenterClamp(center_clamp));
    }
    Ok(anchors
        .iter()
        .zip(deltas)
        .map(|(a, d)| {
            let (w, h) = (a.width(), a.height());
            let (cx, cy) = a.center();
            let sx = (d.dx * w).clamp(-center_clamp, center_clamp);
            let sy = (d.dy * h).clamp(-center_clamp, center_clamp);
            let pw = w * d.dw.min(SIZE_DELTA_CLAMP).exp();
            let ph = h * d.dh.min(SIZE_DELTA_CLAMP).exp();
            BoxXYXY::from_center(cx + sx, cy + sy, pw, ph)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxXYXY {
        BoxXYXY::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 1., 1.), &b(5., 5., 6., 6.)), 0.0);
        assert_relative_eq!(iou(&b(0., 0., 2., 2.), &b(1., 0., 3., 2.)), 1.0 / 3.0);
        // both degenerate
        assert_eq!(iou(&b(1., 1., 1., 1.), &b(1., 1., 1., 1.)), 0.0);
    }

    #[test]
    fn giou_examples() {
        assert_eq!(giou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_relative_eq!(giou(&b(0., 0., 1., 1.), &b(2., 2., 3., 3.)), -7.0 / 9.0);
        assert_relative_eq!(giou(&b(0., 0., 2., 2.), &b(1., 0., 3., 2.)), 1.0 / 3.0);
    }

    #[test]
    fn rejects_bad_boxes() {
        assert!(BoxXYXY::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoxXYXY::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BoxXYXY::try_from([0.0, 0.0, 1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn default_grid_sizes() {
        let g = generate_anchors(&AnchorConfig::default(), ImageSize::new(1280, 800).unwrap()).unwrap();
        assert_eq!((g.grid_h, g.grid_w), (25, 40));
        assert_eq!(g.len(), 5000);

        let g = generate_anchors(&AnchorConfig::default(), ImageSize::new(64, 64).unwrap()).unwrap();
        assert_eq!((g.grid_h, g.grid_w), (2, 2));
        assert_eq!(g.len(), 20);
        assert_eq!(g.anchors[0].center(), (16.0, 16.0));
        assert_eq!(g.anchors[0], b(0., 0., 32., 32.));
        assert_eq!(g.anchors[4], b(-240., -240., 272., 272.));
        assert_eq!(g.position_of(7), (0, 1, 2));
    }

    #[test]
    fn single_anchor_grid() {
        let cfg = AnchorConfig {
            sizes: vec![32.0],
            ..AnchorConfig::default()
        };
        let g = generate_anchors(&cfg, ImageSize::new(32, 32).unwrap()).unwrap();
        assert_eq!(g.anchors, vec![b(0., 0., 32., 32.)]);
    }

    #[test]
    fn aspect_ratio_is_height_over_width() {
        let cfg = AnchorConfig {
            stride: 32,
            sizes: vec![32.0],
            scale_multipliers: vec![1.0],
            aspect_ratios: vec![4.0],
        };
        let g = generate_anchors(&cfg, ImageSize::new(32, 32).unwrap()).unwrap();
        assert_relative_eq!(g.anchors[0].width(), 16.0);
        assert_relative_eq!(g.anchors[0].height(), 64.0);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(ImageSize::new(0, 10).is_err());
        assert!(ImageSize::new(10, -1).is_err());
        let cfg = AnchorConfig {
            sizes: vec![],
            ..AnchorConfig::default()
        };
        assert!(generate_anchors(&cfg, ImageSize::new(10, 10).unwrap()).is_err());
        let cfg = AnchorConfig {
            aspect_ratios: vec![0.0],
            ..AnchorConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn image_size_parses_height_first() {
        let s: ImageSize = "800x1280".parse().unwrap();
        assert_eq!((s.height, s.width), (800, 1280));
        assert!("800".parse::<ImageSize>().is_err());
        assert!("0x5".parse::<ImageSize>().is_err());
    }

    #[test]
    fn shift_examples() {
        let img = ImageSize::new(100, 100).unwrap();
        let boxes = [b(0., 0., 10., 10.)];
        let out = random_shift(&boxes, img, 0, 99);
        assert_eq!(out.offset, (0, 0));
        assert_eq!(out.boxes, boxes);

        let out = apply_shift(&boxes, img, 5, 5);
        assert_eq!(out.boxes, vec![b(5., 5., 15., 15.)]);

        let out = apply_shift(&boxes, img, -20, 0);
        assert!(out.boxes.is_empty());
        assert!(out.kept.is_empty());
    }

    #[test]
    fn shift_is_seeded() {
        let a = draw_shift(32, 7);
        assert_eq!(a, draw_shift(32, 7));
        let draws: Vec<_> = (0..200).map(|s| draw_shift(32, s)).collect();
        assert!(draws.iter().all(|&(x, y)| x.abs() <= 32 && y.abs() <= 32));
        assert!(draws.iter().any(|&d| d != a));
    }

    #[test]
    fn decode_examples() {
        let anchor = [b(0., 0., 32., 32.)];
        let out = decode_deltas(&anchor, &[BoxDelta::default()], 32.0).unwrap();
        assert_eq!(out, anchor.to_vec());

        let out = decode_deltas(&anchor, &[BoxDelta::new(2.0, 0.0, 0.0, 0.0)], 32.0).unwrap();
        assert_eq!(out[0], b(32., 0., 64., 32.));

        let out = decode_deltas(&anchor, &[BoxDelta::new(0.0, 0.0, 2f64.ln(), 0.0)], 32.0).unwrap();
        assert_relative_eq!(out[0].x1, -16.0);
        assert_relative_eq!(out[0].x2, 48.0);
        assert_eq!((out[0].y1, out[0].y2), (0.0, 32.0));
    }

    #[test]
    fn decode_errors_and_size_clamp() {
        let anchor = [b(0., 0., 32., 32.)];
        assert!(matches!(
            decode_deltas(&anchor, &[], 32.0),
            Err(GeometryError::DeltaCountMismatch { .. })
        ));
        assert!(decode_deltas(&anchor, &[BoxDelta::default()], 0.0).is_err());
        let out = decode_deltas(&anchor, &[BoxDelta::new(0.0, 0.0, 100.0, 0.0)], 32.0).unwrap();
        assert_relative_eq!(out[0].width(), 32.0 * 1000.0 / 16.0, max_relative = 1e-12);
        assert_relative_eq!(SIZE_DELTA_CLAMP, (1000.0f64 / 16.0).ln());
    }
}
