//! Seeded synthetic scenes whose ground truths cover all three size buckets.
//! Used by the balance studies, the benches and the bundled fixture.

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

use crate::balance::{SizeBucket, SizeBuckets};
use crate::geometry::{BoxXYXY, ImageSize};
use crate::matching::GroundTruthSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub image: ImageSize,
    /// Boxes drawn per size bucket.
    pub per_bucket: usize,
    pub buckets: SizeBuckets,
    /// Smallest side of the smallest box area.
    pub min_side: f64,
    /// Side of the largest box area.
    pub max_side: f64,
    /// Aspect ratios are log-uniform in `[1 / max_aspect, max_aspect]`.
    pub max_aspect: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image: ImageSize {
                width: 1280,
                height: 800,
            },
            per_bucket: 2,
            buckets: SizeBuckets::default(),
            min_side: 8.0,
            max_side: 512.0,
            max_aspect: 2.0,
        }
    }
}

impl SceneSpec {
    fn area_range(&self, bucket: SizeBucket) -> (f64, f64) {
        match bucket {
            SizeBucket::Small => (self.min_side * self.min_side, self.buckets.small_max_area),
            SizeBucket::Medium => (self.buckets.small_max_area, self.buckets.medium_max_area),
            SizeBucket::Large => (self.buckets.medium_max_area, self.max_side * self.max_side),
        }
    }
}

fn log_uniform(rng: &mut Pcg32, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return lo;
    }
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Draws `per_bucket` boxes for each bucket (small first), each fully
/// inside the image. Class id is the bucket index.
pub fn random_scene(spec: &SceneSpec, seed: u64) -> GroundTruthSet {
    let mut rng = Pcg32::seed_from_u64(seed);
    let (iw, ih) = (spec.image.width as f64, spec.image.height as f64);
    let mut boxes = Vec::with_capacity(3 * spec.per_bucket);
    let mut classes = Vec::with_capacity(3 * spec.per_bucket);
    for bucket in SizeBucket::ALL {
        let (lo, hi) = spec.area_range(bucket);
        for _ in 0..spec.per_bucket {
            let area = log_uniform(&mut rng, lo, hi);
            let ratio = log_uniform(&mut rng, 1.0 / spec.max_aspect, spec.max_aspect);
            let w = (area / ratio).sqrt().min(iw);
            let h = (area / w).min(ih);
            let cx = rng.random_range(w / 2.0..=iw - w / 2.0);
            let cy = rng.random_range(h / 2.0..=ih - h / 2.0);
            let b = BoxXYXY::from_center(cx, cy, w, h).clamp_to(spec.image);
            boxes.push(b);
            classes.push(bucket as u32);
        }
    }
    GroundTruthSet::new(boxes, classes).expect("generated boxes have positive area")
}
