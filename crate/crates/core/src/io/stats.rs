//! Corpus-level matching statistics.

use serde::Serialize;

use super::{AnnotationCorpus, DataError, RunConfig};
use crate::balance::{imbalance_ratio, DistributionAccumulator, Imbalance, MatchDistribution, SizeBucket};
use crate::geometry::{generate_anchors, random_shift};
use crate::matching::{GroundTruthSet, MatchResult};
use crate::parallel::{self, Execution};

pub const CSV_HEADER: [&str; 6] = ["matcher", "bucket", "gt_count", "positives_total", "positives_mean", "zero_fraction"];

/// Golden-ratio increment used to decorrelate per-image shift seeds.
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageDetail {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    pub num_anchors: usize,
    /// Annotation ids that took part in matching, in GT order.
    pub annotation_ids: Vec<u64>,
    /// Applied shift `(dx, dy)`, when shifting is enabled.
    pub shift: Option<(i32, i32)>,
    /// Annotations that left the image under the shift.
    pub dropped_by_shift: usize,
    pub positives: Vec<usize>,
    pub candidates: Option<Vec<usize>>,
    pub ignored_anchors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchStatsReport {
    pub matcher: String,
    pub seed: u64,
    pub num_images: usize,
    pub num_gts: usize,
    /// Every GT received the same number of candidates (`k` for the top-k
    /// family). False when the matcher has no candidate notion.
    pub candidates_per_gt_uniform: bool,
    pub imbalance: Option<Imbalance>,
    /// Set when every bucket is empty and no ratio can be formed.
    pub imbalance_undefined: bool,
    pub distribution: MatchDistribution,
    pub images: Vec<ImageDetail>,
}

/// Seed of the shift drawn for one image.
pub fn image_seed(seed: u64, image_id: u64) -> u64 {
    seed.wrapping_add(image_id.wrapping_mul(SEED_STRIDE))
}

struct ImageRun {
    detail: ImageDetail,
    gts: GroundTruthSet,
    result: MatchResult,
}

fn run_image(corpus: &AnnotationCorpus, idx: usize, cfg: &RunConfig) -> Result<ImageRun, DataError> {
    let image = &corpus.images[idx];
    let fail = |message: String| DataError::Matching {
        image_id: image.id,
        message,
    };
    let grid = generate_anchors(&cfg.anchors, image.size).map_err(|e| fail(e.to_string()))?;
    let anns = corpus.annotations_of(image.id);
    let gts = corpus.ground_truths(image.id);

    let (gts, kept, shift) = if cfg.shift.enabled {
        let seed = image_seed(cfg.seed, image.id);
        let out = random_shift(gts.boxes(), image.size, cfg.shift.max_shift, seed);
        let classes = out.kept.iter().map(|&i| gts.class_ids()[i]).collect();
        let shifted = GroundTruthSet::new(out.boxes, classes).map_err(|e| fail(e.to_string()))?;
        (shifted, out.kept, Some(out.offset))
    } else {
        let all = (0..gts.len()).collect();
        (gts, all, None)
    };

    let result = cfg
        .matcher
        .run(&grid.anchors, cfg.anchors.stride as f64, &gts)
        .map_err(|e| fail(e.to_string()))?;

    let detail = ImageDetail {
        image_id: image.id,
        width: image.size.width,
        height: image.size.height,
        num_anchors: grid.len(),
        annotation_ids: kept.iter().map(|&i| anns[i].id).collect(),
        shift,
        dropped_by_shift: anns.len() - kept.len(),
        positives: result.positives.iter().map(Vec::len).collect(),
        candidates: result.candidates.as_ref().map(|c| c.iter().map(Vec::len).collect()),
        ignored_anchors: result.num_ignored(),
    };
    Ok(ImageRun { detail, gts, result })
}

/// Anchors, optional shift and matching for every image, aggregated into
/// per-bucket statistics. Images are processed independently and reported
/// in id order, so the output depends only on the corpus and `cfg`.
pub fn run_match_stats(
    corpus: &AnnotationCorpus,
    cfg: &RunConfig,
    exec: Execution,
) -> Result<MatchStatsReport, DataError> {
    cfg.validate()?;
    let runs = parallel::try_map(exec, &corpus.images, |i, _| run_image(corpus, i, cfg))?;

    let mut acc = DistributionAccumulator::default();
    let mut images = Vec::with_capacity(runs.len());
    for (scene, run) in runs.into_iter().enumerate() {
        acc.add_scene(scene, &run.gts, &run.result, &cfg.buckets)
            .map_err(|e| DataError::Matching {
                image_id: run.detail.image_id,
                message: e.to_string(),
            })?;
        images.push(run.detail);
    }
    let matcher = cfg.matcher.name();
    let distribution = acc.finish(matcher.clone());

    let expected_k = cfg.matcher.candidate_k();
    let counts: Option<Vec<usize>> = images
        .iter()
        .map(|d| d.candidates.clone())
        .collect::<Option<Vec<_>>>()
        .map(|v| v.concat());
    let candidates_per_gt_uniform = match counts {
        Some(c) => match expected_k {
            Some(k) => c.iter().all(|&n| n == k),
            None => c.windows(2).all(|w| w[0] == w[1]),
        },
        None => false,
    };
    let imbalance = imbalance_ratio(&distribution).ok();

    Ok(MatchStatsReport {
        matcher,
        seed: cfg.seed,
        num_images: images.len(),
        num_gts: distribution.total_gts(),
        candidates_per_gt_uniform,
        imbalance_undefined: imbalance.is_none(),
        imbalance,
        distribution,
        images,
    })
}

impl MatchStatsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per bucket.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for b in SizeBucket::ALL {
            let s = self.distribution.bucket(b);
            w.write_record([
                self.matcher.clone(),
                b.as_str().to_string(),
                s.gt_count.to_string(),
                s.positives_total.to_string(),
                s.positives_mean.to_string(),
                s.zero_fraction.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}
