//! Label assignment between anchors and ground-truth boxes.
//!
//! Every matcher takes a flat anchor list (usually `AnchorGrid::anchors`)
//! and returns a [`MatchResult`] tagging each anchor as positive for one
//! ground truth, negative, or ignored. Nearness is always the Euclidean
//! distance between box centers, ties broken by the smaller anchor index.

pub mod assignment;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BoxXYXY};
use assignment::{AssignmentError, CostMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("k = {k} exceeds the number of anchors ({anchors})")]
    KTooLarge { k: usize, anchors: usize },
    #[error("{gts} ground-truth boxes cannot be matched one-to-one to {anchors} anchors")]
    TooManyGroundTruths { gts: usize, anchors: usize },
    #[error("anchor set is empty")]
    NoAnchors,
    #[error("invalid matcher config: {0}")]
    InvalidConfig(String),
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(String),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
}

/// Ground-truth boxes of one image with their class ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthSet {
    boxes: Vec<BoxXYXY>,
    class_ids: Vec<u32>,
}

impl GroundTruthSet {
    pub fn new(boxes: Vec<BoxXYXY>, class_ids: Vec<u32>) -> Result<Self, MatchError> {
        if boxes.len() != class_ids.len() {
            return Err(MatchError::InvalidGroundTruth(format!(
                "{} boxes but {} class ids",
                boxes.len(),
                class_ids.len()
            )));
        }
        if let Some(i) = boxes.iter().position(|b| !(b.area() > 0.0)) {
            return Err(MatchError::InvalidGroundTruth(format!("box {i} has zero area")));
        }
        Ok(Self { boxes, class_ids })
    }

    /// All boxes tagged with class 0.
    pub fn from_boxes(boxes: Vec<BoxXYXY>) -> Result<Self, MatchError> {
        let n = boxes.len();
        Self::new(boxes, vec![0; n])
    }

    pub fn boxes(&self) -> &[BoxXYXY] {
        &self.boxes
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "tag", content = "gt", rename_all = "snake_case")]
pub enum Label {
    Positive(usize),
    Negative,
    Ignored,
}

/// Per-anchor labels plus per-GT positive lists.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub labels: Vec<Label>,
    /// Positive anchor indices of each GT, ascending.
    pub positives: Vec<Vec<usize>>,
    /// Candidate anchors of each GT before conflict resolution and IoU
    /// filtering, for the top-k style matchers; `None` otherwise.
    pub candidates: Option<Vec<Vec<usize>>>,
}

impl MatchResult {
    fn from_labels(labels: Vec<Label>, num_gts: usize, candidates: Option<Vec<Vec<usize>>>) -> Self {
        let mut positives = vec![Vec::new(); num_gts];
        for (a, label) in labels.iter().enumerate() {
            if let Label::Positive(g) = *label {
                positives[g].push(a);
            }
        }
        Self {
            labels,
            positives,
            candidates,
        }
    }

    pub fn num_gts(&self) -> usize {
        self.positives.len()
    }

    pub fn num_positives(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, Label::Positive(_)))
            .count()
    }

    pub fn num_ignored(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Ignored).count()
    }

    /// Positive anchors as sorted `(anchor, gt)` pairs.
    pub fn positive_pairs(&self) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(a, l)| match l {
                Label::Positive(g) => Some((a, *g)),
                _ => None,
            })
            .collect()
    }

    /// Checks that the per-GT lists agree with the labels.
    pub fn is_consistent_with(&self, num_gts: usize) -> bool {
        if self.positives.len() != num_gts {
            return false;
        }
        if let Some(c) = &self.candidates {
            if c.len() != num_gts {
                return false;
            }
        }
        let mut expected = vec![Vec::new(); num_gts];
        for (a, label) in self.labels.iter().enumerate() {
            if let Label::Positive(g) = *label {
                if g >= num_gts {
                    return false;
                }
                expected[g].push(a);
            }
        }
        expected == self.positives
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniformMatchConfig {
    pub k: usize,
    /// Candidates with IoU below this become ignored.
    pub pos_ignore_iou: f64,
    /// Non-candidates with IoU above this become ignored.
    pub neg_ignore_iou: f64,
}

impl Default for UniformMatchConfig {
    fn default() -> Self {
        Self {
            k: 4,
            pos_ignore_iou: 0.15,
            neg_ignore_iou: 0.7,
        }
    }
}

impl UniformMatchConfig {
    /// Settings for the stride-16 DC5 feature.
    pub fn dc5() -> Self {
        Self {
            k: 8,
            pos_ignore_iou: 0.1,
            neg_ignore_iou: 0.7,
        }
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        if self.k == 0 {
            return Err(MatchError::InvalidConfig("k must be at least 1".into()));
        }
        if !(0.0 <= self.pos_ignore_iou && self.pos_ignore_iou < self.neg_ignore_iou && self.neg_ignore_iou <= 1.0) {
            return Err(MatchError::InvalidConfig(format!(
                "need 0 <= pos_ignore_iou ({}) < neg_ignore_iou ({}) <= 1",
                self.pos_ignore_iou, self.neg_ignore_iou
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxIoUConfig {
    pub pos_iou: f64,
    pub neg_iou: f64,
    /// Force each GT's best-overlapping anchor positive.
    pub low_quality_rescue: bool,
}

impl Default for MaxIoUConfig {
    fn default() -> Self {
        Self {
            pos_iou: 0.5,
            neg_iou: 0.4,
            low_quality_rescue: true,
        }
    }
}

impl MaxIoUConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if !(0.0 <= self.neg_iou && self.neg_iou <= self.pos_iou && self.pos_iou <= 1.0) {
            return Err(MatchError::InvalidConfig(format!(
                "need 0 <= neg_iou ({}) <= pos_iou ({}) <= 1",
                self.neg_iou, self.pos_iou
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ATSSConfig {
    pub k: usize,
}

impl Default for ATSSConfig {
    fn default() -> Self {
        Self { k: 15 }
    }
}

#[inline]
fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

fn centers(anchors: &[BoxXYXY]) -> Vec<(f64, f64)> {
    anchors.iter().map(BoxXYXY::center).collect()
}

/// Indices of the `k` anchor centers nearest to `point`, nearest first
/// (ties: smaller index first), with their squared distances.
pub fn nearest_anchors(centers: &[(f64, f64)], point: (f64, f64), k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = centers
        .iter()
        .enumerate()
        .map(|(i, &c)| (i, dist2(c, point)))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    all
}

/// Takes the `k` anchors nearest to each GT center as positives. A candidate
/// claimed by several GTs goes to the closest one (ties: smaller GT index);
/// a kept candidate whose IoU with its GT is below `pos_ignore_iou` is
/// ignored, as is any non-candidate whose best IoU exceeds `neg_ignore_iou`.
pub fn uniform_match(
    anchors: &[BoxXYXY],
    gts: &GroundTruthSet,
    cfg: &UniformMatchConfig,
) -> Result<MatchResult, MatchError> {
    cfg.validate()?;
    if anchors.is_empty() {
        return Err(MatchError::NoAnchors);
    }
    if cfg.k > anchors.len() {
        return Err(MatchError::KTooLarge {
            k: cfg.k,
            anchors: anchors.len(),
        });
    }
    if gts.is_empty() {
        return Ok(MatchResult::from_labels(
            vec![Label::Negative; anchors.len()],
            0,
            Some(Vec::new()),
        ));
    }

    let centers = centers(anchors);
    // (squared distance, gt) of the closest GT claiming each anchor.
    let mut owner: Vec<Option<(f64, usize)>> = vec![None; anchors.len()];
    let mut candidates = Vec::with_capacity(gts.len());
    for (g, gt) in gts.boxes().iter().enumerate() {
        let near = nearest_anchors(&centers, gt.center(), cfg.k);
        for &(a, d) in &near {
            match owner[a] {
                Some((best, _)) if best <= d => {}
                _ => owner[a] = Some((d, g)),
            }
        }
        candidates.push(near.into_iter().map(|(a, _)| a).collect::<Vec<_>>());
    }

    let labels = anchors
        .iter()
        .zip(&owner)
        .map(|(anchor, own)| match own {
            Some((_, g)) => {
                if iou(anchor, &gts.boxes()[*g]) < cfg.pos_ignore_iou {
                    Label::Ignored
                } else {
                    Label::Positive(*g)
                }
            }
            None => {
                let max_iou = gts.boxes().iter().map(|gt| iou(anchor, gt)).fold(0.0, f64::max);
                if max_iou > cfg.neg_ignore_iou {
                    Label::Ignored
                } else {
                    Label::Negative
                }
            }
        })
        .collect();
    Ok(MatchResult::from_labels(labels, gts.len(), Some(candidates)))
}

/// Pure k-nearest assignment: [`uniform_match`] with both IoU filters off.
pub fn topk_match(anchors: &[BoxXYXY], gts: &GroundTruthSet, k: usize) -> Result<MatchResult, MatchError> {
    uniform_match(
        anchors,
        gts,
        &UniformMatchConfig {
            k,
            pos_ignore_iou: 0.0,
            neg_ignore_iou: 1.0,
        },
    )
}

/// Threshold matching on each anchor's best IoU: positive at `>= pos_iou`,
/// negative below `neg_iou`, ignored in between.
pub fn max_iou_match(
    anchors: &[BoxXYXY],
    gts: &GroundTruthSet,
    cfg: &MaxIoUConfig,
) -> Result<MatchResult, MatchError> {
    cfg.validate()?;
    if anchors.is_empty() {
        return Err(MatchError::NoAnchors);
    }
    let mut labels = Vec::with_capacity(anchors.len());
    // Best (iou, anchor) per GT for the rescue pass.
    let mut best_for_gt: Vec<(f64, usize)> = vec![(0.0, usize::MAX); gts.len()];
    for (a, anchor) in anchors.iter().enumerate() {
        let mut best = (0.0f64, usize::MAX);
        for (g, gt) in gts.boxes().iter().enumerate() {
            let v = iou(anchor, gt);
            if best.1 == usize::MAX || v > best.0 {
                best = (v, g);
            }
            if v > best_for_gt[g].0 {
                best_for_gt[g] = (v, a);
            }
        }
        labels.push(if best.1 == usize::MAX || best.0 < cfg.neg_iou {
            Label::Negative
        } else if best.0 >= cfg.pos_iou {
            Label::Positive(best.1)
        } else {
            Label::Ignored
        });
    }

    if cfg.low_quality_rescue {
        // Highest IoU wins an anchor claimed by several GTs; ties go to the
        // smaller GT index (GTs are visited in order and need a strict gain).
        let mut claims: Vec<Option<(f64, usize)>> = vec![None; anchors.len()];
        for (g, &(v, a)) in best_for_gt.iter().enumerate() {
            if a == usize::MAX {
                continue;
            }
            match claims[a] {
                Some((cur, _)) if cur >= v => {}
                _ => claims[a] = Some((v, g)),
            }
        }
        for (a, claim) in claims.into_iter().enumerate() {
            if let Some((_, g)) = claim {
                labels[a] = Label::Positive(g);
            }
        }
    }
    Ok(MatchResult::from_labels(labels, gts.len(), None))
}

/// Single-level adaptive selection: the `k` nearest anchors of a GT are
/// positive when their IoU reaches `mean + std` of the candidates' IoUs and
/// their center lies inside the GT. Conflicts go to the higher IoU (ties:
/// smaller GT index). Nothing is ignored.
pub fn atss_match(anchors: &[BoxXYXY], gts: &GroundTruthSet, cfg: &ATSSConfig) -> Result<MatchResult, MatchError> {
    if cfg.k == 0 {
        return Err(MatchError::InvalidConfig("k must be at least 1".into()));
    }
    if anchors.is_empty() {
        return Err(MatchError::NoAnchors);
    }
    if cfg.k > anchors.len() {
        return Err(MatchError::KTooLarge {
            k: cfg.k,
            anchors: anchors.len(),
        });
    }
    let centers = centers(anchors);
    let mut claims: Vec<Option<(f64, usize)>> = vec![None; anchors.len()];
    let mut candidates = Vec::with_capacity(gts.len());
    for (g, gt) in gts.boxes().iter().enumerate() {
        let near = nearest_anchors(&centers, gt.center(), cfg.k);
        let ious: Vec<f64> = near.iter().map(|&(a, _)| iou(&anchors[a], gt)).collect();
        let n = ious.len() as f64;
        let mean = ious.iter().sum::<f64>() / n;
        let var = ious.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let threshold = mean + var.sqrt();
        for (&(a, _), &v) in near.iter().zip(&ious) {
            let (cx, cy) = centers[a];
            if v >= threshold && gt.contains_strict(cx, cy) {
                match claims[a] {
                    Some((cur, _)) if cur >= v => {}
                    _ => claims[a] = Some((v, g)),
                }
            }
        }
        candidates.push(near.into_iter().map(|(a, _)| a).collect());
    }
    let labels = claims
        .into_iter()
        .map(|c| c.map_or(Label::Negative, |(_, g)| Label::Positive(g)))
        .collect();
    Ok(MatchResult::from_labels(labels, gts.len(), Some(candidates)))
}

/// Cost of pairing a GT with an anchor in [`hungarian_match`]: center
/// distance minus IoU scaled by the stride.
pub fn hungarian_cost(gt: &BoxXYXY, anchor: &BoxXYXY, stride: f64) -> f64 {
    dist2(gt.center(), anchor.center()).sqrt() - iou(gt, anchor) * stride
}

pub fn hungarian_cost_matrix(anchors: &[BoxXYXY], gts: &GroundTruthSet, stride: f64) -> Result<CostMatrix, MatchError> {
    let data = gts
        .boxes()
        .iter()
        .flat_map(|gt| anchors.iter().map(move |a| hungarian_cost(gt, a, stride)))
        .collect();
    Ok(CostMatrix::from_vec(gts.len(), anchors.len(), data)?)
}

/// One-to-one minimum-cost matching of GTs to anchors under
/// [`hungarian_cost`]; matched anchors are positive, the rest negative.
pub fn hungarian_match(anchors: &[BoxXYXY], stride: f64, gts: &GroundTruthSet) -> Result<MatchResult, MatchError> {
    if anchors.is_empty() {
        return Err(MatchError::NoAnchors);
    }
    if gts.len() > anchors.len() {
        return Err(MatchError::TooManyGroundTruths {
            gts: gts.len(),
            anchors: anchors.len(),
        });
    }
    let cost = hungarian_cost_matrix(anchors, gts, stride)?;
    let solution = assignment::solve(&cost)?;
    let mut labels = vec![Label::Negative; anchors.len()];
    for (g, &a) in solution.row_to_col.iter().enumerate() {
        labels[a] = Label::Positive(g);
    }
    let candidates = solution.row_to_col.iter().map(|&a| vec![a]).collect();
    Ok(MatchResult::from_labels(labels, gts.len(), Some(candidates)))
}

/// Matcher selection with parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatcherConfig {
    Uniform(UniformMatchConfig),
    MaxIou(MaxIoUConfig),
    Atss(ATSSConfig),
    Hungarian,
    Topk { k: usize },
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig::Uniform(UniformMatchConfig::default())
    }
}

impl MatcherConfig {
    pub fn name(&self) -> String {
        match self {
            MatcherConfig::Uniform(c) => format!("uniform(k={})", c.k),
            MatcherConfig::MaxIou(c) if c.low_quality_rescue => "max_iou".to_string(),
            MatcherConfig::MaxIou(_) => "max_iou(no_rescue)".to_string(),
            MatcherConfig::Atss(c) => format!("atss(k={})", c.k),
            MatcherConfig::Hungarian => "hungarian".to_string(),
            MatcherConfig::Topk { k } => format!("top{k}"),
        }
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        match self {
            MatcherConfig::Uniform(c) => c.validate(),
            MatcherConfig::MaxIou(c) => c.validate(),
            MatcherConfig::Atss(c) if c.k == 0 => Err(MatchError::InvalidConfig("k must be at least 1".into())),
            MatcherConfig::Topk { k: 0 } => Err(MatchError::InvalidConfig("k must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// The `k` every GT's candidate list should have, for the top-k family.
    pub fn candidate_k(&self) -> Option<usize> {
        match self {
            MatcherConfig::Uniform(c) => Some(c.k),
            MatcherConfig::Topk { k } => Some(*k),
            MatcherConfig::Atss(c) => Some(c.k),
            _ => None,
        }
    }

    pub fn run(&self, anchors: &[BoxXYXY], stride: f64, gts: &GroundTruthSet) -> Result<MatchResult, MatchError> {
        match self {
            MatcherConfig::Uniform(c) => uniform_match(anchors, gts, c),
            MatcherConfig::MaxIou(c) => max_iou_match(anchors, gts, c),
            MatcherConfig::Atss(c) => atss_match(anchors, gts, c),
            MatcherConfig::Hungarian => hungarian_match(anchors, stride, gts),
            MatcherConfig::Topk { k } => topk_match(anchors, gts, *k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_anchors, AnchorConfig, ImageSize};

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxXYXY {
        BoxXYXY::new(x1, y1, x2, y2).unwrap()
    }

    fn grid64() -> Vec<BoxXYXY> {
        generate_anchors(&AnchorConfig::default(), ImageSize::new(64, 64).unwrap())
            .unwrap()
            .anchors
    }

    #[test]
    fn uniform_small_gt_on_tiny_grid() {
        let anchors = grid64();
        let gts = GroundTruthSet::from_boxes(vec![b(8., 8., 24., 24.)]).unwrap();
        let r = uniform_match(&anchors, &gts, &UniformMatchConfig::default()).unwrap();
        assert_eq!(r.candidates.as_ref().unwrap()[0], vec![0, 1, 2, 3]);
        assert_eq!(r.labels[0], Label::Positive(0));
        assert_eq!(&r.labels[1..4], &[Label::Ignored; 3]);
        assert!(r.labels[4..].iter().all(|l| *l == Label::Negative));
        assert_eq!(r.positives, vec![vec![0]]);
        assert!(r.is_consistent_with(1));
    }

    #[test]
    fn uniform_empty_gts() {
        let anchors = grid64();
        let r = uniform_match(&anchors, &GroundTruthSet::default(), &UniformMatchConfig::default()).unwrap();
        assert!(r.labels.iter().all(|l| *l == Label::Negative));
    }

    #[test]
    fn uniform_conflict_goes_to_first_identical_gt() {
        let cfg = AnchorConfig {
            sizes: vec![32.0],
            ..AnchorConfig::default()
        };
        let anchors = generate_anchors(&cfg, ImageSize::new(64, 64).unwrap()).unwrap().anchors;
        let gt = b(4., 4., 30., 30.);
        let gts = GroundTruthSet::from_boxes(vec![gt, gt]).unwrap();
        let c = UniformMatchConfig {
            k: 1,
            ..UniformMatchConfig::default()
        };
        let r = uniform_match(&anchors, &gts, &c).unwrap();
        assert_eq!(r.candidates.as_ref().unwrap(), &vec![vec![0], vec![0]]);
        assert_eq!(r.labels[0], Label::Positive(0));
        assert_eq!(r.positives, vec![vec![0], vec![]]);
    }

    #[test]
    fn uniform_rejects_large_k_and_bad_thresholds() {
        let anchors = grid64();
        let gts = GroundTruthSet::from_boxes(vec![b(8., 8., 24., 24.)]).unwrap();
        let c = UniformMatchConfig {
            k: 21,
            ..UniformMatchConfig::default()
        };
        assert_eq!(
            uniform_match(&anchors, &gts, &c),
            Err(MatchError::KTooLarge { k: 21, anchors: 20 })
        );
        let c = UniformMatchConfig {
            pos_ignore_iou: 0.8,
            ..UniformMatchConfig::default()
        };
        assert!(matches!(uniform_match(&anchors, &gts, &c), Err(MatchError::InvalidConfig(_))));
        assert_eq!(
            uniform_match(&[], &gts, &UniformMatchConfig::default()),
            Err(MatchError::NoAnchors)
        );
    }

    #[test]
    fn topk_exhaustive() {
        let anchors = grid64();
        let gts = GroundTruthSet::from_boxes(vec![b(8., 8., 24., 24.)]).unwrap();
        let r = topk_match(&anchors, &gts, anchors.len()).unwrap();
        assert_eq!(r.num_positives(), anchors.len());
        let r = topk_match(&anchors, &gts, 1).unwrap();
        assert_eq!(r.positive_pairs(), vec![(0, 0)]);
    }

    #[test]
    fn max_iou_identity_and_small_gt() {
        let a = [b(0., 0., 32., 32.)];
        let gts = GroundTruthSet::from_boxes(vec![b(0., 0., 32., 32.)]).unwrap();
        let r = max_iou_match(&a, &gts, &MaxIoUConfig::default()).unwrap();
        assert_eq!(r.labels, vec![Label::Positive(0)]);

        let anchors = grid64();
        let gts = GroundTruthSet::from_boxes(vec![b(8., 8., 24., 24.)]).unwrap();
        let no_rescue = MaxIoUConfig {
            low_quality_rescue: false,
            ..MaxIoUConfig::default()
        };
        let r = max_iou_match(&anchors, &gts, &no_rescue).unwrap();
        assert_eq!(r.num_positives(), 0);
        assert_eq!(r.num_ignored(), 0);
        let r = max_iou_match(&anchors, &gts, &MaxIoUConfig::default()).unwrap();
        assert_eq!(r.positive_pairs(), vec![(0, 0)]);
    }

    #[test]
    fn max_iou_ignore_band() {
        // IoU 0.45 sits between the thresholds.
        let a = [b(0., 0., 100., 45.)];
        let gts = GroundTruthSet::from_boxes(vec![b(0., 0., 100., 100.)]).unwrap();
        let cfg = MaxIoUConfig {
            low_quality_rescue: false,
            ..MaxIoUConfig::default()
        };
        assert_eq!(max_iou_match(&a, &gts, &cfg).unwrap().labels, vec![Label::Ignored]);
        assert!(MaxIoUConfig {
            pos_iou: 0.3,
            neg_iou: 0.4,
            low_quality_rescue: true
        }
        .validate()
        .is_err());
    }

    #[test]
    fn atss_degenerate_single_anchor() {
        let a = [b(0., 0., 32., 32.)];
        let gts = GroundTruthSet::from_boxes(vec![b(4., 4., 40., 40.)]).unwrap();
        let r = atss_match(&a, &gts, &ATSSConfig { k: 1 }).unwrap();
        assert_eq!(r.labels, vec![Label::Positive(0)]);
    }

    #[test]
    fn atss_two_candidates_hand_threshold() {
        // IoUs 0.5 and 0.1 with the GT: mean 0.3, std 0.2, threshold 0.5.
        let gt = b(0., 0., 10., 10.);
        let a = [b(0., 0., 10., 5.), b(0., 0., 10., 1.)];
        assert_eq!(iou(&a[0], &gt), 0.5);
        assert_eq!(iou(&a[1], &gt), 0.1);
        let gts = GroundTruthSet::from_boxes(vec![gt]).unwrap();
        let r = atss_match(&a, &gts, &ATSSConfig { k: 2 }).unwrap();
        assert_eq!(r.labels, vec![Label::Positive(0), Label::Negative]);
    }

    #[test]
    fn atss_empty_and_errors() {
        let anchors = grid64();
        let r = atss_match(&anchors, &GroundTruthSet::default(), &ATSSConfig::default()).unwrap();
        assert!(r.labels.iter().all(|l| *l == Label::Negative));
        let gts = GroundTruthSet::from_boxes(vec![b(8., 8., 24., 24.)]).unwrap();
        assert!(matches!(
            atss_match(&anchors, &gts, &ATSSConfig { k: 21 }),
            Err(MatchError::KTooLarge { .. })
        ));
    }

    #[test]
    fn hungarian_exact_anchor() {
        let anchors = grid64();
        let gts = GroundTruthSet::from_boxes(vec![anchors[13]]).unwrap();
        let r = hungarian_match(&anchors, 32.0, &gts).unwrap();
        assert_eq!(r.positive_pairs(), vec![(13, 0)]);
        let many = GroundTruthSet::from_boxes(vec![b(0., 0., 5., 5.); 3]).unwrap();
        assert!(matches!(
            hungarian_match(&anchors[..2], 32.0, &many),
            Err(MatchError::TooManyGroundTruths { .. })
        ));
    }

    #[test]
    fn ground_truth_validation() {
        assert!(GroundTruthSet::new(vec![b(0., 0., 1., 1.)], vec![]).is_err());
        assert!(GroundTruthSet::from_boxes(vec![b(0., 0., 0., 1.)]).is_err());
    }

    #[test]
    fn matcher_config_round_trips_through_toml() {
        #[derive(Serialize, Deserialize)]
        struct Wrap {
            matcher: MatcherConfig,
        }
        for m in [
            MatcherConfig::default(),
            MatcherConfig::MaxIou(MaxIoUConfig::default()),
            MatcherConfig::Atss(ATSSConfig::default()),
            MatcherConfig::Hungarian,
            MatcherConfig::Topk { k: 1 },
        ] {
            let text = toml::to_string(&Wrap { matcher: m.clone() }).unwrap();
            let back: Wrap = toml::from_str(&text).unwrap();
            assert_eq!(back.matcher, m);
        }
    }
}
