//! Positive-anchor balance across object scales.
//!
//! Ground truths are bucketed by box area into small / medium / large and
//! the positives each one received are aggregated per bucket. Aggregation is
//! a sum of integer counts, so partial results merge associatively and the
//! outcome does not depend on scene order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::{GroundTruthSet, MatchResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BalanceError {
    #[error("scene {scene}: match result does not fit its {gts} ground truths")]
    Inconsistent { scene: usize, gts: usize },
    #[error("invalid size buckets: need 0 < small_max_area < medium_max_area")]
    InvalidBuckets,
    #[error("every size bucket is empty")]
    AllBucketsEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 3] = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            SizeBucket::Small => "small",
            SizeBucket::Medium => "medium",
            SizeBucket::Large => "large",
        }
    }
}

/// Area cutoffs: small below `small_max_area`, large at or above
/// `medium_max_area`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizeBuckets {
    pub small_max_area: f64,
    pub medium_max_area: f64,
}

impl Default for SizeBuckets {
    fn default() -> Self {
        Self {
            small_max_area: 32.0 * 32.0,
            medium_max_area: 96.0 * 96.0,
        }
    }
}

impl SizeBuckets {
    pub fn validate(&self) -> Result<(), BalanceError> {
        if 0.0 < self.small_max_area && self.small_max_area < self.medium_max_area {
            Ok(())
        } else {
            Err(BalanceError::InvalidBuckets)
        }
    }

    pub fn classify(&self, area: f64) -> SizeBucket {
        if area < self.small_max_area {
            SizeBucket::Small
        } else if area < self.medium_max_area {
            SizeBucket::Medium
        } else {
            SizeBucket::Large
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BucketStats {
    pub gt_count: usize,
    pub positives_total: usize,
    pub positives_mean: f64,
    pub zero_fraction: f64,
    /// Mean candidate count per GT, when the matcher reports candidates.
    pub candidates_mean: Option<f64>,
}

/// Per-GT record kept alongside the bucket summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub bucket: SizeBucket,
    pub area: f64,
    pub positives: usize,
    pub candidates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDistribution {
    pub matcher: String,
    pub small: BucketStats,
    pub medium: BucketStats,
    pub large: BucketStats,
    /// Raw per-GT counts in scene order, then GT order.
    pub per_gt: Vec<GtRecord>,
}

impl MatchDistribution {
    pub fn bucket(&self, b: SizeBucket) -> &BucketStats {
        match b {
            SizeBucket::Small => &self.small,
            SizeBucket::Medium => &self.medium,
            SizeBucket::Large => &self.large,
        }
    }

    pub fn total_gts(&self) -> usize {
        SizeBucket::ALL.iter().map(|&b| self.bucket(b).gt_count).sum()
    }

    pub fn total_positives(&self) -> usize {
        SizeBucket::ALL.iter().map(|&b| self.bucket(b).positives_total).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    gts: usize,
    positives: usize,
    zero: usize,
    candidates: usize,
    with_candidates: usize,
}

impl Tally {
    fn stats(&self) -> BucketStats {
        let n = self.gts as f64;
        let ratio = |v: usize| if self.gts == 0 { 0.0 } else { v as f64 / n };
        BucketStats {
            gt_count: self.gts,
            positives_total: self.positives,
            positives_mean: ratio(self.positives),
            zero_fraction: ratio(self.zero),
            candidates_mean: (self.with_candidates > 0 && self.with_candidates == self.gts)
                .then(|| self.candidates as f64 / n),
        }
    }
}

/// Mergeable partial aggregate, one per scene or per worker.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistributionAccumulator {
    tallies: [Tally; 3],
    per_gt: Vec<GtRecord>,
}

impl DistributionAccumulator {
    pub fn add_scene(
        &mut self,
        scene: usize,
        gts: &GroundTruthSet,
        result: &MatchResult,
        buckets: &SizeBuckets,
    ) -> Result<(), BalanceError> {
        if !result.is_consistent_with(gts.len()) {
            return Err(BalanceError::Inconsistent { scene, gts: gts.len() });
        }
        for (g, gt) in gts.boxes().iter().enumerate() {
            let area = gt.area();
            let bucket = buckets.classify(area);
            let positives = result.positives[g].len();
            let candidates = result.candidates.as_ref().map(|c| c[g].len());
            let t = &mut self.tallies[bucket as usize];
            t.gts += 1;
            t.positives += positives;
            t.zero += usize::from(positives == 0);
            if let Some(c) = candidates {
                t.candidates += c;
                t.with_candidates += 1;
            }
            self.per_gt.push(GtRecord {
                bucket,
                area,
                positives,
                candidates,
            });
        }
        Ok(())
    }

    /// Appends `other`; per-GT records keep `self` first.
    pub fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.tallies.iter_mut().zip(other.tallies) {
            a.gts += b.gts;
            a.positives += b.positives;
            a.zero += b.zero;
            a.candidates += b.candidates;
            a.with_candidates += b.with_candidates;
        }
        self.per_gt.extend(other.per_gt);
        self
    }

    pub fn finish(self, matcher: impl Into<String>) -> MatchDistribution {
        let [s, m, l] = self.tallies;
        MatchDistribution {
            matcher: matcher.into(),
            small: s.stats(),
            medium: m.stats(),
            large: l.stats(),
            per_gt: self.per_gt,
        }
    }
}

pub fn distribution(
    results: &[(GroundTruthSet, MatchResult)],
    buckets: &SizeBuckets,
    matcher: &str,
) -> Result<MatchDistribution, BalanceError> {
    buckets.validate()?;
    let mut acc = DistributionAccumulator::default();
    for (scene, (gts, result)) in results.iter().enumerate() {
        acc.add_scene(scene, gts, result, buckets)?;
    }
    Ok(acc.finish(matcher))
}

/// Max over min of the non-empty buckets' mean positives per GT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Imbalance {
    Bounded(f64),
    /// Some non-empty bucket has no positives at all.
    Unbounded,
}

impl Imbalance {
    pub fn as_f64(self) -> f64 {
        match self {
            Imbalance::Bounded(v) => v,
            Imbalance::Unbounded => f64::INFINITY,
        }
    }
}

impl Serialize for Imbalance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Imbalance::Bounded(v) => s.serialize_f64(*v),
            Imbalance::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

pub fn imbalance_ratio(dist: &MatchDistribution) -> Result<Imbalance, BalanceError> {
    let means: Vec<f64> = SizeBucket::ALL
        .iter()
        .map(|&b| dist.bucket(b))
        .filter(|s| s.gt_count > 0)
        .map(|s| s.positives_mean)
        .collect();
    if means.is_empty() {
        return Err(BalanceError::AllBucketsEmpty);
    }
    let max = means.iter().copied().fold(f64::MIN, f64::max);
    let min = means.iter().copied().fold(f64::MAX, f64::min);
    if min == 0.0 {
        return Ok(Imbalance::Unbounded);
    }
    Ok(Imbalance::Bounded(max / min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxXYXY;
    use crate::matching::Label;

    fn square(x: f64, side: f64) -> BoxXYXY {
        BoxXYXY::new(x, 0.0, x + side, side).unwrap()
    }

    /// Result giving GT g the listed number of positives on disjoint anchors.
    fn fake_result(counts: &[usize]) -> MatchResult {
        let mut labels = Vec::new();
        let mut positives = Vec::new();
        for (g, &c) in counts.iter().enumerate() {
            let start = labels.len();
            labels.extend(std::iter::repeat_n(Label::Positive(g), c));
            positives.push((start..start + c).collect());
        }
        labels.push(Label::Negative);
        MatchResult {
            labels,
            positives,
            candidates: None,
        }
    }

    fn dist_with_means(means: [f64; 3]) -> MatchDistribution {
        let mk = |m: f64| BucketStats {
            gt_count: 10,
            positives_total: (m * 10.0) as usize,
            positives_mean: m,
            ..BucketStats::default()
        };
        MatchDistribution {
            matcher: "test".into(),
            small: mk(means[0]),
            medium: mk(means[1]),
            large: mk(means[2]),
            per_gt: vec![],
        }
    }

    #[test]
    fn uniform_counts_are_balanced() {
        // areas 100, 5041, 20164
        let gts = GroundTruthSet::from_boxes(vec![square(0., 10.), square(0., 71.), square(0., 142.)]).unwrap();
        let d = distribution(&[(gts, fake_result(&[4, 4, 4]))], &SizeBuckets::default(), "u").unwrap();
        for b in SizeBucket::ALL {
            assert_eq!(d.bucket(b).gt_count, 1);
            assert_eq!(d.bucket(b).positives_mean, 4.0);
        }
        assert_eq!(imbalance_ratio(&d).unwrap(), Imbalance::Bounded(1.0));
        assert_eq!(d.total_positives(), 12);
    }

    #[test]
    fn imbalance_examples() {
        assert_eq!(imbalance_ratio(&dist_with_means([4., 4., 4.])).unwrap(), Imbalance::Bounded(1.0));
        assert_eq!(imbalance_ratio(&dist_with_means([0.2, 1.0, 4.0])).unwrap(), Imbalance::Bounded(20.0));
        assert_eq!(imbalance_ratio(&dist_with_means([0., 1., 2.])).unwrap(), Imbalance::Unbounded);
        let mut empty = dist_with_means([0., 0., 0.]);
        for b in [&mut empty.small, &mut empty.medium, &mut empty.large] {
            b.gt_count = 0;
        }
        assert_eq!(imbalance_ratio(&empty), Err(BalanceError::AllBucketsEmpty));
    }

    #[test]
    fn empty_buckets_are_skipped() {
        let mut d = dist_with_means([0.0, 2.0, 3.0]);
        d.small.gt_count = 0;
        assert_eq!(imbalance_ratio(&d).unwrap(), Imbalance::Bounded(1.5));
    }

    #[test]
    fn rejects_inconsistent_pairs() {
        let gts = GroundTruthSet::from_boxes(vec![square(0., 10.)]).unwrap();
        let r = fake_result(&[1, 1]);
        assert_eq!(
            distribution(&[(gts, r)], &SizeBuckets::default(), "x"),
            Err(BalanceError::Inconsistent { scene: 0, gts: 1 })
        );
        let bad = SizeBuckets {
            small_max_area: 10.0,
            medium_max_area: 5.0,
        };
        assert_eq!(distribution(&[], &bad, "x"), Err(BalanceError::InvalidBuckets));
    }

    #[test]
    fn bucket_edges() {
        let b = SizeBuckets::default();
        assert_eq!(b.classify(1023.9), SizeBucket::Small);
        assert_eq!(b.classify(1024.0), SizeBucket::Medium);
        assert_eq!(b.classify(9216.0), SizeBucket::Large);
    }

    #[test]
    fn merge_matches_single_pass() {
        let b = SizeBuckets::default();
        let scenes: Vec<_> = (0..4)
            .map(|i| {
                let gts = GroundTruthSet::from_boxes(vec![square(0., 10. + 40. * i as f64), square(50., 20.)]).unwrap();
                (gts, fake_result(&[i, 2 * i]))
            })
            .collect();
        let whole = distribution(&scenes, &b, "m").unwrap();
        let mut left = DistributionAccumulator::default();
        let mut right = DistributionAccumulator::default();
        for (i, (g, r)) in scenes.iter().enumerate() {
            let acc = if i < 2 { &mut left } else { &mut right };
            acc.add_scene(i, g, r, &b).unwrap();
        }
        assert_eq!(left.merge(right).finish("m"), whole);
    }
}
