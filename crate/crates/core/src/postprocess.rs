//! Score filtering and class-wise greedy non-maximum suppression.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BoxXYXY};
use crate::parallel::{self, Execution};

pub const DEFAULT_NMS_IOU: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("detection score {0} is not in [0, 1]")]
    InvalidScore(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoxXYXY,
    pub score: f64,
    #[serde(rename = "category_id")]
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: BoxXYXY, score: f64, class_id: u32) -> Result<Self, DetectionError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(DetectionError::InvalidScore(score));
        }
        Ok(Self { bbox, score, class_id })
    }
}

/// Descending score, then ascending input index.
fn rank(dets: &[Detection], a: usize, b: usize) -> Ordering {
    dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b))
}

/// Greedy NMS within each class. A detection survives when its IoU with
/// every higher-ranked surviving detection of the same class is at most
/// `iou_threshold`. Returns surviving input indices in rank order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    nms_with(dets, iou_threshold, Execution::default())
}

pub fn nms_with(dets: &[Detection], iou_threshold: f64, exec: Execution) -> Vec<usize> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        by_class.entry(d.class_id).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = by_class.into_values().collect();
    let kept_per_class = parallel::map(exec, &groups, |_, idx| suppress(dets, idx, iou_threshold));
    let mut kept: Vec<usize> = kept_per_class.into_iter().flatten().collect();
    kept.sort_by(|&a, &b| rank(dets, a, b));
    kept
}

fn suppress(dets: &[Detection], indices: &[usize], iou_threshold: f64) -> Vec<usize> {
    let mut order = indices.to_vec();
    order.sort_by(|&a, &b| rank(dets, a, b));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou(&dets[k].bbox, &dets[i].bbox) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

/// Drops detections scoring below `min_score` and keeps at most `max_keep`
/// of the best remaining ones (ranked by score, then input index). Output
/// preserves input order.
pub fn score_filter(dets: &[Detection], min_score: f64, max_keep: usize) -> Vec<Detection> {
    let mut idx: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].score >= min_score).collect();
    if idx.len() > max_keep {
        idx.sort_by(|&a, &b| rank(dets, a, b));
        idx.truncate(max_keep);
        idx.sort_unstable();
    }
    idx.into_iter().map(|i| dets[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: [f64; 4], score: f64, class_id: u32) -> Detection {
        Detection::new(BoxXYXY::try_from(b).unwrap(), score, class_id).unwrap()
    }

    #[test]
    fn nms_examples() {
        assert!(nms(&[], 0.6).is_empty());
        let one = [det([0., 0., 1., 1.], 0.3, 0)];
        assert_eq!(nms(&one, 0.6), vec![0]);

        let a = det([0., 0., 10., 10.], 0.9, 0);
        let b = det([0., 0., 10., 9.], 0.8, 0);
        assert_eq!(nms(&[a, b], 0.6), vec![0]);
        assert_eq!(nms(&[b, a], 0.6), vec![1]);

        let b2 = Detection { class_id: 1, ..b };
        assert_eq!(nms(&[a, b2], 0.6), vec![0, 1]);
    }

    #[test]
    fn nms_threshold_is_inclusive() {
        // IoU exactly 0.5 survives a 0.5 threshold.
        let a = det([0., 0., 10., 10.], 0.9, 0);
        let b = det([0., 0., 10., 5.], 0.8, 0);
        assert_eq!(nms(&[a, b], 0.5), vec![0, 1]);
        assert_eq!(nms(&[a, b], 0.49), vec![0]);
    }

    #[test]
    fn equal_scores_rank_by_index() {
        let a = det([0., 0., 10., 10.], 0.5, 0);
        let b = det([1., 0., 11., 10.], 0.5, 0);
        assert_eq!(nms(&[a, b], 0.6), vec![0]);
        assert_eq!(nms(&[b, a], 0.6), vec![0]);
    }

    #[test]
    fn score_filter_examples() {
        let dets = [
            det([0., 0., 1., 1.], 0.9, 0),
            det([0., 0., 2., 2.], 0.5, 0),
            det([0., 0., 3., 3.], 0.1, 0),
        ];
        assert_eq!(score_filter(&dets, 0.0, 3), dets.to_vec());
        assert_eq!(score_filter(&dets, 0.3, 10), dets[..2].to_vec());
        let two = [det([0., 0., 1., 1.], 0.5, 0), det([0., 0., 2., 2.], 0.9, 0)];
        assert_eq!(score_filter(&two, 0.0, 1), vec![two[1]]);
        assert!(score_filter(&two, 0.0, 0).is_empty());
    }

    #[test]
    fn rejects_out_of_range_scores() {
        let b = BoxXYXY::try_from([0., 0., 1., 1.]).unwrap();
        assert!(Detection::new(b, 1.5, 0).is_err());
        assert!(Detection::new(b, f64::NAN, 0).is_err());
    }

    #[test]
    fn json_shape() {
        let d = det([1., 2., 3., 4.], 0.25, 7);
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(text, r#"{"bbox":[1.0,2.0,3.0,4.0],"score":0.25,"category_id":7}"#);
        let back: Detection = serde_json::from_str(&text).unwrap();
        assert_eq!(back, d);
    }
}
