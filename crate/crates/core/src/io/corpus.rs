//! COCO-format annotation corpora.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::geometry::{BoxXYXY, ImageSize};
use crate::matching::GroundTruthSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    width: i64,
    height: i64,
    #[serde(default)]
    file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    bbox: [f64; 4],
    category_id: u32,
    #[serde(default, skip_deserializing)]
    area: f64,
    #[serde(default, skip_deserializing)]
    iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub supercategory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u64,
    pub size: ImageSize,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    /// Corner form used everywhere downstream.
    pub bbox: BoxXYXY,
    /// The `[x, y, w, h]` the box was read from, kept for lossless output.
    pub bbox_xywh: [f64; 4],
    pub category_id: u32,
}

impl AnnotationRecord {
    pub fn new(id: u64, image_id: u64, bbox: BoxXYXY, category_id: u32) -> Self {
        Self {
            id,
            image_id,
            bbox,
            bbox_xywh: bbox.to_xywh(),
            category_id,
        }
    }
}

/// Images sorted by id, annotations by `(image_id, id)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationCorpus {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<AnnotationRecord>,
    pub categories: Vec<Category>,
    /// Annotations dropped at load time for non-positive width or height.
    pub dropped: usize,
}

impl AnnotationCorpus {
    pub fn from_parts(
        mut images: Vec<ImageRecord>,
        mut annotations: Vec<AnnotationRecord>,
        mut categories: Vec<Category>,
    ) -> Result<Self, DataError> {
        images.sort_by_key(|i| i.id);
        annotations.sort_by_key(|a| (a.image_id, a.id));
        categories.sort_by_key(|c| c.id);
        let ids: BTreeSet<u64> = images.iter().map(|i| i.id).collect();
        if let Some(a) = annotations.iter().find(|a| !ids.contains(&a.image_id)) {
            return Err(DataError::MissingImage {
                annotation_id: a.id,
                image_id: a.image_id,
            });
        }
        Ok(Self {
            images,
            annotations,
            categories,
            dropped: 0,
        })
    }

    pub fn num_annotations(&self) -> usize {
        self.annotations.len()
    }

    /// Annotations of one image, in id order.
    pub fn annotations_of(&self, image_id: u64) -> &[AnnotationRecord] {
        let start = self.annotations.partition_point(|a| a.image_id < image_id);
        let end = self.annotations.partition_point(|a| a.image_id <= image_id);
        &self.annotations[start..end]
    }

    pub fn ground_truths(&self, image_id: u64) -> GroundTruthSet {
        let anns = self.annotations_of(image_id);
        GroundTruthSet::new(
            anns.iter().map(|a| a.bbox).collect(),
            anns.iter().map(|a| a.category_id).collect(),
        )
        .expect("loaded annotations have positive area")
    }

    pub fn to_json(&self) -> String {
        let file = CocoFile {
            images: self
                .images
                .iter()
                .map(|i| CocoImage {
                    id: i.id,
                    width: i.size.width as i64,
                    height: i.size.height as i64,
                    file_name: i.file_name.clone(),
                })
                .collect(),
            annotations: self
                .annotations
                .iter()
                .map(|a| CocoAnnotation {
                    id: a.id,
                    image_id: a.image_id,
                    bbox: a.bbox_xywh,
                    category_id: a.category_id,
                    area: a.bbox_xywh[2] * a.bbox_xywh[3],
                    iscrowd: 0,
                })
                .collect(),
            categories: self.categories.clone(),
        };
        serde_json::to_string_pretty(&file).expect("corpus serializes")
    }
}

pub fn parse_corpus(text: &str, origin: &str) -> Result<AnnotationCorpus, DataError> {
    let file: CocoFile = serde_json::from_str(text).map_err(|e| DataError::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut images = Vec::with_capacity(file.images.len());
    for img in file.images {
        let size = ImageSize::new(img.width, img.height).map_err(|source| DataError::Image {
            image_id: img.id,
            source,
        })?;
        images.push(ImageRecord {
            id: img.id,
            size,
            file_name: img.file_name,
        });
    }

    let mut dropped = 0usize;
    let mut annotations = Vec::with_capacity(file.annotations.len());
    for ann in file.annotations {
        let [x, y, w, h] = ann.bbox;
        if !(w > 0.0 && h > 0.0) {
            dropped += 1;
            continue;
        }
        let bbox = BoxXYXY::from_xywh(x, y, w, h).map_err(|source| DataError::Annotation {
            annotation_id: ann.id,
            source,
        })?;
        if !(bbox.area() > 0.0) {
            dropped += 1;
            continue;
        }
        annotations.push(AnnotationRecord {
            id: ann.id,
            image_id: ann.image_id,
            bbox,
            bbox_xywh: ann.bbox,
            category_id: ann.category_id,
        });
    }
    if dropped > 0 {
        log::warn!("{origin}: dropped {dropped} annotation(s) with non-positive width or height");
    }
    let mut corpus = AnnotationCorpus::from_parts(images, annotations, file.categories)?;
    corpus.dropped = dropped;
    Ok(corpus)
}

pub fn load_corpus(path: &Path) -> Result<AnnotationCorpus, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text, &path.display().to_string())
}
