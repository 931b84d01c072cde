//! Ingestion, run configuration and report emission.

mod config;
mod corpus;
mod stats;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{BoxXYXY, GeometryError};
use crate::postprocess::Detection;

pub use config::{FlopsSettings, NmsSettings, RunConfig, ShiftSettings};
pub use corpus::{load_corpus, parse_corpus, AnnotationCorpus, AnnotationRecord, Category, ImageRecord};
pub use stats::{image_seed, run_match_stats, ImageDetail, MatchStatsReport, CSV_HEADER};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("annotation {annotation_id} refers to missing image {image_id}")]
    MissingImage { annotation_id: u64, image_id: u64 },
    #[error("image {image_id}: {source}")]
    Image {
        image_id: u64,
        #[source]
        source: GeometryError,
    },
    #[error("annotation {annotation_id}: {source}")]
    Annotation {
        annotation_id: u64,
        #[source]
        source: GeometryError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image {image_id}: {message}")]
    Matching { image_id: u64, message: String },
    #[error("detection {index}: {message}")]
    Detection { index: usize, message: String },
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let err = |source| DataError::Write {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.flush().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

/// Parses a JSON array of `{bbox: [x1, y1, x2, y2], score, category_id}`.
pub fn parse_detections(text: &str, origin: &str) -> Result<Vec<Detection>, DataError> {
    #[derive(serde::Deserialize)]
    struct Raw {
        bbox: [f64; 4],
        score: f64,
        category_id: u32,
    }
    let raw: Vec<Raw> = serde_json::from_str(text).map_err(|e| DataError::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    raw.into_iter()
        .enumerate()
        .map(|(index, r)| {
            let bbox = BoxXYXY::try_from(r.bbox).map_err(|e| DataError::Detection {
                index,
                message: e.to_string(),
            })?;
            Detection::new(bbox, r.score, r.category_id).map_err(|e| DataError::Detection {
                index,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_detections(&text, &path.display().to_string())
}
