use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

/// Which channel produced a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Face,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub source: Source,
    pub frame: u64,
    /// Set only on tracker output.
    pub track_id: Option<u64>,
}

impl Detection {
    pub fn new(bbox: BBox, confidence: f64, source: Source, frame: u64) -> Self {
        Detection {
            bbox,
            confidence,
            source,
            frame,
            track_id: None,
        }
    }

    pub fn face(bbox: BBox, confidence: f64, frame: u64) -> Self {
        Detection::new(bbox, confidence, Source::Face, frame)
    }

    pub fn head(bbox: BBox, confidence: f64, frame: u64) -> Self {
        Detection::new(bbox, confidence, Source::Head, frame)
    }
}
