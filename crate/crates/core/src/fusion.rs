//! Per-frame fusion of pose-derived head boxes with face-detector boxes.
//!
//! Fusion only selects boxes; it never creates or edits one. Output order is
//! heads first (input order), then faces (input order).

use serde::{Deserialize, Serialize};

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::geometry::containment_ratio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionStrategy {
    /// Every head and every face.
    KeepBoth,
    /// Drop faces covered by a head.
    KeepHead,
    /// Drop heads that contain a face.
    KeepFace,
    /// Within each head/contained-faces group keep the more confident side.
    ByConfidence,
}

impl std::str::FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "keep-both" | "both" => Ok(FusionStrategy::KeepBoth),
            "keep-head" | "head" => Ok(FusionStrategy::KeepHead),
            "keep-face" | "face" => Ok(FusionStrategy::KeepFace),
            "by-confidence" | "confidence" => Ok(FusionStrategy::ByConfidence),
            other => Err(Error::param("strategy", format!("unknown fusion strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
    /// Minimum fraction of a face box inside a head box for the face to count
    /// as within that head.
    pub gamma: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            strategy: FusionStrategy::ByConfidence,
            gamma: 0.9,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::param("gamma", format!("must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

fn face_head_ratio(face: &Detection, head: &Detection) -> Option<f64> {
    match containment_ratio(&face.bbox, &head.bbox) {
        Ok(r) => Some(r),
        Err(_) => {
            log::debug!("frame {}: zero-area face box ignored in fusion", face.frame);
            None
        }
    }
}

/// True when at least `gamma` of the face box lies inside the head box.
/// A zero-area face is never within anything.
pub fn face_within_head(face: &Detection, head: &Detection, gamma: f64) -> bool {
    face_head_ratio(face, head).is_some_and(|r| r >= gamma)
}

/// Fuses one frame of head and face detections.
pub fn fuse(heads: &[Detection], faces: &[Detection], cfg: &FusionConfig) -> Vec<Detection> {
    // group[f] = head owning face f: highest containment, then lowest index.
    let group: Vec<Option<usize>> = faces
        .iter()
        .map(|face| {
            let mut best: Option<(usize, f64)> = None;
            for (h, head) in heads.iter().enumerate() {
                let Some(r) = face_head_ratio(face, head) else { break };
                if r >= cfg.gamma && best.is_none_or(|(_, br)| r > br) {
                    best = Some((h, r));
                }
            }
            best.map(|(h, _)| h)
        })
        .collect();

    let any_within = |h: usize| faces.iter().any(|face| face_within_head(face, &heads[h], cfg.gamma));
    let face_covered = |f: usize| heads.iter().any(|head| face_within_head(&faces[f], head, cfg.gamma));

    let (keep_head, keep_face): (Vec<bool>, Vec<bool>) = match cfg.strategy {
        FusionStrategy::KeepBoth => (vec![true; heads.len()], vec![true; faces.len()]),
        FusionStrategy::KeepHead => (
            vec![true; heads.len()],
            (0..faces.len()).map(|f| !face_covered(f)).collect(),
        ),
        FusionStrategy::KeepFace => (
            (0..heads.len()).map(|h| !any_within(h)).collect(),
            vec![true; faces.len()],
        ),
        FusionStrategy::ByConfidence => {
            // A head survives when no face within it is more confident; a
            // face survives unless the head it is grouped with survives.
            let keep_head: Vec<bool> = heads
                .iter()
                .map(|head| {
                    faces
                        .iter()
                        .filter(|face| face_within_head(face, head, cfg.gamma))
                        .all(|face| head.confidence >= face.confidence)
                })
                .collect();
            let keep_face = group.iter().map(|g| g.is_none_or(|h| !keep_head[h])).collect();
            (keep_head, keep_face)
        }
    };

    heads
        .iter()
        .zip(keep_head)
        .filter(|(_, k)| *k)
        .map(|(d, _)| *d)
        .chain(faces.iter().zip(keep_face).filter(|(_, k)| *k).map(|(d, _)| *d))
        .collect()
}
