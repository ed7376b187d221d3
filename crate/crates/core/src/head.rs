//! Head box inference from a single body-pose skeleton.
//!
//! Two constructions are used, in order of preference:
//!
//! * **facial**: at least `min_facial` facial keypoints (nose, eyes, ears)
//!   are present. The box is centered on their unweighted mean.
//! * **shoulders**: no usable facial keypoints, but shoulders and hips are
//!   present. The box is centered horizontally on the shoulder midpoint and
//!   sits a neck length above it.
//!
//! In both cases the box is `r_w·torso` wide and `r_h·torso` tall, where
//! torso is the shoulder-midpoint to hip-midpoint distance. Boxes are not
//! clamped to the image here.

use serde::{Deserialize, Serialize};

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::geometry::{kp, BBox, Keypoint, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadInferenceParams {
    /// Head width as a fraction of torso length.
    pub r_w: f64,
    /// Head height as a fraction of torso length.
    pub r_h: f64,
    /// Neck length as a fraction of head height.
    pub r_n: f64,
    /// Minimum confidence for a keypoint to count as present.
    pub tau_kp: f64,
    /// Minimum number of present facial keypoints for the facial construction.
    pub min_facial: usize,
}

impl Default for HeadInferenceParams {
    fn default() -> Self {
        HeadInferenceParams {
            r_w: 0.50,
            r_h: 0.65,
            r_n: 0.25,
            tau_kp: 0.2,
            min_facial: 1,
        }
    }
}

impl HeadInferenceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r_w", self.r_w), ("r_h", self.r_h), ("r_n", self.r_n)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.tau_kp) {
            return Err(Error::param(
                "tau_kp",
                format!("must lie in [0, 1], got {}", self.tau_kp),
            ));
        }
        if !(1..=5).contains(&self.min_facial) {
            return Err(Error::param(
                "min_facial",
                format!("must lie in 1..=5, got {}", self.min_facial),
            ));
        }
        Ok(())
    }

    fn is_present(&self, k: &Keypoint) -> bool {
        k.is_present() && k.confidence >= self.tau_kp
    }
}

/// Which construction produced a head box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadCase {
    Facial,
    Shoulders,
}

/// Mean position of the present keypoints among `indices`, plus the keypoints used.
fn midpoint<'a>(
    pose: &'a Pose,
    indices: &[usize],
    params: &HeadInferenceParams,
) -> Option<((f64, f64), Vec<&'a Keypoint>)> {
    let used: Vec<&Keypoint> = indices
        .iter()
        .map(|&i| pose.get(i))
        .filter(|k| params.is_present(k))
        .collect();
    if used.is_empty() {
        return None;
    }
    let n = used.len() as f64;
    let x = used.iter().map(|k| k.x).sum::<f64>() / n;
    let y = used.iter().map(|k| k.y).sum::<f64>() / n;
    Some(((x, y), used))
}

/// Distance from the shoulder midpoint to the hip midpoint. A single present
/// shoulder (or hip) stands in for its midpoint.
pub fn torso_length(pose: &Pose, params: &HeadInferenceParams) -> Option<f64> {
    let ((sx, sy), _) = midpoint(pose, &kp::SHOULDERS, params)?;
    let ((hx, hy), _) = midpoint(pose, &kp::HIPS, params)?;
    Some((sx - hx).hypot(sy - hy))
}

/// Infers a head box and reports which construction was used.
pub fn infer_head_with_case(pose: &Pose, params: &HeadInferenceParams, frame: u64) -> Option<(Detection, HeadCase)> {
    let (shoulder_mid, shoulders) = midpoint(pose, &kp::SHOULDERS, params)?;
    let (hip_mid, hips) = midpoint(pose, &kp::HIPS, params)?;
    let torso = (shoulder_mid.0 - hip_mid.0).hypot(shoulder_mid.1 - hip_mid.1);
    let width = params.r_w * torso;
    let height = params.r_h * torso;

    let body = shoulders.iter().chain(hips.iter()).map(|k| k.confidence);
    let facial = midpoint(pose, &kp::FACIAL, params).filter(|(_, f)| f.len() >= params.min_facial);

    let (bbox, confidence, case) = match facial {
        Some(((cx, cy), face_kps)) => {
            let confs: Vec<f64> = face_kps.iter().map(|k| k.confidence).chain(body).collect();
            (BBox::from_center(cx, cy, width, height), mean(&confs), HeadCase::Facial)
        }
        None => {
            let neck = params.r_n * height;
            let bottom = shoulder_mid.1 - neck;
            let bbox = BBox::new(
                shoulder_mid.0 - width / 2.0,
                bottom - height,
                shoulder_mid.0 + width / 2.0,
                bottom,
            );
            let confs: Vec<f64> = body.collect();
            (bbox, mean(&confs), HeadCase::Shoulders)
        }
    };
    Some((Detection::head(bbox, confidence, frame), case))
}

/// Infers a head detection from one pose, or `None` when neither the facial
/// nor the shoulder construction applies.
pub fn infer_head(pose: &Pose, params: &HeadInferenceParams, frame: u64) -> Option<Detection> {
    infer_head_with_case(pose, params, frame).map(|(d, _)| d)
}

/// Runs [`infer_head`] over every pose of a frame.
pub fn infer_heads(poses: &[Pose], params: &HeadInferenceParams, frame: u64) -> Vec<Detection> {
    poses.iter().filter_map(|p| infer_head(p, params, frame)).collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
