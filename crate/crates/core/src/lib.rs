//! Pedestrian head inference from body-pose skeletons, face/head box fusion,
//! center-distance tracking, region anonymization and two-label evaluation.
//!
//! Everything here operates on serialized detections; no neural network is
//! embedded. Pose and face detections arrive as interchange JSON (see
//! [`io`]) and flow through [`head`] → [`fusion`] → [`tracker`] →
//! {[`evaluator`] | [`anonymizer`]}, orchestrated by [`pipeline`].

pub mod anonymizer;
pub mod assignment;
pub mod detection;
pub mod error;
pub mod evaluator;
pub mod fusion;
pub mod geometry;
pub mod head;
pub mod io;
pub mod pipeline;
pub mod synth;
pub mod tracker;

pub use anonymizer::{anonymize_frame, AnonymizeConfig, AnonymizeMethod};
pub use assignment::{solve_assignment, CostMatrix};
pub use detection::{Detection, Source};
pub use error::{Error, Result};
pub use evaluator::{EvalConfig, EvalCounts, EvalReport, LabeledFrame};
pub use fusion::{fuse, FusionConfig, FusionStrategy};
pub use geometry::{BBox, Keypoint, Pose};
pub use head::{infer_head, HeadInferenceParams};
pub use tracker::{Tracker, TrackerConfig};
