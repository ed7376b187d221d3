//! Synthetic pedestrian scenes with known ground truth.
//!
//! Pedestrians are stick figures walking across the frame. Each one yields,
//! per frame, a head label, a face label when front-facing, a 17-keypoint
//! pose and, when the face detector model allows, a face detection. Body
//! proportions follow the head inference ratios, so a noise-free pose
//! reproduces the head label exactly.
//!
//! Pedestrians whose head is smaller than `label_min_head_px` are not
//! labeled (too far to be recognizable) but still produce poses, which is
//! what makes distant pose detections count as false positives.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::evaluator::{EvalCounts, FrameDetections, LabeledFrame};
use crate::geometry::{kp, BBox, Keypoint, Pose};
use crate::head::HeadInferenceParams;
use crate::io::PoseFile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaceDetectorModel {
    /// Faces of pedestrians whose head is smaller than this are never detected.
    pub drop_below_px: f64,
    /// Standard deviation of per-corner box jitter.
    pub jitter_px: f64,
    /// Probability of missing an otherwise detectable face.
    pub miss_prob: f64,
    pub confidence: (f64, f64),
}

impl Default for FaceDetectorModel {
    fn default() -> Self {
        FaceDetectorModel {
            drop_below_px: 40.0,
            jitter_px: 0.0,
            miss_prob: 0.0,
            confidence: (0.3, 0.9),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseModel {
    /// Standard deviation of keypoint position noise.
    pub keypoint_noise_px: f64,
    /// Probability that each facial keypoint is dropped on a back-facing pedestrian.
    pub back_facial_dropout: f64,
    /// Pedestrians with smaller heads get no pose.
    pub min_head_px: f64,
    pub confidence: (f64, f64),
}

impl Default for PoseModel {
    fn default() -> Self {
        PoseModel {
            keypoint_noise_px: 0.0,
            back_facial_dropout: 1.0,
            min_head_px: 0.0,
            confidence: (0.5, 0.95),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub pedestrians: usize,
    pub frames: usize,
    pub seed: u64,
    pub image_width: f64,
    pub image_height: f64,
    /// Head height range (pixels) at the first frame; the depth proxy.
    pub head_px_start: (f64, f64),
    /// Head height range at the last frame; heights interpolate linearly.
    pub head_px_end: (f64, f64),
    /// Horizontal walking speed range, pixels per frame.
    pub walk_speed: (f64, f64),
    /// Vertical bob amplitude as a fraction of head height.
    pub bob_amplitude: f64,
    /// Bob period in frames.
    pub bob_period: f64,
    pub front_facing_prob: f64,
    /// Heads smaller than this are left unlabeled.
    pub label_min_head_px: f64,
    pub face_detector: FaceDetectorModel,
    pub pose_model: PoseModel,
    /// Body proportions; defaults match the head inference defaults.
    pub body: HeadInferenceParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            pedestrians: 6,
            frames: 50,
            seed: 0,
            image_width: 1920.0,
            image_height: 1440.0,
            head_px_start: (20.0, 80.0),
            head_px_end: (20.0, 80.0),
            walk_speed: (1.0, 6.0),
            bob_amplitude: 0.0,
            bob_period: 16.0,
            front_facing_prob: 0.6,
            label_min_head_px: 0.0,
            face_detector: FaceDetectorModel::default(),
            pose_model: PoseModel::default(),
            body: HeadInferenceParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        for (name, r) in [
            ("head_px_start", self.head_px_start),
            ("head_px_end", self.head_px_end),
            ("walk_speed", self.walk_speed),
            ("face_detector.confidence", self.face_detector.confidence),
            ("pose_model.confidence", self.pose_model.confidence),
        ] {
            if !range_ok(r) {
                return Err(Error::param(name, "range must be finite with lo <= hi"));
            }
        }
        if self.head_px_start.0 <= 0.0 || self.head_px_end.0 <= 0.0 {
            return Err(Error::param("head_px", "head sizes must be > 0"));
        }
        for (name, (lo, hi)) in [
            ("face_detector.confidence", self.face_detector.confidence),
            ("pose_model.confidence", self.pose_model.confidence),
        ] {
            if lo < 0.0 || hi > 1.0 {
                return Err(Error::param(name, "confidences must lie in [0, 1]"));
            }
        }
        for (name, p) in [
            ("front_facing_prob", self.front_facing_prob),
            ("face_detector.miss_prob", self.face_detector.miss_prob),
            ("pose_model.back_facial_dropout", self.pose_model.back_facial_dropout),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(name, "probability must lie in [0, 1]"));
            }
        }
        if self.face_detector.jitter_px < 0.0 || self.pose_model.keypoint_noise_px < 0.0 {
            return Err(Error::param("noise", "noise must be >= 0"));
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(Error::param("image", "image dimensions must be > 0"));
        }
        if self.bob_period <= 0.0 {
            return Err(Error::param("bob_period", "must be > 0"));
        }
        self.body.validate()
    }
}

/// One pedestrian in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianState {
    pub id: usize,
    pub head: BBox,
    pub face: Option<BBox>,
    pub front_facing: bool,
    pub labeled: bool,
    pub face_detected: bool,
    pub pose_emitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTally {
    pub frame: u64,
    pub pedestrians: Vec<PedestrianState>,
}

/// Ground truth of what each channel can see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub frames: Vec<FrameTally>,
}

/// Which detection set an expected count refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    FaceOnly,
    PoseOnly,
    /// Fusion keeping one box per pedestrian (keep-head, keep-face, by-confidence).
    Fused,
    FusedKeepBoth,
}

impl Tally {
    fn states(&self) -> impl Iterator<Item = &PedestrianState> {
        self.frames.iter().flat_map(|f| f.pedestrians.iter())
    }

    pub fn labeled_front(&self) -> u64 {
        self.states().filter(|p| p.labeled && p.front_facing).count() as u64
    }

    pub fn labeled_back(&self) -> u64 {
        self.states().filter(|p| p.labeled && !p.front_facing).count() as u64
    }

    pub fn unlabeled(&self) -> u64 {
        self.states().filter(|p| !p.labeled).count() as u64
    }

    /// Counts an evaluation at default thresholds must produce on a
    /// noise-free scene whose heads never overlap.
    pub fn expected_counts(&self, channel: Channel) -> EvalCounts {
        let mut c = EvalCounts::default();
        for p in self.states() {
            let (face, pose) = match channel {
                Channel::FaceOnly => (p.face_detected, false),
                Channel::PoseOnly => (false, p.pose_emitted),
                Channel::Fused | Channel::FusedKeepBoth => (p.face_detected, p.pose_emitted),
            };
            let boxes = u64::from(face) + u64::from(pose);
            let emitted = match channel {
                Channel::FusedKeepBoth => boxes,
                _ => boxes.min(1),
            };
            if !p.labeled {
                c.fp_count += emitted;
                continue;
            }
            c.fp_count += emitted.saturating_sub(1);
            match (p.front_facing, emitted > 0) {
                (true, true) => c.both += 1,
                (true, false) => c.none_of_pair += 1,
                (false, true) => c.head_match += 1,
                (false, false) => c.head_none += 1,
            }
        }
        c
    }
}

/// Everything a scenario produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub labels: Vec<LabeledFrame>,
    pub poses: PoseFile,
    pub faces: FrameDetections,
    pub tally: Tally,
}

struct Walker {
    head_start: f64,
    head_end: f64,
    x0: f64,
    velocity: f64,
    y0: f64,
    phase: f64,
    front: bool,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Position on `[lo, hi]` after moving `dist` from `start`, bouncing at the ends.
fn reflect(start: f64, dist: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let p = (start - lo + dist).rem_euclid(2.0 * span);
    if p <= span {
        lo + p
    } else {
        lo + 2.0 * span - p
    }
}

pub fn generate(cfg: &ScenarioConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.image_width, cfg.image_height);
    let aspect = cfg.body.r_w / cfg.body.r_h;
    let max_head = cfg.head_px_start.1.max(cfg.head_px_end.1);

    // Heads sit in separate horizontal lanes of the upper part of the frame.
    let lanes = cfg.pedestrians.max(1) as f64;
    let lane_h = 0.6 * h / lanes;
    let walkers: Vec<Walker> = (0..cfg.pedestrians)
        .map(|i| {
            let speed = uniform(&mut rng, cfg.walk_speed);
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Walker {
                head_start: uniform(&mut rng, cfg.head_px_start),
                head_end: uniform(&mut rng, cfg.head_px_end),
                x0: rng.random_range(0.0..1.0),
                velocity: speed * dir,
                y0: 0.05 * h + lane_h * (i as f64 + 0.5),
                phase: rng.random_range(0.0..TAU),
                front: rng.random_bool(cfg.front_facing_prob),
            }
        })
        .collect();

    let kp_noise = Normal::new(0.0, cfg.pose_model.keypoint_noise_px.max(f64::MIN_POSITIVE)).expect("valid normal");
    let jitter = Normal::new(0.0, cfg.face_detector.jitter_px.max(f64::MIN_POSITIVE)).expect("valid normal");

    let mut labels = Vec::with_capacity(cfg.frames);
    let mut poses = PoseFile::new();
    let mut faces = FrameDetections::new();
    let mut tally = Tally { frames: Vec::new() };

    for t in 0..cfg.frames {
        let frame = t as u64;
        let progress = if cfg.frames > 1 {
            t as f64 / (cfg.frames - 1) as f64
        } else {
            0.0
        };
        let mut frame_faces = Vec::new();
        let mut frame_heads = Vec::new();
        let mut links = Vec::new();
        let mut frame_poses = Vec::new();
        let mut frame_dets = Vec::new();
        let mut states = Vec::new();

        for (id, wk) in walkers.iter().enumerate() {
            let head_h = wk.head_start + (wk.head_end - wk.head_start) * progress;
            let head_w = head_h * aspect;
            let margin = max_head;
            let cx = reflect(
                margin + wk.x0 * (w - 2.0 * margin),
                wk.velocity * t as f64,
                margin,
                w - margin,
            );
            let cy = wk.y0 + cfg.bob_amplitude * head_h * (TAU * t as f64 / cfg.bob_period + wk.phase).sin();
            let head = BBox::from_center(cx, cy, head_w, head_h);
            if head.x_min < 0.0 || head.y_min < 0.0 || head.x_max > w || head.y_max > h {
                continue;
            }
            let face = wk
                .front
                .then(|| BBox::from_center(cx, cy + 0.1 * head_h, 0.6 * head_w, 0.7 * head_h));
            let labeled = head.max_dim() >= cfg.label_min_head_px;
            if labeled {
                if let Some(f) = face {
                    links.push((frame_faces.len(), frame_heads.len()));
                    frame_faces.push(f);
                }
                frame_heads.push(head);
            }

            let pose_emitted = head.max_dim() >= cfg.pose_model.min_head_px;
            if pose_emitted {
                frame_poses.push(stick_figure(&mut rng, cfg, &kp_noise, cx, cy, head_w, head_h, wk.front));
            }

            let mut face_detected = false;
            if let Some(f) = face {
                if head.max_dim() >= cfg.face_detector.drop_below_px && !rng.random_bool(cfg.face_detector.miss_prob) {
                    let bbox = if cfg.face_detector.jitter_px > 0.0 {
                        let xs = [f.x_min + jitter.sample(&mut rng), f.x_max + jitter.sample(&mut rng)];
                        let ys = [f.y_min + jitter.sample(&mut rng), f.y_max + jitter.sample(&mut rng)];
                        BBox::new(xs[0].min(xs[1]), ys[0].min(ys[1]), xs[0].max(xs[1]), ys[0].max(ys[1]))
                    } else {
                        f
                    };
                    let conf = uniform(&mut rng, cfg.face_detector.confidence);
                    frame_dets.push(Detection::face(bbox, conf, frame));
                    face_detected = true;
                }
            }

            states.push(PedestrianState {
                id,
                head,
                face,
                front_facing: wk.front,
                labeled,
                face_detected,
                pose_emitted,
            });
        }

        labels.push(LabeledFrame::new(frame, frame_faces, frame_heads, Some(&links))?);
        poses.insert(frame, frame_poses);
        faces.insert(frame, frame_dets);
        tally.frames.push(FrameTally {
            frame,
            pedestrians: states,
        });
    }

    Ok(SynthScene {
        labels,
        poses,
        faces,
        tally,
    })
}

#[allow(clippy::too_many_arguments)]
fn stick_figure(
    rng: &mut ChaCha8Rng,
    cfg: &ScenarioConfig,
    noise: &Normal<f64>,
    cx: f64,
    cy: f64,
    head_w: f64,
    head_h: f64,
    front: bool,
) -> Pose {
    let torso = head_h / cfg.body.r_h;
    let neck = cfg.body.r_n * head_h;
    let shoulder_y = cy + head_h / 2.0 + neck;
    let hip_y = shoulder_y + torso;
    let knee_y = hip_y + 0.55 * torso;
    let ankle_y = knee_y + 0.55 * torso;
    let sh = 0.8 * head_w;
    let hip = 0.45 * head_w;
    let eye_dy = 0.1 * head_h;

    // Means of the facial subsets used below equal (cx, cy).
    let layout: [(usize, f64, f64); 17] = [
        (kp::NOSE, cx, cy + eye_dy),
        (kp::LEFT_EYE, cx + 0.2 * head_w, cy - eye_dy / 2.0),
        (kp::RIGHT_EYE, cx - 0.2 * head_w, cy - eye_dy / 2.0),
        (kp::LEFT_EAR, cx + 0.45 * head_w, cy),
        (kp::RIGHT_EAR, cx - 0.45 * head_w, cy),
        (kp::LEFT_SHOULDER, cx + sh, shoulder_y),
        (kp::RIGHT_SHOULDER, cx - sh, shoulder_y),
        (kp::LEFT_ELBOW, cx + 1.1 * sh, shoulder_y + 0.5 * torso),
        (kp::RIGHT_ELBOW, cx - 1.1 * sh, shoulder_y + 0.5 * torso),
        (kp::LEFT_WRIST, cx + 1.1 * sh, shoulder_y + 0.95 * torso),
        (kp::RIGHT_WRIST, cx - 1.1 * sh, shoulder_y + 0.95 * torso),
        (kp::LEFT_HIP, cx + hip, hip_y),
        (kp::RIGHT_HIP, cx - hip, hip_y),
        (kp::LEFT_KNEE, cx + hip, knee_y),
        (kp::RIGHT_KNEE, cx - hip, knee_y),
        (kp::LEFT_ANKLE, cx + hip, ankle_y),
        (kp::RIGHT_ANKLE, cx - hip, ankle_y),
    ];

    let sigma = cfg.pose_model.keypoint_noise_px;
    let mut pose = Pose::default();
    for (idx, x, y) in layout {
        let facial = kp::FACIAL.contains(&idx);
        if facial && !front && rng.random_bool(cfg.pose_model.back_facial_dropout) {
            continue;
        }
        let (dx, dy) = if sigma > 0.0 {
            (noise.sample(rng), noise.sample(rng))
        } else {
            (0.0, 0.0)
        };
        let conf = uniform(rng, cfg.pose_model.confidence).max(f64::MIN_POSITIVE);
        pose.set(idx, Keypoint::new(x + dx, y + dy, conf));
    }
    pose
}
