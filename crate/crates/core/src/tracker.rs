//! SORT-style tracker with a constant-velocity Kalman filter and
//! center-distance association.
//!
//! State is `(cx, cy, w, h, vcx, vcy, vw, vh)`; the measurement is the box
//! `(cx, cy, w, h)`. Association cost is the raw Euclidean distance between
//! the predicted and detected centers, gated at `gate_dist`. Center distance
//! keeps small fast boxes associated even when consecutive boxes do not
//! overlap at all.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::assignment::{solve_assignment, CostMatrix};
use crate::detection::{Detection, Source};
use crate::error::{Error, Result};
use crate::geometry::{center_distance, BBox};

type State = SVector<f64, 8>;
type Cov = SMatrix<f64, 8, 8>;
type Meas = SVector<f64, 4>;
type ObsModel = SMatrix<f64, 4, 8>;

/// Velocity variance given to a freshly spawned track.
const INITIAL_VELOCITY_VARIANCE: f64 = 1e4;
/// Smallest width/height of an emitted box.
const MIN_EMITTED_SIZE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Frames a track survives without an update.
    pub max_age: u32,
    /// Consecutive updates before a track is emitted.
    pub min_hits: u32,
    /// Maximum center distance (pixels) for association.
    pub gate_dist: f64,
    pub process_noise: f64,
    pub measurement_noise: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            max_age: 3,
            min_hits: 2,
            gate_dist: 100.0,
            process_noise: 1.0,
            measurement_noise: 1.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_age < 1 {
            return Err(Error::param("max_age", "must be >= 1"));
        }
        if self.min_hits < 1 {
            return Err(Error::param("min_hits", "must be >= 1"));
        }
        for (name, v) in [
            ("gate_dist", self.gate_dist),
            ("process_noise", self.process_noise),
            ("measurement_noise", self.measurement_noise),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: State,
    pub covariance: Cov,
    /// Consecutive updates without a miss.
    pub hits: u32,
    /// Frames since the track was created.
    pub age: u32,
    pub time_since_update: u32,
    pub confidence: f64,
    face_updates: u32,
    head_updates: u32,
}

impl Track {
    fn spawn(id: u64, det: &Detection, cfg: &TrackerConfig) -> Self {
        let mut state = State::zeros();
        state.fixed_rows_mut::<4>(0).copy_from(&measurement(&det.bbox));
        let mut covariance = Cov::zeros();
        for i in 0..4 {
            covariance[(i, i)] = cfg.measurement_noise;
            covariance[(i + 4, i + 4)] = INITIAL_VELOCITY_VARIANCE;
        }
        let (face_updates, head_updates) = match det.source {
            Source::Face => (1, 0),
            Source::Head => (0, 1),
        };
        Track {
            id,
            state,
            covariance,
            hits: 1,
            age: 0,
            time_since_update: 0,
            confidence: det.confidence,
            face_updates,
            head_updates,
        }
    }

    /// Current box estimate; width and height floored at a tiny positive size.
    pub fn bbox(&self) -> BBox {
        let w = self.state[2].max(MIN_EMITTED_SIZE);
        let h = self.state[3].max(MIN_EMITTED_SIZE);
        BBox::from_center(self.state[0], self.state[1], w, h)
    }

    /// Source that fed the most updates; ties go to `Head`.
    pub fn source(&self) -> Source {
        if self.face_updates > self.head_updates {
            Source::Face
        } else {
            Source::Head
        }
    }

    /// Constant-velocity predict step.
    pub fn predict(&mut self, cfg: &TrackerConfig) {
        let f = transition();
        self.state = f * self.state;
        self.covariance = f * self.covariance * f.transpose() + Cov::identity() * cfg.process_noise;
        symmetrize(&mut self.covariance);
        self.age += 1;
        if self.time_since_update > 0 {
            self.hits = 0;
        }
        self.time_since_update += 1;
    }

    /// Kalman update with a detection box (Joseph-form covariance).
    pub fn update(&mut self, det: &Detection, cfg: &TrackerConfig) {
        let h = observation();
        let r = SMatrix::<f64, 4, 4>::identity() * cfg.measurement_noise;
        let innovation = measurement(&det.bbox) - h * self.state;
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
        let gain = self.covariance * h.transpose() * s_inv;
        self.state += gain * innovation;
        let i_kh = Cov::identity() - gain * h;
        self.covariance = i_kh * self.covariance * i_kh.transpose() + gain * r * gain.transpose();
        symmetrize(&mut self.covariance);

        self.hits += 1;
        self.time_since_update = 0;
        self.confidence = det.confidence;
        match det.source {
            Source::Face => self.face_updates += 1,
            Source::Head => self.head_updates += 1,
        }
    }

    fn emit(&self, frame: u64) -> Detection {
        Detection {
            bbox: self.bbox(),
            confidence: self.confidence,
            source: self.source(),
            frame,
            track_id: Some(self.id),
        }
    }
}

fn measurement(b: &BBox) -> Meas {
    let (cx, cy) = b.center();
    Meas::new(cx, cy, b.width(), b.height())
}

fn transition() -> Cov {
    let mut f = Cov::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> ObsModel {
    let mut h = ObsModel::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn symmetrize(m: &mut Cov) {
    *m = (*m + m.transpose()) * 0.5;
}

/// Result of matching tracks to detections.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(track index, detection index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Matches (already predicted) tracks to detections by gated center distance.
pub fn associate(tracks: &[Track], detections: &[Detection], cfg: &TrackerConfig) -> Association {
    let cost = CostMatrix::from_fn(tracks.len(), detections.len(), |t, d| {
        let dist = center_distance(&tracks[t].bbox(), &detections[d].bbox);
        (dist <= cfg.gate_dist).then_some(dist)
    })
    .expect("center distances are finite and non-negative");
    let matches = solve_assignment(&cost);
    let unmatched_tracks = (0..tracks.len())
        .filter(|t| !matches.iter().any(|m| m.0 == *t))
        .collect();
    let unmatched_detections = (0..detections.len())
        .filter(|d| !matches.iter().any(|m| m.1 == *d))
        .collect();
    Association {
        matches,
        unmatched_tracks,
        unmatched_detections,
    }
}

/// Per-sequence tracker state. Frames must be fed in strictly increasing order.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Advances to `frame`, consumes its detections and returns the boxes of
    /// confirmed tracks updated in this frame.
    pub fn step(&mut self, frame: u64, detections: &[Detection]) -> Result<Vec<Detection>> {
        self.step_detailed(frame, detections).map(|(emitted, _)| emitted)
    }

    /// Like [`Tracker::step`], also returning the association made this frame.
    pub fn step_detailed(&mut self, frame: u64, detections: &[Detection]) -> Result<(Vec<Detection>, Association)> {
        let elapsed = match self.last_frame {
            Some(last) if frame <= last => return Err(Error::FrameOrder { last, got: frame }),
            Some(last) => frame - last,
            None => 1,
        };
        if let Some(d) = detections.iter().find(|d| d.frame != frame) {
            return Err(Error::Label {
                frame,
                reason: format!("detection tagged with frame {} passed to tracker", d.frame),
            });
        }
        self.last_frame = Some(frame);

        for track in &mut self.tracks {
            for _ in 0..elapsed {
                track.predict(&self.cfg);
            }
        }

        let assoc = associate(&self.tracks, detections, &self.cfg);
        for &(t, d) in &assoc.matches {
            self.tracks[t].update(&detections[d], &self.cfg);
        }
        for &d in &assoc.unmatched_detections {
            self.tracks.push(Track::spawn(self.next_id, &detections[d], &self.cfg));
            self.next_id += 1;
        }
        let max_age = self.cfg.max_age;
        self.tracks.retain(|t| t.time_since_update <= max_age);

        let emitted = self
            .tracks
            .iter()
            .filter(|t| t.time_since_update == 0 && t.hits >= self.cfg.min_hits)
            .map(|t| t.emit(frame))
            .collect();
        Ok((emitted, assoc))
    }
}

/// Tracks a whole sequence of `(frame, detections)` records.
pub fn track_sequence(frames: &[(u64, Vec<Detection>)], cfg: &TrackerConfig) -> Result<Vec<(u64, Vec<Detection>)>> {
    let mut tracker = Tracker::new(*cfg)?;
    frames
        .iter()
        .map(|(frame, dets)| Ok((*frame, tracker.step(*frame, dets)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f64, cy: f64, size: f64, frame: u64) -> Detection {
        Detection::head(BBox::from_center(cx, cy, size, size), 0.8, frame)
    }

    fn track_with_velocity(vx: f64, vy: f64) -> Track {
        let cfg = TrackerConfig::default();
        let mut t = Track::spawn(1, &det(0., 0., 10., 0), &cfg);
        t.state[4] = vx;
        t.state[5] = vy;
        t
    }

    fn min_eigenvalue(c: &Cov) -> f64 {
        c.symmetric_eigen().eigenvalues.min()
    }

    #[test]
    fn predict_moves_center_by_velocity() {
        let cfg = TrackerConfig::default();
        let mut t = track_with_velocity(2., 1.);
        t.predict(&cfg);
        assert_eq!((t.state[0], t.state[1], t.state[2], t.state[3]), (2., 1., 10., 10.));
        t.predict(&cfg);
        assert_eq!((t.state[0], t.state[1]), (4., 2.));
        assert_eq!(t.time_since_update, 2);
    }

    #[test]
    fn predict_with_zero_velocity_only_grows_covariance() {
        let cfg = TrackerConfig::default();
        let mut t = track_with_velocity(0., 0.);
        let before = t.clone();
        t.predict(&cfg);
        assert_eq!(t.state, before.state);
        for i in 0..8 {
            assert!(t.covariance[(i, i)] > before.covariance[(i, i)]);
        }
    }

    #[test]
    fn association_examples() {
        let cfg = TrackerConfig::default();
        let tracks = vec![track_with_velocity(0., 0.)];
        let dets = vec![det(3., 4., 10., 0)];
        let a = associate(&tracks, &dets, &cfg);
        assert_eq!(a.matches, vec![(0, 0)]);

        let tight = TrackerConfig { gate_dist: 4.0, ..cfg };
        let a = associate(&tracks, &dets, &tight);
        assert!(a.matches.is_empty());
        assert_eq!(a.unmatched_tracks, vec![0]);
        assert_eq!(a.unmatched_detections, vec![0]);

        let a = associate(&[], &dets, &cfg);
        assert_eq!(a.unmatched_detections, vec![0]);
    }

    #[test]
    fn out_of_order_frames_are_rejected() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.step(5, &[]).unwrap();
        assert!(matches!(tr.step(5, &[]), Err(Error::FrameOrder { last: 5, got: 5 })));
        assert!(tr.step(4, &[]).is_err());
        assert!(tr.step(6, &[det(0., 0., 5., 7)]).is_err());
    }

    #[test]
    fn track_deleted_after_max_age_misses() {
        let cfg = TrackerConfig::default();
        let mut tr = Tracker::new(cfg).unwrap();
        for f in 0..3 {
            tr.step(f, &[det(100., 100., 20., f)]).unwrap();
        }
        assert_eq!(tr.tracks().len(), 1);
        for f in 3..3 + cfg.max_age as u64 {
            tr.step(f, &[]).unwrap();
            assert_eq!(tr.tracks().len(), 1, "alive at frame {f}");
        }
        tr.step(3 + cfg.max_age as u64, &[]).unwrap();
        assert!(tr.tracks().is_empty());
    }

    #[test]
    fn emits_only_after_min_hits() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        assert!(tr.step(0, &[det(50., 50., 20., 0)]).unwrap().is_empty());
        let out = tr.step(1, &[det(52., 50., 20., 1)]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].track_id, Some(1));
        assert_eq!(out[0].frame, 1);
    }

    #[test]
    fn ids_are_never_reused() {
        let cfg = TrackerConfig {
            max_age: 1,
            ..Default::default()
        };
        let mut tr = Tracker::new(cfg).unwrap();
        let mut seen = std::collections::HashSet::new();
        for f in 0..30u64 {
            // Alternate far-apart positions so tracks keep dying and respawning.
            let x = if (f / 3) % 2 == 0 { 100.0 } else { 900.0 };
            tr.step(f, &[det(x, 100., 20., f)]).unwrap();
            for t in tr.tracks() {
                seen.insert(t.id);
            }
        }
        let max = tr.tracks().iter().map(|t| t.id).max().unwrap();
        assert_eq!(seen.len() as u64, max);
    }

    #[test]
    fn linear_motion_converges_with_small_measurement_noise() {
        let cfg = TrackerConfig {
            measurement_noise: 1e-9,
            process_noise: 1e-2,
            ..Default::default()
        };
        let mut tr = Tracker::new(cfg).unwrap();
        for f in 0..12u64 {
            let (cx, cy) = (100.0 + 7.0 * f as f64, 300.0 - 3.0 * f as f64);
            let out = tr.step(f, &[det(cx, cy, 24., f)]).unwrap();
            for t in tr.tracks() {
                assert!(min_eigenvalue(&t.covariance) >= -1e-9);
                assert_eq!(t.covariance, t.covariance.transpose());
            }
            if f >= 5 {
                let (ex, ey) = out[0].bbox.center();
                assert!((ex - cx).abs() < 1e-6 && (ey - cy).abs() < 1e-6, "frame {f}");
                let t = &tr.tracks()[0];
                assert!((t.state[4] - 7.0).abs() < 1e-4 && (t.state[5] + 3.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn frame_gaps_predict_per_elapsed_frame() {
        let cfg = TrackerConfig {
            measurement_noise: 1e-9,
            process_noise: 1e-6,
            ..Default::default()
        };
        let mut tr = Tracker::new(cfg).unwrap();
        for f in 0..4u64 {
            tr.step(f, &[det(10.0 * f as f64, 0., 10., f)]).unwrap();
        }
        // Skip frame 4; at frame 5 the prediction sits at x = 50.
        tr.step(5, &[]).unwrap();
        assert!((tr.tracks()[0].state[0] - 50.0).abs() < 1e-3);
    }
}
