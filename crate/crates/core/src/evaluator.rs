//! Two-label evaluation: detections are judged against a head label and,
//! when the pedestrian faces the camera, a face label.
//!
//! * face criterion: `|D ∩ F| / |F| > alpha` (the detection hides enough face)
//! * head criterion: `|D ∩ H| / |D| > beta` (the detection is mostly head)
//!
//! Detections are matched one-to-one to head labels with the Hungarian
//! method on `1 - IoU`, pairs with zero IoU being infeasible. Each
//! face-bearing head label is then classified Both/Face/Head/None, each
//! head-only label Head/None. A detection left unmatched, or matched but
//! failing every criterion that applies, is a false positive.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{solve_assignment, CostMatrix};
use crate::detection::{Detection, Source};
use crate::error::{Error, Result};
use crate::geometry::{containment_ratio, intersect_area, iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Drop head labels and head-source detections whose larger side is below this.
    pub size_filter: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            alpha: 0.5,
            beta: 0.5,
            size_filter: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        if let Some(s) = self.size_filter {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::param("size_filter", format!("must be >= 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// Ground truth for one frame. `face_to_head[i]` is the head label of face `i`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledFrame {
    pub frame: u64,
    pub face_labels: Vec<BBox>,
    pub head_labels: Vec<BBox>,
    pub face_to_head: Vec<usize>,
}

impl LabeledFrame {
    /// Builds a frame, resolving face/head links. Explicit `links`
    /// (`(face, head)` pairs) take precedence; remaining faces go to the head
    /// that contains the largest share of them.
    pub fn new(
        frame: u64,
        face_labels: Vec<BBox>,
        head_labels: Vec<BBox>,
        links: Option<&[(usize, usize)]>,
    ) -> Result<Self> {
        let mut mapping: Vec<Option<usize>> = vec![None; face_labels.len()];
        for &(f, h) in links.unwrap_or_default() {
            if f >= face_labels.len() || h >= head_labels.len() {
                return Err(Error::Label {
                    frame,
                    reason: format!("link [{f}, {h}] out of range"),
                });
            }
            if mapping[f].replace(h).is_some() {
                return Err(Error::Label {
                    frame,
                    reason: format!("face label {f} linked more than once"),
                });
            }
        }
        let unlinked: Vec<usize> = (0..face_labels.len()).filter(|&f| mapping[f].is_none()).collect();
        if !unlinked.is_empty() {
            let subset: Vec<BBox> = unlinked.iter().map(|&f| face_labels[f]).collect();
            let auto = associate_labels(&subset, &head_labels).map_err(|e| match e {
                Error::Label { reason, .. } => Error::Label { frame, reason },
                other => other,
            })?;
            for (f, h) in unlinked.into_iter().zip(auto) {
                mapping[f] = Some(h);
            }
        }
        let face_to_head: Vec<usize> = mapping.into_iter().map(|m| m.expect("all faces mapped")).collect();
        let labeled = LabeledFrame {
            frame,
            face_labels,
            head_labels,
            face_to_head,
        };
        labeled.validate()?;
        Ok(labeled)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |reason: String| Error::Label {
            frame: self.frame,
            reason,
        };
        if self.face_to_head.len() != self.face_labels.len() {
            return Err(err("face_to_head length differs from face label count".into()));
        }
        let mut owner: Vec<Option<usize>> = vec![None; self.head_labels.len()];
        for (f, &h) in self.face_to_head.iter().enumerate() {
            if h >= self.head_labels.len() {
                return Err(err(format!("face label {f} mapped to missing head label {h}")));
            }
            if let Some(other) = owner[h].replace(f) {
                return Err(err(format!("head label {h} carries two face labels ({other}, {f})")));
            }
            if self.face_labels[f].area() <= 0.0 {
                return Err(err(format!("face label {f} has zero area")));
            }
        }
        Ok(())
    }

    /// Face label index carried by each head label.
    pub fn head_to_face(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.head_labels.len()];
        for (f, &h) in self.face_to_head.iter().enumerate() {
            out[h] = Some(f);
        }
        out
    }
}

/// Per-category label counts plus the false-positive count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub both: u64,
    pub face_only: u64,
    pub head_only_of_pair: u64,
    pub none_of_pair: u64,
    pub head_match: u64,
    pub head_none: u64,
    pub fp_count: u64,
}

impl EvalCounts {
    pub fn face_bearing_total(&self) -> u64 {
        self.both + self.face_only + self.head_only_of_pair + self.none_of_pair
    }

    pub fn head_only_total(&self) -> u64 {
        self.head_match + self.head_none
    }
}

impl Add for EvalCounts {
    type Output = EvalCounts;

    fn add(self, o: EvalCounts) -> EvalCounts {
        EvalCounts {
            both: self.both + o.both,
            face_only: self.face_only + o.face_only,
            head_only_of_pair: self.head_only_of_pair + o.head_only_of_pair,
            none_of_pair: self.none_of_pair + o.none_of_pair,
            head_match: self.head_match + o.head_match,
            head_none: self.head_none + o.head_none,
            fp_count: self.fp_count + o.fp_count,
        }
    }
}

impl AddAssign for EvalCounts {
    fn add_assign(&mut self, o: EvalCounts) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub counts: EvalCounts,
    pub frames: u64,
    /// Frames per second achieved by the evaluation itself.
    pub throughput: Option<f64>,
}

impl EvalReport {
    /// Aligned plain-text table in the "Face and Head | Head | FP" layout.
    pub fn to_table(&self, name: &str) -> String {
        let c = &self.counts;
        let name_w = name.len().max(11);
        let fps = self.throughput.map_or_else(|| "-".to_string(), |t| format!("{t:.1}"));
        let mut s = String::new();
        s.push_str(&format!(
            "{:<name_w$} | {:^31} | {:^15} | {:>8} | {:>8}\n",
            "Label", "Face and Head", "Head", "FP count", "FPS"
        ));
        s.push_str(&format!(
            "{:<name_w$} | {:>7}{:>8}{:>8}{:>8} | {:>7}{:>8} | {:>8} | {:>8}\n",
            "Match", "Both", "Face", "Head", "None", "Head", "None", "", ""
        ));
        s.push_str(&format!("{}\n", "-".repeat(name_w + 75)));
        s.push_str(&format!(
            "{:<name_w$} | {:>7}{:>8}{:>8}{:>8} | {:>7}{:>8} | {:>8} | {:>8}\n",
            name, c.both, c.face_only, c.head_only_of_pair, c.none_of_pair, c.head_match, c.head_none, c.fp_count, fps
        ));
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table("Detections"))
    }
}

/// Face criterion with strict inequality. Errors on a zero-area face label.
pub fn face_criterion(d: &BBox, f: &BBox, alpha: f64) -> Result<bool> {
    Ok(containment_ratio(f, d)? > alpha)
}

/// Head criterion with strict inequality. Errors on a zero-area detection.
pub fn head_criterion(d: &BBox, h: &BBox, beta: f64) -> Result<bool> {
    Ok(containment_ratio(d, h)? > beta)
}

/// Maps each face label to the head label containing the largest share of
/// it (ties to the lower head index). A face touching no head is an error.
pub fn associate_labels(faces: &[BBox], heads: &[BBox]) -> Result<Vec<usize>> {
    faces
        .iter()
        .enumerate()
        .map(|(i, face)| {
            let area = face.area();
            if area <= 0.0 {
                return Err(Error::Label {
                    frame: 0,
                    reason: format!("face label {i} has zero area"),
                });
            }
            let mut best: Option<(usize, f64)> = None;
            for (h, head) in heads.iter().enumerate() {
                let r = intersect_area(face, head) / area;
                if r > 0.0 && best.is_none_or(|(_, br)| r > br) {
                    best = Some((h, r));
                }
            }
            best.map(|(h, _)| h).ok_or_else(|| Error::Label {
                frame: 0,
                reason: format!(
                    "face label {i} ({}, {}, {}, {}) lies outside every head label",
                    face.x_min, face.y_min, face.x_max, face.y_max
                ),
            })
        })
        .collect()
}

/// Classification of a face-bearing head label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairClass {
    Both,
    Face,
    Head,
    None,
}

/// Label matches and per-label outcomes for one frame, before counting.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatching {
    /// Detections surviving the size filter.
    pub detections: Vec<Detection>,
    /// Labels surviving the size filter.
    pub labels: LabeledFrame,
    /// `(detection, head label)` pairs.
    pub matches: Vec<(usize, usize)>,
}

fn passes_size(b: &BBox, min: Option<f64>) -> bool {
    min.is_none_or(|m| b.max_dim() >= m)
}

/// Applies the size filter and matches detections to head labels.
pub fn match_frame(dets: &[Detection], labels: &LabeledFrame, cfg: &EvalConfig) -> FrameMatching {
    let detections: Vec<Detection> = dets
        .iter()
        .filter(|d| d.source == Source::Face || passes_size(&d.bbox, cfg.size_filter))
        .copied()
        .collect();

    let labels = if cfg.size_filter.is_some() {
        let keep: Vec<bool> = labels
            .head_labels
            .iter()
            .map(|h| passes_size(h, cfg.size_filter))
            .collect();
        let mut new_index = vec![None; keep.len()];
        let mut heads = Vec::new();
        for (i, h) in labels.head_labels.iter().enumerate() {
            if keep[i] {
                new_index[i] = Some(heads.len());
                heads.push(*h);
            }
        }
        let mut faces = Vec::new();
        let mut face_to_head = Vec::new();
        for (f, &h) in labels.face_to_head.iter().enumerate() {
            if let Some(nh) = new_index[h] {
                faces.push(labels.face_labels[f]);
                face_to_head.push(nh);
            }
        }
        LabeledFrame {
            frame: labels.frame,
            face_labels: faces,
            head_labels: heads,
            face_to_head,
        }
    } else {
        labels.clone()
    };

    let cost = CostMatrix::from_fn(detections.len(), labels.head_labels.len(), |d, h| {
        let v = iou(&detections[d].bbox, &labels.head_labels[h]);
        (v > 0.0).then_some(1.0 - v)
    })
    .expect("1 - IoU lies in [0, 1)");
    let matches = solve_assignment(&cost);
    FrameMatching {
        detections,
        labels,
        matches,
    }
}

impl FrameMatching {
    /// Classifies every label and counts false positives at the given thresholds.
    pub fn count(&self, alpha: f64, beta: f64) -> EvalCounts {
        let mut c = EvalCounts::default();
        let head_to_face = self.labels.head_to_face();
        let mut matched_det: Vec<Option<usize>> = vec![None; self.labels.head_labels.len()];
        for &(d, h) in &self.matches {
            matched_det[h] = Some(d);
        }
        let mut fp = self.detections.len() as u64 - self.matches.len() as u64;

        for (h, head) in self.labels.head_labels.iter().enumerate() {
            let det = matched_det[h].map(|d| &self.detections[d].bbox);
            // IoU > 0 guarantees positive detection area.
            let head_ok = det.is_some_and(|d| head_criterion(d, head, beta).unwrap_or(false));
            match head_to_face[h] {
                Some(f) => {
                    let face = &self.labels.face_labels[f];
                    let face_ok = det.is_some_and(|d| face_criterion(d, face, alpha).unwrap_or(false));
                    match (face_ok, head_ok) {
                        (true, true) => c.both += 1,
                        (true, false) => c.face_only += 1,
                        (false, true) => c.head_only_of_pair += 1,
                        (false, false) => {
                            c.none_of_pair += 1;
                            if det.is_some() {
                                fp += 1;
                            }
                        }
                    }
                }
                None => {
                    if head_ok {
                        c.head_match += 1;
                    } else {
                        c.head_none += 1;
                        if det.is_some() {
                            fp += 1;
                        }
                    }
                }
            }
        }
        c.fp_count = fp;
        c
    }

    /// Classification of each face-bearing head label, in head label order.
    pub fn pair_classes(&self, alpha: f64, beta: f64) -> Vec<PairClass> {
        let head_to_face = self.labels.head_to_face();
        let mut matched_det: Vec<Option<usize>> = vec![None; self.labels.head_labels.len()];
        for &(d, h) in &self.matches {
            matched_det[h] = Some(d);
        }
        self.labels
            .head_labels
            .iter()
            .enumerate()
            .filter_map(|(h, head)| {
                let f = head_to_face[h]?;
                let det = matched_det[h].map(|d| &self.detections[d].bbox);
                let face_ok =
                    det.is_some_and(|d| face_criterion(d, &self.labels.face_labels[f], alpha).unwrap_or(false));
                let head_ok = det.is_some_and(|d| head_criterion(d, head, beta).unwrap_or(false));
                Some(match (face_ok, head_ok) {
                    (true, true) => PairClass::Both,
                    (true, false) => PairClass::Face,
                    (false, true) => PairClass::Head,
                    (false, false) => PairClass::None,
                })
            })
            .collect()
    }
}

/// Evaluates one frame of detections against its labels.
pub fn evaluate_frame(dets: &[Detection], labels: &LabeledFrame, cfg: &EvalConfig) -> EvalCounts {
    match_frame(dets, labels, cfg).count(cfg.alpha, cfg.beta)
}

/// Detections grouped by frame.
pub type FrameDetections = BTreeMap<u64, Vec<Detection>>;

fn pair_frames<'a>(
    dets: &'a FrameDetections,
    labels: &'a [LabeledFrame],
) -> Result<Vec<(&'a [Detection], &'a LabeledFrame)>> {
    let known: std::collections::BTreeSet<u64> = labels.iter().map(|l| l.frame).collect();
    if let Some((&frame, _)) = dets.iter().find(|(f, d)| !d.is_empty() && !known.contains(f)) {
        return Err(Error::FrameMismatch { frame });
    }
    Ok(labels
        .iter()
        .map(|l| (dets.get(&l.frame).map_or(&[][..], Vec::as_slice), l))
        .collect())
}

/// Sums [`evaluate_frame`] over a sequence. Label frames without detections
/// count as empty; detections on an unlabeled frame are an error.
pub fn evaluate_sequence(dets: &FrameDetections, labels: &[LabeledFrame], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let start = Instant::now();
    let frames = pair_frames(dets, labels)?;
    let counts = frames
        .par_iter()
        .map(|(d, l)| evaluate_frame(d, l, cfg))
        .reduce(EvalCounts::default, Add::add);
    let secs = start.elapsed().as_secs_f64();
    let n = frames.len() as u64;
    Ok(EvalReport {
        counts,
        frames: n,
        throughput: (n > 0 && secs > 0.0).then(|| n as f64 / secs),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingRatePoint {
    pub threshold: f64,
    /// Faces considered at this threshold.
    pub total: u64,
    pub missed: u64,
    /// `None` when no face label qualifies.
    pub percent: Option<f64>,
}

/// Share of face labels not covered (face criterion, any detection) among
/// those whose head label's larger side is at least each threshold.
pub fn missing_rate_curve(
    dets: &FrameDetections,
    labels: &[LabeledFrame],
    alpha: f64,
    thresholds: &[f64],
) -> Result<Vec<MissingRatePoint>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("thresholds", "must be ascending"));
    }
    let frames = pair_frames(dets, labels)?;
    // (head max_dim, covered) per face label.
    let faces: Vec<(f64, bool)> = frames
        .par_iter()
        .flat_map_iter(|(d, l)| {
            l.face_to_head.iter().enumerate().map(move |(f, &h)| {
                let face = &l.face_labels[f];
                let covered = d
                    .iter()
                    .any(|det| face_criterion(&det.bbox, face, alpha).unwrap_or(false));
                (l.head_labels[h].max_dim(), covered)
            })
        })
        .collect();
    Ok(thresholds
        .iter()
        .map(|&t| {
            let (total, missed) = faces
                .iter()
                .filter(|(size, _)| *size >= t)
                .fold((0u64, 0u64), |(n, m), (_, covered)| (n + 1, m + u64::from(!covered)));
            MissingRatePoint {
                threshold: t,
                total,
                missed,
                percent: (total > 0).then(|| 100.0 * missed as f64 / total as f64),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    Beta,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            other => Err(Error::param("which", format!("expected alpha or beta, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub both: u64,
    pub face: u64,
    pub head: u64,
    pub none: u64,
}

/// The nine values 0.1, 0.2, ..., 0.9.
pub fn default_sweep_values() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Re-classifies face-bearing labels with one threshold varied and the other
/// taken from `base`. Matching does not depend on the thresholds, so it is
/// computed once per frame.
pub fn threshold_sweep(
    dets: &FrameDetections,
    labels: &[LabeledFrame],
    base: &EvalConfig,
    which: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::param(
            "values",
            format!("sweep values must lie in (0, 1), got {v}"),
        ));
    }
    let frames = pair_frames(dets, labels)?;
    let matchings: Vec<FrameMatching> = frames.par_iter().map(|(d, l)| match_frame(d, l, base)).collect();
    Ok(values
        .iter()
        .map(|&value| {
            let (alpha, beta) = match which {
                SweepParam::Alpha => (value, base.beta),
                SweepParam::Beta => (base.alpha, value),
            };
            let c = matchings
                .iter()
                .map(|m| m.count(alpha, beta))
                .fold(EvalCounts::default(), Add::add);
            SweepRow {
                value,
                both: c.both,
                face: c.face_only,
                head: c.head_only_of_pair,
                none: c.none_of_pair,
            }
        })
        .collect())
}

/// CSV with header `value,both,face,head,none`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("value,both,face,head,none\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.value, r.both, r.face, r.head, r.none));
    }
    s
}
