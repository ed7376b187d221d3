//! Interchange files: poses, detections and labels.
//!
//! Every file is newline-delimited JSON, one frame record per line, each
//! record carrying `"schema": 1`. Frames must be unique and ascending.
//!
//! ```text
//! poses:      {"schema":1,"frame":0,"poses":[{"keypoints":[[x,y,c], ... 17 ...]}]}
//! detections: {"schema":1,"frame":0,"boxes":[{"x1":..,"y1":..,"x2":..,"y2":..,"confidence":..,"source":"face","track_id":3}]}
//! labels:     {"schema":1,"frame":0,"faces":[{"x1":..}],"heads":[{"x1":..}],"links":[[0,1]]}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detection::{Detection, Source};
use crate::error::{Error, Result};
use crate::evaluator::{FrameDetections, LabeledFrame};
use crate::geometry::{BBox, Keypoint, Pose, NUM_KEYPOINTS};

pub const SCHEMA_VERSION: u32 = 1;

/// Poses grouped by frame.
pub type PoseFile = BTreeMap<u64, Vec<Pose>>;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    schema: u32,
    frame: u64,
    poses: Vec<PoseEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseEntry {
    keypoints: Vec<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    schema: u32,
    frame: u64,
    boxes: Vec<BoxEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxEntry {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    confidence: f64,
    source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    track_id: Option<u64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlainBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    schema: u32,
    frame: u64,
    faces: Vec<PlainBox>,
    heads: Vec<PlainBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    links: Option<Vec<[usize; 2]>>,
}

/// Location of a record while validating.
struct Ctx<'a> {
    file: &'a str,
    line: usize,
}

impl Ctx<'_> {
    fn err(&self, path: impl Into<String>, reason: impl Into<String>) -> Error {
        Error::Schema {
            file: self.file.to_string(),
            line: self.line,
            path: path.into(),
            reason: reason.into(),
        }
    }
}

/// Parses NDJSON records, checking schema version and frame ordering.
fn parse_records<'f, T: DeserializeOwned>(
    text: &str,
    file: &'f str,
    header: impl Fn(&T) -> (u32, u64),
) -> Result<Vec<(Ctx<'f>, T)>> {
    let mut out = Vec::new();
    let mut last: Option<u64> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let ctx = Ctx { file, line: i + 1 };
        let de = &mut serde_json::Deserializer::from_str(line);
        let record: T = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ctx.err(path, e.into_inner().to_string())
        })?;
        let (schema, frame) = header(&record);
        if schema != SCHEMA_VERSION {
            return Err(ctx.err(
                "schema",
                format!("unsupported schema version {schema}, expected {SCHEMA_VERSION}"),
            ));
        }
        match last {
            Some(prev) if frame == prev => {
                return Err(ctx.err("frame", format!("frame {frame}: duplicate frame")));
            }
            Some(prev) if frame < prev => {
                return Err(ctx.err("frame", format!("frame {frame}: appears after frame {prev}")));
            }
            _ => {}
        }
        last = Some(frame);
        out.push((ctx, record));
    }
    Ok(out)
}

fn check_box(ctx: &Ctx<'_>, path: &str, frame: u64, b: PlainBox) -> Result<BBox> {
    BBox::try_new(b.x1, b.y1, b.x2, b.y2).map_err(|e| ctx.err(path, format!("frame {frame}: {e}")))
}

fn check_confidence(ctx: &Ctx<'_>, path: &str, frame: u64, c: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&c) {
        return Err(ctx.err(path, format!("frame {frame}: confidence {c} outside [0, 1]")));
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_lines<T: Serialize>(records: impl Iterator<Item = T>) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(&r).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn parse_poses(text: &str, file: &str) -> Result<PoseFile> {
    let mut out = PoseFile::new();
    for (ctx, rec) in parse_records::<PoseRecord>(text, file, |r| (r.schema, r.frame))? {
        let mut poses = Vec::with_capacity(rec.poses.len());
        for (p, entry) in rec.poses.into_iter().enumerate() {
            let path = format!("poses[{p}].keypoints");
            if entry.keypoints.len() != NUM_KEYPOINTS {
                return Err(ctx.err(
                    path,
                    format!(
                        "frame {}: pose {p} has {} keypoints, expected {NUM_KEYPOINTS}",
                        rec.frame,
                        entry.keypoints.len()
                    ),
                ));
            }
            let mut pose = Pose::default();
            for (k, [x, y, c]) in entry.keypoints.into_iter().enumerate() {
                check_confidence(&ctx, &format!("{path}[{k}]"), rec.frame, c)?;
                if c > 0.0 && !(x.is_finite() && y.is_finite()) {
                    return Err(ctx.err(format!("{path}[{k}]"), "non-finite coordinate"));
                }
                pose.set(k, Keypoint::new(x, y, c));
            }
            poses.push(pose);
        }
        out.insert(rec.frame, poses);
    }
    Ok(out)
}

pub fn poses_to_string(poses: &PoseFile) -> String {
    to_lines(poses.iter().map(|(&frame, ps)| {
        PoseRecord {
            schema: SCHEMA_VERSION,
            frame,
            poses: ps
                .iter()
                .map(|p| PoseEntry {
                    keypoints: p.keypoints.iter().map(|k| [k.x, k.y, k.confidence]).collect(),
                })
                .collect(),
        }
    }))
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<PoseFile> {
    let path = path.as_ref();
    parse_poses(&read(path)?, &path.display().to_string())
}

pub fn save_poses(path: impl AsRef<Path>, poses: &PoseFile) -> Result<()> {
    write(path.as_ref(), &poses_to_string(poses))
}

pub fn parse_detections(text: &str, file: &str) -> Result<FrameDetections> {
    let mut out = FrameDetections::new();
    for (ctx, rec) in parse_records::<DetectionRecord>(text, file, |r| (r.schema, r.frame))? {
        let mut dets = Vec::with_capacity(rec.boxes.len());
        for (i, b) in rec.boxes.into_iter().enumerate() {
            let path = format!("boxes[{i}]");
            let bbox = check_box(
                &ctx,
                &path,
                rec.frame,
                PlainBox {
                    x1: b.x1,
                    y1: b.y1,
                    x2: b.x2,
                    y2: b.y2,
                },
            )?;
            check_confidence(&ctx, &format!("{path}.confidence"), rec.frame, b.confidence)?;
            dets.push(Detection {
                bbox,
                confidence: b.confidence,
                source: b.source,
                frame: rec.frame,
                track_id: b.track_id,
            });
        }
        out.insert(rec.frame, dets);
    }
    Ok(out)
}

pub fn detections_to_string(dets: &FrameDetections) -> String {
    to_lines(dets.iter().map(|(&frame, ds)| {
        DetectionRecord {
            schema: SCHEMA_VERSION,
            frame,
            boxes: ds
                .iter()
                .map(|d| BoxEntry {
                    x1: d.bbox.x_min,
                    y1: d.bbox.y_min,
                    x2: d.bbox.x_max,
                    y2: d.bbox.y_max,
                    confidence: d.confidence,
                    source: d.source,
                    track_id: d.track_id,
                })
                .collect(),
        }
    }))
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<FrameDetections> {
    let path = path.as_ref();
    parse_detections(&read(path)?, &path.display().to_string())
}

pub fn save_detections(path: impl AsRef<Path>, dets: &FrameDetections) -> Result<()> {
    write(path.as_ref(), &detections_to_string(dets))
}

pub fn parse_labels(text: &str, file: &str) -> Result<Vec<LabeledFrame>> {
    let mut out = Vec::new();
    for (ctx, rec) in parse_records::<LabelRecord>(text, file, |r| (r.schema, r.frame))? {
        let faces = rec
            .faces
            .iter()
            .enumerate()
            .map(|(i, b)| check_box(&ctx, &format!("faces[{i}]"), rec.frame, *b))
            .collect::<Result<Vec<_>>>()?;
        let heads = rec
            .heads
            .iter()
            .enumerate()
            .map(|(i, b)| check_box(&ctx, &format!("heads[{i}]"), rec.frame, *b))
            .collect::<Result<Vec<_>>>()?;
        let links: Option<Vec<(usize, usize)>> = rec.links.map(|l| l.into_iter().map(|[f, h]| (f, h)).collect());
        let frame = LabeledFrame::new(rec.frame, faces, heads, links.as_deref())
            .map_err(|e| ctx.err("links", e.to_string()))?;
        out.push(frame);
    }
    Ok(out)
}

/// Links are always written out in full.
pub fn labels_to_string(labels: &[LabeledFrame]) -> String {
    let plain = |b: &BBox| PlainBox {
        x1: b.x_min,
        y1: b.y_min,
        x2: b.x_max,
        y2: b.y_max,
    };
    to_lines(labels.iter().map(|l| LabelRecord {
        schema: SCHEMA_VERSION,
        frame: l.frame,
        faces: l.face_labels.iter().map(plain).collect(),
        heads: l.head_labels.iter().map(plain).collect(),
        links: Some(l.face_to_head.iter().enumerate().map(|(f, &h)| [f, h]).collect()),
    }))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<LabeledFrame>> {
    let path = path.as_ref();
    parse_labels(&read(path)?, &path.display().to_string())
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[LabeledFrame]) -> Result<()> {
    let mut sorted = labels.to_vec();
    sorted.sort_by_key(|l| l.frame);
    write(path.as_ref(), &labels_to_string(&sorted))
}

/// Writes any serializable value as pretty JSON.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write(path.as_ref(), &(text + "\n"))
}

pub fn save_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    write(path.as_ref(), text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kps(n: usize) -> String {
        let v: Vec<String> = (0..n).map(|i| format!("[{i}.5, {}.0, 0.5]", i * 2)).collect();
        format!("[{}]", v.join(","))
    }

    #[test]
    fn minimal_pose_file() {
        let text = format!(
            "{{\"schema\":1,\"frame\":0,\"poses\":[{{\"keypoints\":{}}}]}}\n",
            kps(17)
        );
        let poses = parse_poses(&text, "p.ndjson").unwrap();
        assert_eq!(poses.len(), 1);
        assert_eq!(poses[&0].len(), 1);
        assert_eq!(poses[&0][0].keypoints.len(), 17);
        assert_eq!(poses[&0][0].get(3).x, 3.5);
        assert_eq!(parse_poses(&poses_to_string(&poses), "p").unwrap(), poses);
    }

    #[test]
    fn short_keypoint_array_names_the_pose() {
        let text = format!(
            "{{\"schema\":1,\"frame\":4,\"poses\":[{{\"keypoints\":{}}},{{\"keypoints\":{}}}]}}",
            kps(17),
            kps(16)
        );
        let err = parse_poses(&text, "p.ndjson").unwrap_err().to_string();
        assert!(err.contains("poses[1].keypoints"), "{err}");
        assert!(err.contains("frame 4"), "{err}");
        assert!(err.contains("16 keypoints"), "{err}");
    }

    #[test]
    fn schema_and_frame_errors() {
        let rec = |frame: u64| format!("{{\"schema\":1,\"frame\":{frame},\"boxes\":[]}}");
        assert!(parse_detections(&format!("{}\n{}", rec(0), rec(0)), "d")
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        assert!(parse_detections(&format!("{}\n{}", rec(3), rec(1)), "d").is_err());
        assert!(parse_detections("{\"schema\":2,\"frame\":0,\"boxes\":[]}", "d").is_err());
        let bad_source =
            r#"{"schema":1,"frame":0,"boxes":[{"x1":0,"y1":0,"x2":1,"y2":1,"confidence":0.5,"source":"hand"}]}"#;
        let err = parse_detections(bad_source, "d").unwrap_err().to_string();
        assert!(err.contains("boxes[0].source"), "{err}");
        let inverted =
            r#"{"schema":1,"frame":0,"boxes":[{"x1":5,"y1":0,"x2":1,"y2":1,"confidence":0.5,"source":"face"}]}"#;
        assert!(parse_detections(inverted, "d")
            .unwrap_err()
            .to_string()
            .contains("boxes[0]"));
        let conf = r#"{"schema":1,"frame":0,"boxes":[{"x1":0,"y1":0,"x2":1,"y2":1,"confidence":1.5,"source":"face"}]}"#;
        assert!(parse_detections(conf, "d").is_err());
    }

    #[test]
    fn detection_fields_survive() {
        let text = r#"{"schema":1,"frame":2,"boxes":[{"x1":0.5,"y1":1,"x2":3,"y2":4,"confidence":0.25,"source":"head","track_id":9}]}"#;
        let d = parse_detections(text, "d").unwrap();
        let det = d[&2][0];
        assert_eq!(det.source, Source::Head);
        assert_eq!(det.track_id, Some(9));
        assert_eq!(det.frame, 2);
        assert_eq!(parse_detections(&detections_to_string(&d), "d").unwrap(), d);
    }

    #[test]
    fn label_links() {
        let text = r#"{"schema":1,"frame":0,"faces":[{"x1":2,"y1":2,"x2":8,"y2":8}],"heads":[{"x1":0,"y1":0,"x2":10,"y2":10},{"x1":0,"y1":0,"x2":10,"y2":10}],"links":[[0,1]]}
{"schema":1,"frame":1,"faces":[{"x1":2,"y1":2,"x2":8,"y2":8}],"heads":[{"x1":0,"y1":0,"x2":10,"y2":10}]}"#;
        let labels = parse_labels(text, "l").unwrap();
        assert_eq!(labels[0].face_to_head, vec![1]);
        assert_eq!(labels[1].face_to_head, vec![0]);
        assert_eq!(parse_labels(&labels_to_string(&labels), "l").unwrap(), labels);

        let bad = r#"{"schema":1,"frame":0,"faces":[{"x1":2,"y1":2,"x2":8,"y2":8}],"heads":[],"links":[[0,3]]}"#;
        assert!(parse_labels(bad, "l").is_err());
        let orphan = r#"{"schema":1,"frame":5,"faces":[{"x1":2,"y1":2,"x2":8,"y2":8}],"heads":[{"x1":50,"y1":50,"x2":60,"y2":60}]}"#;
        let err = parse_labels(orphan, "l").unwrap_err().to_string();
        assert!(err.contains("frame 5"), "{err}");
    }

    #[test]
    fn files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/d.ndjson");
        let mut d = FrameDetections::new();
        d.insert(0, vec![Detection::face(BBox::new(1., 2., 3., 4.), 0.5, 0)]);
        save_detections(&path, &d).unwrap();
        assert_eq!(load_detections(&path).unwrap(), d);
        assert!(matches!(
            load_detections(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
