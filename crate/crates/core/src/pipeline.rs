//! Config-driven stage runner: poses → heads → (faces) → fuse → (track) →
//! {evaluate | anonymize}.
//!
//! Each stage writes its detections to the output directory and the next
//! stage reads them back, so an on-disk run is exactly the composition of
//! the in-memory stage functions below.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anonymizer::{anonymize_frame, AnonymizeConfig};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_sequence, EvalConfig, EvalReport, FrameDetections};
use crate::fusion::{fuse, FusionConfig};
use crate::head::{infer_heads, HeadInferenceParams};
use crate::io::{self, PoseFile};
use crate::synth::ScenarioConfig;
use crate::tracker::{Tracker, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    InferHeads,
    Fuse,
    Track,
    Evaluate,
    Anonymize,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::InferHeads => "infer-heads",
            Stage::Fuse => "fuse",
            Stage::Track => "track",
            Stage::Evaluate => "evaluate",
            Stage::Anonymize => "anonymize",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub poses: Option<PathBuf>,
    pub faces: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Image directory, or a pattern such as `frames/{frame:06}.png`.
    pub images: Option<String>,
}

/// Everything the CLI reads from `--config`. All sections are optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: Vec<Stage>,
    pub inputs: Inputs,
    pub output: Option<PathBuf>,
    pub head: HeadInferenceParams,
    pub fusion: FusionConfig,
    pub tracker: TrackerConfig,
    pub eval: EvalConfig,
    pub anonymize: AnonymizeConfig,
    /// Scenario for the `synth` command.
    pub synth: ScenarioConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a TOML config; relative input/output paths resolve against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut cfg.inputs.poses,
            &mut cfg.inputs.faces,
            &mut cfg.inputs.labels,
            &mut cfg.output,
        ]
        .into_iter()
        .flatten()
        {
            rebase(p);
        }
        if let Some(images) = cfg.inputs.images.as_mut() {
            if Path::new(images.as_str()).is_relative() {
                *images = base.join(&*images).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        self.fusion.validate()?;
        self.tracker.validate()?;
        self.eval.validate()?;
        self.anonymize.validate()?;
        if self.stages.is_empty() {
            return Err(Error::Config("no stages selected".into()));
        }
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            let names: Vec<&str> = self.stages.iter().map(|s| s.name()).collect();
            return Err(Error::Config(format!(
                "stages [{}] out of order; expected a subsequence of infer-heads, fuse, track, evaluate, anonymize",
                names.join(", ")
            )));
        }
        let has = |s| self.stages.contains(&s);
        if has(Stage::InferHeads) && self.inputs.poses.is_none() {
            return Err(Error::Config("infer-heads stage needs inputs.poses".into()));
        }
        if has(Stage::Fuse) && !(has(Stage::InferHeads) && self.inputs.faces.is_some()) {
            return Err(Error::Config("fuse stage needs infer-heads and inputs.faces".into()));
        }
        if !has(Stage::InferHeads) && self.inputs.faces.is_none() {
            return Err(Error::Config(
                "no detection source: select infer-heads or set inputs.faces".into(),
            ));
        }
        if has(Stage::Evaluate) && self.inputs.labels.is_none() {
            return Err(Error::Config("evaluate stage needs inputs.labels".into()));
        }
        if has(Stage::Anonymize) && self.inputs.images.is_none() {
            return Err(Error::Config("anonymize stage needs inputs.images".into()));
        }
        if self.output.is_none() {
            return Err(Error::Config("output directory not set".into()));
        }
        Ok(())
    }
}

/// Heads for every pose frame (frames without poses get an empty record).
pub fn infer_heads_all(poses: &PoseFile, params: &HeadInferenceParams) -> FrameDetections {
    poses
        .par_iter()
        .map(|(&frame, ps)| (frame, infer_heads(ps, params, frame)))
        .collect()
}

/// Per-frame fusion over the union of both frame sets.
pub fn fuse_all(heads: &FrameDetections, faces: &FrameDetections, cfg: &FusionConfig) -> FrameDetections {
    let frames: std::collections::BTreeSet<u64> = heads.keys().chain(faces.keys()).copied().collect();
    frames
        .into_par_iter()
        .map(|frame| {
            let h = heads.get(&frame).map_or(&[][..], Vec::as_slice);
            let f = faces.get(&frame).map_or(&[][..], Vec::as_slice);
            (frame, fuse(h, f, cfg))
        })
        .collect()
}

/// Runs the tracker over a sequence in frame order.
pub fn track_all(dets: &FrameDetections, cfg: &TrackerConfig) -> Result<FrameDetections> {
    let mut tracker = Tracker::new(*cfg)?;
    dets.iter()
        .map(|(&frame, ds)| Ok((frame, tracker.step(frame, ds)?)))
        .collect()
}

/// Resolves the image file for each frame: either a `{frame}` / `{frame:0N}`
/// pattern or the N-th file (sorted by name) of a directory.
pub fn resolve_images(spec: &str, frames: impl IntoIterator<Item = u64>) -> Result<Vec<(u64, PathBuf)>> {
    let frames: Vec<u64> = frames.into_iter().collect();
    if spec.contains("{frame") {
        return frames
            .into_iter()
            .map(|f| Ok((f, PathBuf::from(format_frame_pattern(spec, f)?))))
            .collect();
    }
    let dir = Path::new(spec);
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    frames
        .into_iter()
        .map(|f| {
            files
                .get(f as usize)
                .cloned()
                .map(|p| (f, p))
                .ok_or_else(|| Error::Config(format!("frame {f}: no image in {spec} (found {})", files.len())))
        })
        .collect()
}

fn format_frame_pattern(pattern: &str, frame: u64) -> Result<String> {
    let start = pattern.find("{frame").expect("checked by caller");
    let end = start
        + pattern[start..]
            .find('}')
            .ok_or_else(|| Error::Config(format!("unterminated placeholder in `{pattern}`")))?;
    let spec = &pattern[start + "{frame".len()..end];
    let formatted = match spec.strip_prefix(":0") {
        None if spec.is_empty() => frame.to_string(),
        Some(width) => {
            let width: usize = width
                .parse()
                .map_err(|_| Error::Config(format!("bad width in `{pattern}`")))?;
            format!("{frame:0width$}")
        }
        _ => return Err(Error::Config(format!("unsupported placeholder in `{pattern}`"))),
    };
    Ok(format!("{}{}{}", &pattern[..start], formatted, &pattern[end + 1..]))
}

/// Anonymizes every frame that has an image; writes into `out_dir` under
/// the input file names. Returns the number of frames written.
pub fn anonymize_all(images: &str, dets: &FrameDetections, cfg: &AnonymizeConfig, out_dir: &Path) -> Result<usize> {
    let jobs = resolve_images(images, dets.keys().copied())?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    jobs.par_iter()
        .map(|(frame, path)| {
            let img = image::open(path)
                .map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?
                .to_rgb8();
            let result = anonymize_frame(&img, &dets[frame], cfg)?;
            let name = path.file_name().expect("image paths name a file");
            let target = out_dir.join(name);
            result.image.save(&target).map_err(|source| Error::Image {
                path: target.clone(),
                source,
            })
        })
        .collect::<Result<Vec<()>>>()
        .map(|v| v.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStat {
    pub stage: Stage,
    pub frames: usize,
    pub seconds: f64,
    pub fps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    /// Detections after the last detection-producing stage.
    pub detections: FrameDetections,
    pub report: Option<EvalReport>,
    pub stats: Vec<StageStat>,
    pub written: Vec<PathBuf>,
}

fn timed<T>(stage: Stage, frames: usize, stats: &mut Vec<StageStat>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    let seconds = start.elapsed().as_secs_f64();
    let fps = (seconds > 0.0).then(|| frames as f64 / seconds);
    log::info!(
        "{}: {frames} frames in {seconds:.3}s ({} fps)",
        stage.name(),
        fps.map_or_else(|| "-".into(), |v| format!("{v:.1}"))
    );
    stats.push(StageStat {
        stage,
        frames,
        seconds,
        fps,
    });
    Ok(out)
}

/// Executes the configured stages, writing each stage's output to disk.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = cfg.output.clone().expect("validated");
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let has = |s| cfg.stages.contains(&s);
    let mut stats = Vec::new();
    let mut written = Vec::new();

    let mut current: PathBuf = match &cfg.inputs.faces {
        Some(faces) if !has(Stage::InferHeads) => faces.clone(),
        _ => PathBuf::new(),
    };

    if has(Stage::InferHeads) {
        let poses = io::load_poses(cfg.inputs.poses.as_ref().expect("validated"))?;
        let heads = timed(Stage::InferHeads, poses.len(), &mut stats, || {
            Ok(infer_heads_all(&poses, &cfg.head))
        })?;
        current = out.join("heads.ndjson");
        io::save_detections(&current, &heads)?;
        written.push(current.clone());
    }

    if has(Stage::Fuse) {
        let heads = io::load_detections(&current)?;
        let faces = io::load_detections(cfg.inputs.faces.as_ref().expect("validated"))?;
        let fused = timed(Stage::Fuse, heads.len().max(faces.len()), &mut stats, || {
            Ok(fuse_all(&heads, &faces, &cfg.fusion))
        })?;
        current = out.join("fused.ndjson");
        io::save_detections(&current, &fused)?;
        written.push(current.clone());
    }

    if has(Stage::Track) {
        let dets = io::load_detections(&current)?;
        let tracked = timed(Stage::Track, dets.len(), &mut stats, || track_all(&dets, &cfg.tracker))?;
        current = out.join("tracked.ndjson");
        io::save_detections(&current, &tracked)?;
        written.push(current.clone());
    }

    let detections = io::load_detections(&current)?;

    let mut report = None;
    if has(Stage::Evaluate) {
        let labels = io::load_labels(cfg.inputs.labels.as_ref().expect("validated"))?;
        let r = timed(Stage::Evaluate, labels.len(), &mut stats, || {
            evaluate_sequence(&detections, &labels, &cfg.eval)
        })?;
        let json = out.join("report.json");
        io::save_json(&json, &r)?;
        let txt = out.join("report.txt");
        io::save_text(&txt, &r.to_table("pipeline"))?;
        written.extend([json, txt]);
        report = Some(r);
    }

    if has(Stage::Anonymize) {
        let dir = out.join("anonymized");
        let images = cfg.inputs.images.as_deref().expect("validated");
        timed(Stage::Anonymize, detections.len(), &mut stats, || {
            anonymize_all(images, &detections, &cfg.anonymize, &dir)
        })?;
        written.push(dir);
    }

    let stats_path = out.join("stages.json");
    io::save_json(&stats_path, &stats)?;
    written.push(stats_path);

    Ok(PipelineOutcome {
        detections,
        report,
        stats,
        written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_order_is_enforced() {
        let cfg = PipelineConfig {
            stages: vec![Stage::Track, Stage::InferHeads],
            inputs: Inputs {
                poses: Some("p".into()),
                ..Default::default()
            },
            output: Some("o".into()),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn evaluate_without_labels_is_a_config_error() {
        let cfg = PipelineConfig {
            stages: vec![Stage::InferHeads, Stage::Evaluate],
            inputs: Inputs {
                poses: Some("p".into()),
                ..Default::default()
            },
            output: Some("o".into()),
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("labels"), "{err}");
    }

    #[test]
    fn fuse_needs_both_channels() {
        let cfg = PipelineConfig {
            stages: vec![Stage::InferHeads, Stage::Fuse],
            inputs: Inputs {
                poses: Some("p".into()),
                ..Default::default()
            },
            output: Some("o".into()),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_config_parses() {
        let cfg = PipelineConfig::from_toml(
            r#"
            stages = ["infer-heads", "fuse", "evaluate"]
            output = "out"
            [inputs]
            poses = "poses.ndjson"
            faces = "faces.ndjson"
            labels = "labels.ndjson"
            [fusion]
            strategy = "keep-head"
            [eval]
            size_filter = 15.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.stages, vec![Stage::InferHeads, Stage::Fuse, Stage::Evaluate]);
        assert_eq!(cfg.fusion.strategy, crate::fusion::FusionStrategy::KeepHead);
        assert_eq!(cfg.fusion.gamma, 0.9);
        assert_eq!(cfg.eval.size_filter, Some(15.0));
        assert!(cfg.validate().is_ok());
        assert!(PipelineConfig::from_toml("stages = [\"bogus\"]").is_err());
    }

    #[test]
    fn frame_patterns() {
        assert_eq!(format_frame_pattern("f/{frame:06}.png", 42).unwrap(), "f/000042.png");
        assert_eq!(format_frame_pattern("f/{frame}.jpg", 7).unwrap(), "f/7.jpg");
        assert!(format_frame_pattern("f/{frame:x}.jpg", 7).is_err());
    }
}
