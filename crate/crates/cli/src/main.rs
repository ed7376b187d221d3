use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use headshield::evaluator::{
    default_sweep_values, evaluate_sequence, missing_rate_curve, sweep_to_csv, threshold_sweep, SweepParam,
};
use headshield::io;
use headshield::pipeline::{anonymize_all, fuse_all, infer_heads_all, run_pipeline, track_all, PipelineConfig};
use headshield::synth;
use headshield::{AnonymizeMethod, FusionStrategy};

/// Head-box based pedestrian anonymization toolkit.
#[derive(Debug, Parser)]
#[command(name = "headshield", version)]
struct Cli {
    /// TOML config supplying stage parameters (and stages/inputs for `run`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, short, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Infer head boxes from a pose file; writes heads.ndjson.
    InferHeads {
        #[arg(long)]
        poses: PathBuf,
    },
    /// Fuse head and face detections; writes fused.ndjson.
    Fuse {
        #[arg(long)]
        heads: PathBuf,
        #[arg(long)]
        faces: PathBuf,
        /// keep-both, keep-head, keep-face or by-confidence.
        #[arg(long)]
        fusion: Option<FusionStrategy>,
        /// Containment threshold for pairing a face with a head.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Track detections over frames; writes tracked.ndjson with track ids.
    Track {
        #[arg(long)]
        detections: PathBuf,
    },
    /// Evaluate detections against labels; writes report.json and report.txt.
    Evaluate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        thresholds: Thresholds,
        /// Also write missing_rate.csv for these head-size thresholds (comma separated).
        #[arg(long, value_delimiter = ',')]
        missing_rate: Option<Vec<f64>>,
        /// Name shown in the table's first column.
        #[arg(long, default_value = "detections")]
        name: String,
    },
    /// Anonymize image frames; writes images into the output directory.
    Anonymize {
        /// Image directory or a pattern such as `frames/{frame:06}.png`.
        #[arg(long)]
        images: String,
        #[arg(long)]
        detections: PathBuf,
        /// blur or pixelate.
        #[arg(long)]
        method: Option<AnonymizeMethod>,
    },
    /// Sweep alpha or beta; writes sweep_<param>.csv.
    Sweep {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// alpha or beta.
        #[arg(long)]
        param: SweepParam,
        /// Values to try (comma separated); defaults to 0.1..0.9.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[command(flatten)]
        thresholds: Thresholds,
    },
    /// Generate a synthetic scene; writes labels, poses, faces and tally.json.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        pedestrians: Option<usize>,
    },
    /// Run the stages listed in the config file.
    Run,
}

#[derive(Debug, Args)]
struct Thresholds {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Drop head labels and head detections smaller than this.
    #[arg(long)]
    size_filter: Option<f64>,
}

impl Thresholds {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(a) = self.alpha {
            cfg.eval.alpha = a;
        }
        if let Some(b) = self.beta {
            cfg.eval.beta = b;
        }
        if self.size_filter.is_some() {
            cfg.eval.size_filter = self.size_filter;
        }
    }
}

fn output_dir(cli: &Cli, cfg: &PipelineConfig) -> anyhow::Result<PathBuf> {
    let dir = cli
        .output
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn announce(path: &Path) {
    log::info!("wrote {}", path.display());
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };

    match &cli.command {
        Command::InferHeads { poses } => {
            cfg.head.validate()?;
            let out = output_dir(&cli, &cfg)?.join("heads.ndjson");
            let heads = infer_heads_all(&io::load_poses(poses)?, &cfg.head);
            io::save_detections(&out, &heads)?;
            announce(&out);
        }
        Command::Fuse {
            heads,
            faces,
            fusion,
            gamma,
        } => {
            if let Some(s) = fusion {
                cfg.fusion.strategy = *s;
            }
            if let Some(g) = gamma {
                cfg.fusion.gamma = *g;
            }
            cfg.fusion.validate()?;
            let out = output_dir(&cli, &cfg)?.join("fused.ndjson");
            let fused = fuse_all(&io::load_detections(heads)?, &io::load_detections(faces)?, &cfg.fusion);
            io::save_detections(&out, &fused)?;
            announce(&out);
        }
        Command::Track { detections } => {
            let out = output_dir(&cli, &cfg)?.join("tracked.ndjson");
            let tracked = track_all(&io::load_detections(detections)?, &cfg.tracker)?;
            io::save_detections(&out, &tracked)?;
            announce(&out);
        }
        Command::Evaluate {
            detections,
            labels,
            thresholds,
            missing_rate,
            name,
        } => {
            thresholds.apply(&mut cfg);
            let dir = output_dir(&cli, &cfg)?;
            let dets = io::load_detections(detections)?;
            let labels = io::load_labels(labels)?;
            let report = evaluate_sequence(&dets, &labels, &cfg.eval)?;
            io::save_json(dir.join("report.json"), &report)?;
            let table = report.to_table(name);
            io::save_text(dir.join("report.txt"), &table)?;
            print!("{table}");
            if let Some(thresholds) = missing_rate {
                let curve = missing_rate_curve(&dets, &labels, cfg.eval.alpha, thresholds)?;
                let mut csv = String::from("threshold,total,missed,percent\n");
                for p in &curve {
                    let pct = p.percent.map_or_else(String::new, |v| v.to_string());
                    csv.push_str(&format!("{},{},{},{}\n", p.threshold, p.total, p.missed, pct));
                }
                let path = dir.join("missing_rate.csv");
                io::save_text(&path, &csv)?;
                announce(&path);
            }
        }
        Command::Anonymize {
            images,
            detections,
            method,
        } => {
            if let Some(m) = method {
                cfg.anonymize.method = *m;
            }
            cfg.anonymize.validate()?;
            let dir = output_dir(&cli, &cfg)?;
            let n = anonymize_all(images, &io::load_detections(detections)?, &cfg.anonymize, &dir)?;
            log::info!("anonymized {n} frames into {}", dir.display());
        }
        Command::Sweep {
            detections,
            labels,
            param,
            values,
            thresholds,
        } => {
            thresholds.apply(&mut cfg);
            cfg.eval.validate()?;
            let dir = output_dir(&cli, &cfg)?;
            let values = values.clone().unwrap_or_else(default_sweep_values);
            let rows = threshold_sweep(
                &io::load_detections(detections)?,
                &io::load_labels(labels)?,
                &cfg.eval,
                *param,
                &values,
            )?;
            let csv = sweep_to_csv(&rows);
            let name = match param {
                SweepParam::Alpha => "sweep_alpha.csv",
                SweepParam::Beta => "sweep_beta.csv",
            };
            io::save_text(dir.join(name), &csv)?;
            print!("{csv}");
        }
        Command::Synth {
            seed,
            frames,
            pedestrians,
        } => {
            let mut scenario = cfg.synth;
            if let Some(s) = seed {
                scenario.seed = *s;
            }
            if let Some(f) = frames {
                scenario.frames = *f;
            }
            if let Some(p) = pedestrians {
                scenario.pedestrians = *p;
            }
            let dir = output_dir(&cli, &cfg)?;
            let scene = synth::generate(&scenario)?;
            io::save_labels(dir.join("labels.ndjson"), &scene.labels)?;
            io::save_poses(dir.join("poses.ndjson"), &scene.poses)?;
            io::save_detections(dir.join("faces.ndjson"), &scene.faces)?;
            io::save_json(dir.join("tally.json"), &scene.tally)?;
            log::info!("wrote synthetic scene to {}", dir.display());
        }
        Command::Run => {
            if cli.config.is_none() {
                bail!("`run` needs --config");
            }
            if let Some(out) = &cli.output {
                cfg.output = Some(out.clone());
            }
            let outcome = run_pipeline(&cfg)?;
            if let Some(report) = &outcome.report {
                print!("{}", report.to_table("pipeline"));
            }
            for path in &outcome.written {
                announce(path);
            }
        }
    }
    Ok(())
}

fn error_json(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": message, "kind": kind }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_json("usage", e.render().to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already include their cause in the message.
            let (kind, message) = match e.downcast_ref::<headshield::Error>() {
                Some(err) => (err.kind(), err.to_string()),
                None => ("cli", format!("{e:#}")),
            };
            eprintln!("{}", error_json(kind, &message));
            ExitCode::FAILURE
        }
    }
}
