use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn headshield(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headshield"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = headshield(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).expect("stderr is one JSON object")
}

#[test]
fn synth_then_each_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "5", "--frames", "12", "-o", "scene"], d);
    for f in ["labels.ndjson", "poses.ndjson", "faces.ndjson", "tally.json"] {
        assert!(d.join("scene").join(f).is_file(), "{f} missing");
    }

    ok(&["infer-heads", "--poses", "scene/poses.ndjson", "-o", "out"], d);
    let heads = fs::read_to_string(d.join("out/heads.ndjson")).unwrap();
    assert_eq!(heads.lines().count(), 12);
    assert!(heads.contains("\"source\":\"head\""));

    ok(
        &[
            "fuse",
            "--heads",
            "out/heads.ndjson",
            "--faces",
            "scene/faces.ndjson",
            "--fusion",
            "keep-both",
            "-o",
            "out",
        ],
        d,
    );
    let fused = fs::read_to_string(d.join("out/fused.ndjson")).unwrap();
    assert!(fused.contains("\"source\":\"face\"") && fused.contains("\"source\":\"head\""));

    ok(&["track", "--detections", "out/fused.ndjson", "-o", "out"], d);
    let tracked = fs::read_to_string(d.join("out/tracked.ndjson")).unwrap();
    assert!(tracked.contains("\"track_id\""));

    let table = ok(
        &[
            "evaluate",
            "--detections",
            "out/heads.ndjson",
            "--labels",
            "scene/labels.ndjson",
            "--missing-rate",
            "20,40",
            "-o",
            "out",
        ],
        d,
    );
    assert!(table.contains("Both") && table.contains("FP count"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["frames"], 12);
    assert_eq!(report["fp_count"], 0);
    let csv = fs::read_to_string(d.join("out/missing_rate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let sweep = ok(
        &[
            "sweep",
            "--param",
            "beta",
            "--detections",
            "out/heads.ndjson",
            "--labels",
            "scene/labels.ndjson",
            "-o",
            "out",
        ],
        d,
    );
    assert!(sweep.starts_with("value,both,face,head,none\n"));
    assert_eq!(sweep.lines().count(), 10);
    assert_eq!(sweep, fs::read_to_string(d.join("out/sweep_beta.csv")).unwrap());
}

#[test]
fn run_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "1", "--frames", "8", "-o", "scene"], d);
    fs::write(
        d.join("pipeline.toml"),
        r#"
stages = ["infer-heads", "fuse", "track", "evaluate"]
output = "run"

[inputs]
poses = "scene/poses.ndjson"
faces = "scene/faces.ndjson"
labels = "scene/labels.ndjson"

[fusion]
strategy = "by-confidence"

[tracker]
min_hits = 1
"#,
    )
    .unwrap();
    // Run from elsewhere: paths resolve against the config's directory.
    let elsewhere = tempfile::tempdir().unwrap();
    let config = d.join("pipeline.toml");
    ok(&["run", "--config", config.to_str().unwrap()], elsewhere.path());
    for f in [
        "heads.ndjson",
        "fused.ndjson",
        "tracked.ndjson",
        "report.json",
        "report.txt",
        "stages.json",
    ] {
        assert!(d.join("run").join(f).is_file(), "{f} missing");
    }
}

#[test]
fn anonymize_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("frames")).unwrap();
    let img = image::RgbImage::from_fn(64, 48, |x, y| {
        image::Rgb([(x * 4) as u8, (y * 5) as u8, ((x ^ y) * 3) as u8])
    });
    img.save(d.join("frames/000000.png")).unwrap();
    img.save(d.join("frames/000001.png")).unwrap();
    fs::write(
        d.join("dets.ndjson"),
        "{\"schema\":1,\"frame\":0,\"boxes\":[{\"x1\":10,\"y1\":10,\"x2\":30,\"y2\":30,\"confidence\":0.9,\"source\":\"head\"}]}\n\
         {\"schema\":1,\"frame\":1,\"boxes\":[]}\n",
    )
    .unwrap();
    ok(
        &[
            "anonymize",
            "--images",
            "frames",
            "--detections",
            "dets.ndjson",
            "--method",
            "pixelate",
            "-o",
            "anon",
        ],
        d,
    );
    let a0 = image::open(d.join("anon/000000.png")).unwrap().to_rgb8();
    let a1 = image::open(d.join("anon/000001.png")).unwrap().to_rgb8();
    assert_ne!(a0, img);
    assert_eq!(a1, img);
    assert_eq!(a0.get_pixel(0, 0), img.get_pixel(0, 0));
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let e = error_json(&headshield(&["track", "--detections", "missing.ndjson"], d));
    assert_eq!(e["kind"], "io");

    fs::write(d.join("bad.ndjson"), "{\"schema\":2,\"frame\":0,\"boxes\":[]}\n").unwrap();
    let e = error_json(&headshield(&["track", "--detections", "bad.ndjson"], d));
    assert_eq!(e["kind"], "schema");
    assert!(e["error"].as_str().unwrap().contains("line 1"));

    fs::write(
        d.join("eval.toml"),
        "stages = [\"infer-heads\", \"evaluate\"]\n[inputs]\nposes = \"p.ndjson\"\n",
    )
    .unwrap();
    let e = error_json(&headshield(&["run", "--config", "eval.toml", "-o", "x"], d));
    assert_eq!(e["kind"], "config");
    assert!(e["error"].as_str().unwrap().contains("labels"));

    let e = error_json(&headshield(&["no-such-command"], d));
    assert_eq!(e["kind"], "usage");

    let e = error_json(&headshield(
        &["fuse", "--heads", "a", "--faces", "b", "--fusion", "nonsense"],
        d,
    ));
    assert_eq!(e["kind"], "usage");
}
