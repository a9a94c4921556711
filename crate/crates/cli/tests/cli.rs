use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn reefdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reefdet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path) -> std::path::PathBuf {
    let fx = dir.join("fx");
    let out = reefdet(&["synth", "--output", s(&fx), "--seed", "7", "--images", "6"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    fx
}

#[test]
fn synth_postprocess_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let cfg = fx.join("config.json");
    let out = reefdet(&["--config", s(&cfg), "postprocess", "--flags", "all"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(fx.join("out/postprocess_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "postprocess");
    assert_eq!(manifest["seed"], 7);
    let used = manifest["max_iterations_used"].as_u64().unwrap();
    assert!(used >= 1 && used <= manifest["config"]["refine"]["max_iterations"].as_u64().unwrap());

    let pred = fx.join("out/predictions.jsonl");
    let out = reefdet(&["--config", s(&cfg), "evaluate", "--input", s(&pred)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(fx.join("out/report.json")).unwrap()).unwrap();
    assert!(report["ap50"].as_f64().unwrap() >= report["ap75"].as_f64().unwrap());
}

#[test]
fn flags_off_passes_detections_through() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let out_dir = tmp.path().join("off");
    let out = reefdet(&[
        "postprocess",
        "--input",
        s(&fx.join("predictions.jsonl")),
        "--output",
        s(&out_dir),
        "--flags",
        "none",
    ]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(fx.join("predictions.jsonl")).unwrap(),
        std::fs::read(out_dir.join("predictions.jsonl")).unwrap()
    );
}

#[test]
fn self_evaluation_from_csv_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let ingest = tmp.path().join("ingest");
    let out = reefdet(&[
        "ingest",
        "--input",
        s(&fx.join("annotations.csv")),
        "--format",
        "csv_jsonboxes",
        "--output",
        s(&ingest),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // ground truth as predictions: one line per box with score 1
    let gt: Value = serde_json::from_str(&std::fs::read_to_string(ingest.join("ground_truth.json")).unwrap()).unwrap();
    let mut lines = String::new();
    for a in gt["annotations"].as_array().unwrap() {
        let b = &a["bbox"];
        let (x, y, w, h) = (
            b[0].as_f64().unwrap(),
            b[1].as_f64().unwrap(),
            b[2].as_f64().unwrap(),
            b[3].as_f64().unwrap(),
        );
        lines.push_str(&format!(
            "{{\"image_id\":{},\"x_min\":{x},\"y_min\":{y},\"x_max\":{},\"y_max\":{},\"score\":1.0,\"class_id\":{}}}\n",
            a["image_id"],
            x + w,
            y + h,
            a["category_id"]
        ));
    }
    let preds = tmp.path().join("self.jsonl");
    std::fs::write(&preds, lines).unwrap();
    let eval_dir = tmp.path().join("eval");
    let out = reefdet(&[
        "evaluate",
        "--input",
        s(&preds),
        "--annotations",
        s(&ingest.join("ground_truth.json")),
        "--output",
        s(&eval_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    for key in ["ap", "ap50", "ap75", "ar"] {
        assert_eq!(report[key].as_f64().unwrap(), 1.0, "{key}");
    }
}

#[test]
fn ablate_writes_six_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let abl = tmp.path().join("abl");
    let out = reefdet(&["--config", s(&fx.join("config.json")), "ablate", "--output", s(&abl)]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(abl.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    let dirs = std::fs::read_dir(&abl)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(dirs, 6);
}

#[test]
fn render_writes_raster_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let r = tmp.path().join("render");
    let out = reefdet(&[
        "render",
        "--input",
        s(&fx.join("images/2.ppm")),
        "--predictions",
        s(&fx.join("predictions.jsonl")),
        "--image-format",
        "ppm",
        "--output",
        s(&r),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read(r.join("2_overlay.ppm")).unwrap().starts_with(b"P6"));
    let svg = std::fs::read_to_string(r.join("2_overlay.svg")).unwrap();
    assert!(svg.matches("<rect").count() >= 2);
}

#[test]
fn bench_reports_every_enabled_stage() {
    let out = reefdet(&["bench", "--sizes", "0,50", "--reps", "5", "--flags", "none,wbf"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("wbf,")).count(), 2);
    assert!(!text.contains("diou_nms"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let o = tmp.path().join("o");
    // input error
    let out = reefdet(&[
        "postprocess",
        "--input",
        s(&tmp.path().join("missing.jsonl")),
        "--output",
        s(&o),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let bad = tmp.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"image_id\":1}\n").unwrap();
    let out = reefdet(&["postprocess", "--input", s(&bad), "--output", s(&o)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":1"));
    // config errors
    let out = reefdet(&[
        "--config",
        s(&fx.join("config.json")),
        "postprocess",
        "--flags",
        "bogus",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = tmp.path().join("v2.json");
    std::fs::write(&cfg, "{\"schema_version\": 2}").unwrap();
    let out = reefdet(&["--config", s(&cfg), "postprocess"]);
    assert_eq!(out.status.code(), Some(2));
    let out = reefdet(&["bench", "--reps", "2"]);
    assert_eq!(out.status.code(), Some(2));
    // usage error
    assert_eq!(reefdet(&["frobnicate"]).status.code(), Some(2));
}
