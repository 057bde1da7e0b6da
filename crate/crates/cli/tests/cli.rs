use std::path::Path;
use std::process::{Command, Output};

use rigpose::geometry::RigidTransform;
use rigpose::io::{read_json, PoseFile, ReportFile, RigFile, TruthFile};
use serde_json::Value;

fn rigpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rigpose")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = rigpose(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// Simulated flight in `dir` with `trials` frames.
fn flight(dir: &Path, trials: usize, sigma: f64) {
    ok(&[
        "simulate",
        "flight",
        "--out-dir",
        dir.to_str().unwrap(),
        "--trials",
        &trials.to_string(),
        "--sigma",
        &sigma.to_string(),
        "--seed",
        "5",
    ]);
}

fn error_record(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr holds a JSON error record")
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(rigpose(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(rigpose(&["solve-pose", "--rig", "r.json"]).status.code(), Some(2));
    assert_eq!(rigpose(&["ablate-cameras", "--mask", "0x"]).status.code(), Some(2));
    assert_eq!(rigpose(&["--help"]).status.code(), Some(0));
}

#[test]
fn noise_free_solve_matches_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    flight(d, 4, 0.0);
    ok(&[
        "solve-pose",
        "--rig",
        &path(d, "rig.json"),
        "--field",
        &path(d, "field.json"),
        "--obs",
        &path(d, "correspondences.json"),
        "--out",
        &path(d, "pose.json"),
    ]);
    let poses: PoseFile = read_json(&d.join("pose.json")).unwrap();
    let truth: TruthFile = read_json(&d.join("truth.json")).unwrap();
    assert_eq!(poses.poses.len(), 4);
    assert_eq!(poses.seed, Some(0));
    for fp in &poses.poses {
        let (angle, distance) = RigidTransform::from(&fp.pose).distance_to(&RigidTransform::from(&truth.poses[&fp.frame]));
        assert!(angle < 1e-9 && distance < 1e-6, "frame {}: {angle:e} {distance:e}", fp.frame);
        assert!(fp.runtime_ms.is_none());
        assert!(!fp.candidates.is_empty());
    }
}

#[test]
fn single_camera_has_larger_position_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    flight(d, 20, 1.0);
    let (rig, field, obs, truth, out) =
        (path(d, "rig.json"), path(d, "field.json"), path(d, "correspondences.json"), path(d, "truth.json"), path(d, "ablation.json"));
    ok(&[
        "ablate-cameras",
        "--rig",
        &rig,
        "--field",
        &field,
        "--obs",
        &obs,
        "--truth",
        &truth,
        "--mask",
        "0",
        "--mask",
        "01234",
        "--out",
        &out,
        "--csv",
        &path(d, "ablation.csv"),
        "--seed",
        "3",
    ]);
    let report: ReportFile = read_json(&d.join("ablation.json")).unwrap();
    assert_eq!(report.seed, Some(3));
    let masks: Vec<&str> = report.reports.iter().map(|r| r.mask.as_str()).collect();
    assert_eq!(masks, ["#0", "#01234"]);
    assert!(report.reports[0].position_error.mean > report.reports[1].position_error.mean);
    let csv = std::fs::read_to_string(d.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 20);
}

#[test]
fn evaluate_scores_a_pose_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    flight(d, 3, 1.0);
    let (rig, field, obs) = (path(d, "rig.json"), path(d, "field.json"), path(d, "correspondences.json"));
    ok(&["solve-pose", "--rig", &rig, "--field", &field, "--obs", &obs, "--out", &path(d, "pose.json"), "--timing"]);
    let poses: PoseFile = read_json(&d.join("pose.json")).unwrap();
    assert!(poses.poses.iter().all(|p| p.runtime_ms.is_some_and(|t| t > 0.0)));
    ok(&[
        "evaluate",
        "--rig",
        &rig,
        "--field",
        &field,
        "--obs",
        &obs,
        "--poses",
        &path(d, "pose.json"),
        "--truth",
        &path(d, "truth.json"),
        "--out",
        &path(d, "report.json"),
    ]);
    let report: ReportFile = read_json(&d.join("report.json")).unwrap();
    let r = &report.reports[0];
    assert_eq!(r.trials.len(), 3);
    assert!(r.position_error.mean < 0.1);
    // Noise of 1 px per coordinate gives an RMS error of about 1 px.
    assert!((0.7..1.1).contains(&r.reprojection_error.mean), "{}", r.reprojection_error.mean);
    assert!((r.angular_error.mean - r.reprojection_error.mean * r.angular_resolution).abs() < 1e-12);
    assert!(r.runtime_ms.mean > 0.0);
}

#[test]
fn calibration_commands_recover_the_rig() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (rig, field, obs) = (path(d, "rig.json"), path(d, "field.json"), path(d, "correspondences.json"));
    ok(&["simulate", "extrinsics", "--out-dir", d.to_str().unwrap(), "--sigma", "0"]);
    ok(&["calibrate-extrinsics", "--rig", &rig, "--field", &field, "--obs", &obs, "--out", &path(d, "calibrated.json"), "--no-prior"]);
    let truth: RigFile = read_json(&d.join("rig.json")).unwrap();
    let calibrated: RigFile = read_json(&d.join("calibrated.json")).unwrap();
    assert!(calibrated.rms.is_some_and(|r| r < 1e-8));
    for (a, b) in calibrated.to_rig().unwrap().cameras.iter().zip(&truth.to_rig().unwrap().cameras) {
        let (angle, distance) = a.extrinsic.distance_to(&b.extrinsic);
        assert!(angle < 1e-9 && distance < 1e-7);
    }

    let intr = d.join("intr");
    ok(&["simulate", "intrinsics", "--out-dir", intr.to_str().unwrap(), "--camera", "3", "--sigma", "0"]);
    ok(&[
        "calibrate-intrinsics",
        "--field",
        &path(&intr, "field.json"),
        "--obs",
        &path(&intr, "correspondences.json"),
        "--eval-obs",
        &path(&intr, "evaluation.json"),
        "--out",
        &path(&intr, "intrinsics.json"),
    ]);
    let est: Value = serde_json::from_str(&std::fs::read_to_string(intr.join("intrinsics.json")).unwrap()).unwrap();
    let tru: Value = serde_json::from_str(&std::fs::read_to_string(intr.join("intrinsics-truth.json")).unwrap()).unwrap();
    assert_eq!(est["camera"], 3);
    for key in ["fx", "fy", "cx", "cy", "d"] {
        let (e, t) = (est["intrinsics"][key].as_f64().unwrap(), tru["intrinsics"][key].as_f64().unwrap());
        assert!(((e - t) / t).abs() < 1e-8, "{key}: {e} vs {t}");
    }
    assert!(est["rms_evaluation"].as_f64().unwrap() < 1e-6);
}

#[test]
fn domain_errors_exit_with_one_and_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = rigpose(&["solve-pose", "--rig", &path(d, "nope.json"), "--field", "f", "--obs", "o", "--out", "x"]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(error_record(&missing)["error"]["kind"], "io");

    std::fs::write(d.join("rig.json"), "{\n  \"schema_version\": 1,\n  \"reference\": [\n}").unwrap();
    let bad = rigpose(&["solve-pose", "--rig", &path(d, "rig.json"), "--field", "f", "--obs", "o", "--out", "x"]);
    assert_eq!(bad.status.code(), Some(1));
    let record = error_record(&bad);
    assert_eq!(record["error"]["kind"], "parse");
    assert_eq!(record["error"]["line"], 3);

    flight(d, 2, 1.0);
    let out = rigpose(&[
        "solve-pose",
        "--rig",
        &path(d, "rig.json"),
        "--field",
        &path(d, "field.json"),
        "--obs",
        &path(d, "correspondences.json"),
        "--out",
        &path(d, "p.json"),
        "--mask",
        "9",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"]["kind"], "evaluation");
}

#[test]
fn mixed_cameras_need_a_selection() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "extrinsics", "--out-dir", d.to_str().unwrap(), "--sessions", "2"]);
    let args =
        ["calibrate-intrinsics", "--field", &path(d, "field.json"), "--obs", &path(d, "correspondences.json"), "--out", &path(d, "i.json")];
    let out = rigpose(&args);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"]["kind"], "invalid_input");
}
