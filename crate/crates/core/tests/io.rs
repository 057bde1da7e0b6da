use std::fs;

use proptest::prelude::*;
use rigpose::evaluation::{self, ConfigurationMask, EvaluationReport};
use rigpose::gpnp::GpnpConfig;
use rigpose::io::{self, CorrespondenceFile, FieldFile, IoError, ReportFile, RigFile, TransformRecord, TruthFile, SCHEMA_VERSION};
use rigpose::simulator::{make_dmais_rig, FlightScenario, RigPreset};
use serde::de::DeserializeOwned;
use serde::Serialize;

fn round_trip<T: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug>(doc: &T) {
    let back: T = serde_json::from_str(&io::to_json(doc)).unwrap();
    assert_eq!(&back, doc);
}

proptest! {
    #[test]
    fn transform_records_round_trip_bitwise(q in prop::array::uniform4(-1.0..1.0f64), t in prop::array::uniform3(-1e4..1e4f64)) {
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(n > 1e-3);
        let record = TransformRecord { rotation: q.map(|x| x / n), translation: t };
        let back: TransformRecord = serde_json::from_str(&serde_json::to_string(&record).unwrap()).unwrap();
        prop_assert_eq!(back, record);
    }
}

#[test]
fn simulated_documents_round_trip() {
    let rig = make_dmais_rig(&RigPreset::dmais()).unwrap();
    let trial = FlightScenario::default().trial(&rig, 0).unwrap();
    let rig_file = RigFile::new(&rig, Some(9));
    round_trip(&rig_file);
    round_trip(&FieldFile::new(&trial.field, Some(9)));
    round_trip(&CorrespondenceFile::new(&trial.images, Some(9)));
    round_trip(&TruthFile { schema_version: SCHEMA_VERSION, seed: Some(9), poses: [(0, (&trial.pose).into())].into() });
    let mask = ConfigurationMask::all(rig.len());
    let report =
        evaluation::run_flight_trials(&rig, &FlightScenario { trials: 2, ..Default::default() }, &mask, &GpnpConfig::default()).unwrap();
    round_trip(&ReportFile { schema_version: SCHEMA_VERSION, seed: Some(9), reports: vec![report] });

    // Converting back to the in-memory rig loses at most rounding.
    let back = rig_file.to_rig().unwrap();
    for (a, b) in back.cameras.iter().zip(&rig.cameras) {
        assert_eq!(a.intrinsics, b.intrinsics);
        let (angle, distance) = a.extrinsic.distance_to(&b.extrinsic);
        assert!(angle < 1e-12 && distance < 1e-12);
    }
    let field = FieldFile::new(&trial.field, None).to_field().unwrap();
    assert_eq!(field, trial.field);
    assert_eq!(CorrespondenceFile::new(&trial.images, None).images(), trial.images);
}

#[test]
fn parse_errors_carry_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.json");
    fs::write(&path, "{\n  \"schema_version\": 1,\n  \"markers\": [ oops ]\n}\n").unwrap();
    match io::read_json::<FieldFile>(&path) {
        Err(IoError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 16)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.json");
    fs::write(&path, r#"{"schema_version": 2, "seed": null, "markers": []}"#).unwrap();
    assert!(matches!(io::read_json::<FieldFile>(&path), Err(IoError::SchemaVersion { found: 2, .. })));
}

#[test]
fn duplicate_marker_ids_are_invalid() {
    let json = r#"{"schema_version": 1, "seed": null, "markers": [{"id": 1, "xyz": [0, 0, 0]}, {"id": 1, "xyz": [1, 0, 0]}]}"#;
    let file: FieldFile = serde_json::from_str(json).unwrap();
    assert!(file.to_field().is_err());
}

#[test]
fn csv_report_has_one_header_and_lf_endings() {
    let mask: ConfigurationMask = "01".parse().unwrap();
    let report = |m: &ConfigurationMask| EvaluationReport::from_trials(m, 0.1, vec![]);
    let file = ReportFile { schema_version: SCHEMA_VERSION, seed: None, reports: vec![report(&mask), report(&ConfigurationMask::all(5))] };
    let csv = file.to_csv();
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().filter(|l| l.starts_with("mask,")).count(), 1);
}
