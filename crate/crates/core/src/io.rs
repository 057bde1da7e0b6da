//! JSON file formats. Every document carries a `schema_version` and the
//! `seed` of the command that produced it. Rotations are unit quaternions
//! `[w, x, y, z]` with `w ≥ 0`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, CameraRig, RigCamera};
use crate::evaluation::EvaluationReport;
use crate::extrinsic::RotationSession;
use crate::field::{CalibrationField, ImageCorrespondences, MarkerObservation};
use crate::geometry::{RigidTransform, UnitQuaternion};
use crate::gpnp::PoseCandidate;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{path}: schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    SchemaVersion { path: String, found: u32 },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

/// Documents that carry a schema version.
pub trait Versioned {
    fn schema_version(&self) -> u32;
}

pub fn read_json<T: DeserializeOwned + Versioned>(path: &Path) -> Result<T, IoError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| IoError::Io { path: display.clone(), message: e.to_string() })?;
    let doc: T = serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: display.clone(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if doc.schema_version() != SCHEMA_VERSION {
        return Err(IoError::SchemaVersion { path: display, found: doc.schema_version() });
    }
    Ok(doc)
}

pub fn to_json<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents serialize");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let err = |e: std::io::Error| IoError::Io { path: path.display().to_string(), message: e.to_string() };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(err)?;
    }
    fs::write(path, text).map_err(err)
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<(), IoError> {
    write_text(path, &to_json(doc))
}

macro_rules! versioned {
    ($($t:ty),*) => {
        $(impl Versioned for $t {
            fn schema_version(&self) -> u32 {
                self.schema_version
            }
        })*
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&RigidTransform<f64>> for TransformRecord {
    fn from(t: &RigidTransform<f64>) -> Self {
        Self { rotation: UnitQuaternion::from_rotation(&t.rotation).to_array(), translation: t.translation.into() }
    }
}

impl From<&TransformRecord> for RigidTransform<f64> {
    fn from(r: &TransformRecord) -> Self {
        let [w, x, y, z] = r.rotation;
        RigidTransform::new(UnitQuaternion::new(w, x, y, z).to_rotation(), Vector3::from(r.translation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerRecord {
    pub id: u32,
    pub xyz: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFile {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub markers: Vec<MarkerRecord>,
}
versioned!(FieldFile);

impl FieldFile {
    pub fn new(field: &CalibrationField, seed: Option<u64>) -> Self {
        let markers = field.iter().map(|(id, p)| MarkerRecord { id, xyz: (*p).into() }).collect();
        Self { schema_version: SCHEMA_VERSION, seed, markers }
    }

    pub fn to_field(&self) -> Result<CalibrationField, String> {
        CalibrationField::new(self.markers.iter().map(|m| (m.id, Vector3::from(m.xyz)))).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub marker_id: u32,
    pub pixel: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub camera: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_prior: Option<[f64; 3]>,
    pub points: Vec<PointRecord>,
}

impl From<&ImageCorrespondences> for ImageRecord {
    fn from(i: &ImageCorrespondences) -> Self {
        Self {
            image_id: i.image_id.clone(),
            camera: i.camera,
            frame: i.frame,
            session: i.session,
            position_prior: i.position_prior.map(Into::into),
            points: i.points.iter().map(|p| PointRecord { marker_id: p.marker_id, pixel: p.pixel.into() }).collect(),
        }
    }
}

impl From<&ImageRecord> for ImageCorrespondences {
    fn from(r: &ImageRecord) -> Self {
        Self {
            image_id: r.image_id.clone(),
            camera: r.camera,
            frame: r.frame,
            session: r.session,
            position_prior: r.position_prior.map(Vector3::from),
            points: r.points.iter().map(|p| MarkerObservation { marker_id: p.marker_id, pixel: Vector2::from(p.pixel) }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceFile {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub images: Vec<ImageRecord>,
}
versioned!(CorrespondenceFile);

impl CorrespondenceFile {
    pub fn new(images: &[ImageCorrespondences], seed: Option<u64>) -> Self {
        Self { schema_version: SCHEMA_VERSION, seed, images: images.iter().map(Into::into).collect() }
    }

    pub fn images(&self) -> Vec<ImageCorrespondences> {
        self.images.iter().map(Into::into).collect()
    }

    /// Images grouped by flight frame; images without a frame form frame 0.
    pub fn frames(&self) -> BTreeMap<usize, Vec<ImageCorrespondences>> {
        let mut out: BTreeMap<usize, Vec<ImageCorrespondences>> = BTreeMap::new();
        for r in &self.images {
            out.entry(r.frame.unwrap_or(0)).or_default().push(r.into());
        }
        out
    }

    /// Images grouped into rotation sessions, in session order.
    pub fn sessions(&self) -> Result<Vec<RotationSession>, String> {
        let mut map: BTreeMap<usize, Vec<ImageCorrespondences>> = BTreeMap::new();
        for r in &self.images {
            let s = r.session.ok_or_else(|| format!("image `{}` has no session index", r.image_id))?;
            map.entry(s).or_default().push(r.into());
        }
        Ok(map.into_iter().map(|(index, images)| RotationSession { index, images }).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub d: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraIntrinsics<f64>> for IntrinsicsRecord {
    fn from(k: &CameraIntrinsics<f64>) -> Self {
        Self { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, d: k.d, width: k.width, height: k.height }
    }
}

impl From<&IntrinsicsRecord> for CameraIntrinsics<f64> {
    fn from(r: &IntrinsicsRecord) -> Self {
        Self { fx: r.fx, fy: r.fy, cx: r.cx, cy: r.cy, d: r.d, width: r.width, height: r.height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub intrinsics: IntrinsicsRecord,
    /// Camera→reference transform.
    pub extrinsic: TransformRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigFile {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub reference: usize,
    pub cameras: Vec<CameraRecord>,
    /// Per-coordinate RMS reprojection error of the calibration, pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms: Option<f64>,
}
versioned!(RigFile);

impl RigFile {
    pub fn new(rig: &CameraRig<f64>, seed: Option<u64>) -> Self {
        let cameras =
            rig.cameras.iter().map(|c| CameraRecord { intrinsics: (&c.intrinsics).into(), extrinsic: (&c.extrinsic).into() }).collect();
        Self { schema_version: SCHEMA_VERSION, seed, reference: rig.reference, cameras, rms: None }
    }

    pub fn to_rig(&self) -> Result<CameraRig<f64>, String> {
        let cameras =
            self.cameras.iter().map(|c| RigCamera { intrinsics: (&c.intrinsics).into(), extrinsic: (&c.extrinsic).into() }).collect();
        CameraRig::new(cameras, self.reference).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsFile {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub camera: usize,
    pub intrinsics: IntrinsicsRecord,
    /// World→camera pose of every calibration image, in input order.
    pub poses: Vec<TransformRecord>,
    pub rms_calibration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms_evaluation: Option<f64>,
    /// Spread of the per-image focal estimates used for initialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_std: Option<f64>,
}
versioned!(IntrinsicsFile);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub pose: TransformRecord,
    pub cost: f64,
    pub positive_depths: usize,
}

impl From<&PoseCandidate<f64>> for CandidateRecord {
    fn from(c: &PoseCandidate<f64>) -> Self {
        Self { pose: (&c.pose()).into(), cost: c.cost, positive_depths: c.positive_depths }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub frame: usize,
    /// World→reference pose.
    pub pose: TransformRecord,
    /// Reference camera centre in the world frame.
    pub position: [f64; 3],
    pub cost: f64,
    pub points: usize,
    pub candidates: Vec<CandidateRecord>,
    /// Solver time in milliseconds, present only when timing was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub poses: Vec<FramePose>,
}
versioned!(PoseFile);

/// Reference poses of simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema_version: u32,
    pub seed: Option<u64>,
    /// World→reference pose of every flight frame or rotation session.
    pub poses: BTreeMap<usize, TransformRecord>,
}
versioned!(TruthFile);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub reports: Vec<EvaluationReport>,
}
versioned!(ReportFile);

impl ReportFile {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, r) in self.reports.iter().enumerate() {
            let csv = r.to_csv();
            // Keep a single header row.
            out.push_str(if i == 0 { &csv } else { csv.split_once('\n').map_or("", |(_, rest)| rest) });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RotationMatrix;

    #[test]
    fn transform_record_is_normalized() {
        let t = RigidTransform::new(RotationMatrix::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 3.0), Vector3::new(1.0, 2.0, 3.0));
        let r = TransformRecord::from(&t);
        assert!(r.rotation[0] >= 0.0);
        let back = RigidTransform::from(&r);
        let (a, d) = back.distance_to(&t);
        assert!(a < 1e-14 && d == 0.0);
    }

    #[test]
    fn documents_round_trip_exactly() {
        let field = CalibrationField::new([(3, Vector3::new(0.1, 1e-17, 123456.789)), (7, Vector3::new(-1.0 / 3.0, 2.0, 5.0))]).unwrap();
        let file = FieldFile::new(&field, Some(9));
        let back: FieldFile = serde_json::from_str(&to_json(&file)).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_field().unwrap(), field);
    }
}
