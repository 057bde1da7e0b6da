//! Pose accuracy metrics over simulated or surveyed trials.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraRig, GeneralizedObservation};
use crate::field::{CalibrationField, FieldError, ImageCorrespondences};
use crate::geometry::RigidTransform;
use crate::gpnp::{self, GpnpConfig, GpnpError};
use crate::simulator::{FlightScenario, SimulationError};

/// Arc-minutes per radian.
pub const ARCMIN_PER_RAD: f64 = 3437.75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("{estimated} estimated poses for {reference} reference poses")]
    LengthMismatch { estimated: usize, reference: usize },
    #[error("invalid camera mask `{0}`")]
    InvalidMask(String),
    #[error("camera {0} in the mask is not in the rig")]
    MaskOutOfRange(usize),
    #[error("trial {trial}: {source}")]
    Trial { trial: usize, source: Box<EvaluationError> },
    #[error(transparent)]
    Pose(#[from] GpnpError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

/// Active cameras, written as their digits (`"012"` or `"#012"`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConfigurationMask(Vec<usize>);

impl ConfigurationMask {
    pub fn new(mut cameras: Vec<usize>) -> Result<Self, EvaluationError> {
        cameras.sort_unstable();
        cameras.dedup();
        if cameras.is_empty() {
            return Err(EvaluationError::InvalidMask(String::new()));
        }
        Ok(Self(cameras))
    }

    pub fn all(count: usize) -> Self {
        Self((0..count).collect())
    }

    pub fn cameras(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, camera: usize) -> bool {
        self.0.binary_search(&camera).is_ok()
    }

    pub fn check(&self, rig: &CameraRig<f64>) -> Result<(), EvaluationError> {
        match self.0.iter().find(|&&c| c >= rig.len()) {
            Some(&c) => Err(EvaluationError::MaskOutOfRange(c)),
            None => Ok(()),
        }
    }
}

impl FromStr for ConfigurationMask {
    type Err = EvaluationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().trim_start_matches('#');
        let cameras = digits
            .chars()
            .map(|c| c.to_digit(10).map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| EvaluationError::InvalidMask(s.to_string()))?;
        Self::new(cameras).map_err(|_| EvaluationError::InvalidMask(s.to_string()))
    }
}

impl fmt::Display for ConfigurationMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#")?;
        self.0.iter().try_for_each(|c| write!(f, "{c}"))
    }
}

/// Ray observations of the images whose camera is in `mask`.
pub fn observations(
    rig: &CameraRig<f64>,
    field: &CalibrationField,
    images: &[ImageCorrespondences],
    mask: &ConfigurationMask,
) -> Result<Vec<GeneralizedObservation<f64>>, EvaluationError> {
    let mut out = Vec::new();
    for img in images.iter().filter(|i| mask.contains(i.camera)) {
        for p in &img.points {
            out.push(rig.observe(img.camera, &p.pixel, field.resolve(p.marker_id)?)?);
        }
    }
    Ok(out)
}

/// Per-coordinate RMS reprojection error of `rig_pose` over the images whose
/// camera is in `mask`.
pub fn reprojection_rms(
    rig: &CameraRig<f64>,
    field: &CalibrationField,
    images: &[ImageCorrespondences],
    mask: &ConfigurationMask,
    rig_pose: &RigidTransform<f64>,
) -> Result<f64, EvaluationError> {
    let (mut sum, mut count) = (0.0, 0usize);
    for img in images.iter().filter(|i| mask.contains(i.camera)) {
        for p in &img.points {
            let m = field.resolve(p.marker_id)?;
            let e = rig.project(img.camera, rig_pose, &m).map_or(Vector2::repeat(f64::INFINITY), |u| u - p.pixel);
            sum += e.norm_squared();
            count += 2;
        }
    }
    Ok((sum / count.max(1) as f64).sqrt())
}

/// Arc-minutes subtended by one pixel at focal length `f` pixels.
pub fn angular_resolution(f: f64) -> f64 {
    (1.0 / f).atan() * ARCMIN_PER_RAD
}

/// Mean focal length of the cameras in `mask`.
pub fn mean_focal(rig: &CameraRig<f64>, mask: &ConfigurationMask) -> f64 {
    let cams: Vec<_> = mask.cameras().iter().filter_map(|&c| rig.cameras.get(c)).collect();
    cams.iter().map(|c| c.intrinsics.focal()).sum::<f64>() / cams.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    /// Distance between estimated and reference positions, meters.
    pub position_error: f64,
    /// Reprojection error times angular resolution, arc-minutes.
    pub angular_error: f64,
    /// Per-coordinate RMS reprojection error, pixels.
    pub reprojection_error: f64,
    /// Time spent in the pose solver, milliseconds.
    pub runtime_ms: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: 0.0, std: 0.0, min: 0.0, max: 0.0 };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { mean, std, min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mask: String,
    /// Arc-minutes per pixel used for the angular error.
    pub angular_resolution: f64,
    pub trials: Vec<TrialMetrics>,
    pub position_error: Summary,
    pub angular_error: Summary,
    pub reprojection_error: Summary,
    pub runtime_ms: Summary,
}

impl EvaluationReport {
    pub fn from_trials(mask: &ConfigurationMask, angular_resolution: f64, trials: Vec<TrialMetrics>) -> Self {
        Self {
            mask: mask.to_string(),
            angular_resolution,
            position_error: Summary::of(trials.iter().map(|t| t.position_error)),
            angular_error: Summary::of(trials.iter().map(|t| t.angular_error)),
            reprojection_error: Summary::of(trials.iter().map(|t| t.reprojection_error)),
            runtime_ms: Summary::of(trials.iter().map(|t| t.runtime_ms)),
            trials,
        }
    }

    /// One row per trial, header first, LF line endings.
    pub fn to_csv(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            mask: &'a str,
            trial: usize,
            position_error_m: f64,
            angular_error_arcmin: f64,
            reprojection_error_px: f64,
            runtime_ms: f64,
            points: usize,
        }
        // Headers are written by hand so that an empty report still has one.
        let mut w = csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["mask", "trial", "position_error_m", "angular_error_arcmin", "reprojection_error_px", "runtime_ms", "points"])
            .expect("writing to memory cannot fail");
        for t in &self.trials {
            w.serialize(Row {
                mask: &self.mask,
                trial: t.trial,
                position_error_m: t.position_error,
                angular_error_arcmin: t.angular_error,
                reprojection_error_px: t.reprojection_error,
                runtime_ms: t.runtime_ms,
                points: t.points,
            })
            .expect("writing to memory cannot fail");
        }
        String::from_utf8(w.into_inner().expect("writing to memory cannot fail")).expect("CSV output is UTF-8")
    }
}

/// Metrics of estimated poses against reference poses. `reprojection` holds
/// the per-trial RMS reprojection error and `runtime_ms` the solver time.
pub fn evaluate(
    estimated: &[RigidTransform<f64>],
    reference: &[RigidTransform<f64>],
    reprojection: &[f64],
    runtime_ms: &[f64],
    angular_resolution: f64,
    mask: &ConfigurationMask,
) -> Result<EvaluationReport, EvaluationError> {
    let n = estimated.len();
    if reference.len() != n || reprojection.len() != n || runtime_ms.len() != n {
        return Err(EvaluationError::LengthMismatch { estimated: n, reference: reference.len() });
    }
    let trials = (0..n)
        .map(|i| TrialMetrics {
            trial: i,
            position_error: (estimated[i].center() - reference[i].center()).norm(),
            angular_error: reprojection[i] * angular_resolution,
            reprojection_error: reprojection[i],
            runtime_ms: runtime_ms[i],
            points: 0,
        })
        .collect();
    Ok(EvaluationReport::from_trials(mask, angular_resolution, trials))
}

/// Solves one set of images with the cameras in `mask` and scores it.
pub fn score_trial(
    rig: &CameraRig<f64>,
    field: &CalibrationField,
    images: &[ImageCorrespondences],
    reference: &RigidTransform<f64>,
    mask: &ConfigurationMask,
    config: &GpnpConfig,
    trial: usize,
) -> Result<(TrialMetrics, RigidTransform<f64>), EvaluationError> {
    let obs = observations(rig, field, images, mask)?;
    let start = Instant::now();
    let result = gpnp::solve_pose(&obs, config)?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let pose = result.best.pose();
    let rms = reprojection_rms(rig, field, images, mask, &pose)?;
    let metrics = TrialMetrics {
        trial,
        position_error: (pose.center() - reference.center()).norm(),
        angular_error: rms * angular_resolution(mean_focal(rig, mask)),
        reprojection_error: rms,
        runtime_ms,
        points: obs.len(),
    };
    Ok((metrics, pose))
}

/// Runs every trial of `scenario` with the cameras in `mask`, in parallel;
/// trials are reported in index order.
pub fn run_flight_trials(
    rig: &CameraRig<f64>,
    scenario: &FlightScenario,
    mask: &ConfigurationMask,
    config: &GpnpConfig,
) -> Result<EvaluationReport, EvaluationError> {
    mask.check(rig)?;
    let trials = (0..scenario.trials)
        .into_par_iter()
        .map(|i| {
            let wrap = |e: EvaluationError| EvaluationError::Trial { trial: i, source: Box::new(e) };
            let trial = scenario.trial(rig, i).map_err(|e| wrap(e.into()))?;
            score_trial(rig, &trial.field, &trial.images, &trial.pose, mask, config, i).map(|(m, _)| m).map_err(wrap)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvaluationReport::from_trials(mask, angular_resolution(mean_focal(rig, mask)), trials))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_parse_and_print() {
        let m: ConfigurationMask = "#012".parse().unwrap();
        assert_eq!(m.cameras(), &[0, 1, 2]);
        assert_eq!(m.to_string(), "#012");
        assert!("".parse::<ConfigurationMask>().is_err());
        assert!("0a".parse::<ConfigurationMask>().is_err());
    }

    #[test]
    fn angular_resolution_of_one_arcminute() {
        assert!((angular_resolution(3437.75) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn angular_error_scales_reprojection() {
        let pose = RigidTransform::identity();
        let mask = ConfigurationMask::all(5);
        let report = evaluate(&[pose], &[pose], &[4.112], &[0.0], 0.07855, &mask).unwrap();
        assert!((report.trials[0].angular_error - 0.323).abs() < 5e-4);
        assert_eq!(report.trials[0].position_error, 0.0);
        let mismatch = evaluate(&[pose], &[], &[4.112], &[0.0], 0.07855, &mask);
        assert!(matches!(mismatch, Err(EvaluationError::LengthMismatch { .. })));
    }
}
