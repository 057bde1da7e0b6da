//! Synthetic ground truth: rig presets, control fields, rotation stations
//! for extrinsic calibration, calibration images and flight scenarios.
//!
//! Every generator takes an explicit RNG; trials of a scenario use their
//! own ChaCha stream so that they can run in parallel and still be
//! reproducible.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, CameraRig, GeneralizedObservation, RigCamera};
use crate::extrinsic::RotationSession;
use crate::field::{CalibrationField, ImageCorrespondences, MarkerObservation};
use crate::geometry::{RigidTransform, RotationMatrix, UnitQuaternion};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("no control point is visible")]
    NothingVisible,
    #[error("invalid simulation parameters: {0}")]
    InvalidParameters(String),
}

/// The RNG every generator is driven by, seeded deterministically.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Physical description of a divergent rig: one reference camera looking
/// along its own axis and the others tilted around it.
#[derive(Debug, Clone, PartialEq)]
pub struct RigPreset {
    pub focal_mm: f64,
    pub pixel_pitch_um: f64,
    pub width: u32,
    pub height: u32,
    pub tilt_deg: f64,
    /// Azimuth of each tilted camera's tilt direction around the reference
    /// optical axis, degrees. The reference camera is not listed.
    pub azimuths_deg: Vec<f64>,
    /// Camera centre of each tilted camera in the reference frame, meters.
    pub baselines: Vec<Vector3<f64>>,
    /// Per-camera `(fx, fy, cx, cy, d)`, reference first. `None` uses the
    /// nominal focal, centred principal point and no distortion.
    pub intrinsics: Option<Vec<[f64; 5]>>,
}

impl RigPreset {
    /// Five 150 mm cameras with 3.45 µm pixels on 4096 × 3000 sensors, the
    /// four outer ones tilted 45° forward, backward, left and right.
    pub fn dmais() -> Self {
        Self {
            focal_mm: 150.0,
            pixel_pitch_um: 3.45,
            width: 4096,
            height: 3000,
            tilt_deg: 45.0,
            azimuths_deg: vec![180.0, -90.0, 0.0, 90.0],
            baselines: vec![
                Vector3::new(-0.002, 0.102, -0.086),
                Vector3::new(-0.113, -0.012, -0.100),
                Vector3::new(0.000, -0.143, -0.097),
                Vector3::new(0.122, -0.010, -0.100),
            ],
            intrinsics: Some(vec![
                [45553.0, 45569.7, 2047.7, 1500.0, 3.0715],
                [44922.5, 44963.4, 2048.1, 1498.9, 2.0227],
                [44440.4, 44411.0, 2048.3, 1500.7, 2.2361],
                [43737.5, 43655.6, 2047.6, 1501.2, 2.2207],
                [44660.0, 44620.9, 2048.2, 1500.6, 1.8864],
            ]),
        }
    }

    /// The same geometry with ideal, identical cameras.
    pub fn dmais_nominal() -> Self {
        Self { intrinsics: None, ..Self::dmais() }
    }

    pub fn camera_count(&self) -> usize {
        self.azimuths_deg.len() + 1
    }

    pub fn focal_px(&self) -> f64 {
        self.focal_mm * 1e3 / self.pixel_pitch_um
    }

    /// Horizontal and vertical field of view of one nominal camera, degrees.
    pub fn fov_deg(&self) -> (f64, f64) {
        let f = self.focal_px();
        let fov = |n: u32| 2.0 * (n as f64 / 2.0 / f).atan().to_degrees();
        (fov(self.width), fov(self.height))
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.azimuths_deg.len() != self.baselines.len() {
            return Err(SimulationError::InvalidParameters("one baseline per tilted camera is required".into()));
        }
        if let Some(k) = &self.intrinsics {
            if k.len() != self.camera_count() {
                return Err(SimulationError::InvalidParameters("one intrinsics entry per camera is required".into()));
            }
        }
        if !(self.focal_mm > 0.0 && self.pixel_pitch_um > 0.0 && self.width > 0 && self.height > 0) {
            return Err(SimulationError::InvalidParameters("focal, pitch and image size must be positive".into()));
        }
        Ok(())
    }
}

fn rot_x(deg: f64) -> RotationMatrix<f64> {
    RotationMatrix::from_axis_angle(&Vector3::x(), deg.to_radians())
}

fn rot_z(deg: f64) -> RotationMatrix<f64> {
    RotationMatrix::from_axis_angle(&Vector3::z(), deg.to_radians())
}

/// Builds the rig described by `preset`; camera 0 is the reference.
pub fn make_dmais_rig(preset: &RigPreset) -> Result<CameraRig<f64>, SimulationError> {
    preset.validate()?;
    let intrinsics = |i: usize| match &preset.intrinsics {
        Some(k) => {
            let [fx, fy, cx, cy, d] = k[i];
            CameraIntrinsics { fx, fy, cx, cy, d, width: preset.width, height: preset.height }
        }
        None => CameraIntrinsics::centered(preset.focal_px(), preset.width, preset.height),
    };
    let mut cameras = vec![RigCamera { intrinsics: intrinsics(0), extrinsic: RigidTransform::identity() }];
    for (i, (az, baseline)) in preset.azimuths_deg.iter().zip(&preset.baselines).enumerate() {
        let rotation = rot_z(*az) * rot_x(preset.tilt_deg);
        cameras.push(RigCamera { intrinsics: intrinsics(i + 1), extrinsic: RigidTransform::new(rotation, *baseline) });
    }
    CameraRig::new(cameras, 0).map_err(|e| SimulationError::InvalidParameters(e.to_string()))
}

/// Pixel noise applied to every emitted observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Standard deviation of the Gaussian noise per pixel coordinate.
    pub sigma: f64,
    /// Probability that a visible marker is not reported.
    pub dropout: f64,
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Self {
        Self { sigma, dropout: 0.0 }
    }

    pub fn none() -> Self {
        Self::gaussian(0.0)
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !(0.0..=1.0).contains(&self.dropout) {
            return Err(SimulationError::InvalidParameters("noise sigma must be ≥ 0 and dropout in [0, 1]".into()));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vector2<f64> {
        if self.sigma == 0.0 {
            return Vector2::zeros();
        }
        let normal = Normal::new(0.0, self.sigma).expect("sigma was validated");
        Vector2::new(normal.sample(rng), normal.sample(rng))
    }
}

/// Observation of `point` by a camera with world→camera `pose`, if it lands
/// inside the image both before and after noise.
fn observe_point<R: Rng>(
    intr: &CameraIntrinsics<f64>,
    pose: &RigidTransform<f64>,
    point: &Vector3<f64>,
    noise: &NoiseModel,
    rng: &mut R,
) -> Option<Vector2<f64>> {
    let exact = intr.project_point(&pose.apply(point)).ok()?;
    if !intr.contains(&exact) {
        return None;
    }
    let noisy = exact + noise.sample(rng);
    if noise.dropout > 0.0 && rng.random::<f64>() < noise.dropout {
        return None;
    }
    intr.contains(&noisy).then_some(noisy)
}

/// Correspondences of every camera in `cameras` that sees at least one
/// marker. Images are named `{prefix}c{camera}`.
pub fn synthesize_views<R: Rng>(
    rig: &CameraRig<f64>,
    cameras: &[usize],
    field: &CalibrationField,
    rig_pose: &RigidTransform<f64>,
    noise: &NoiseModel,
    prefix: &str,
    rng: &mut R,
) -> Result<Vec<ImageCorrespondences>, SimulationError> {
    noise.validate()?;
    let mut images = Vec::new();
    for &c in cameras {
        let cam = rig.camera(c).map_err(|e| SimulationError::InvalidParameters(e.to_string()))?;
        let pose = cam.extrinsic.inverse().compose(rig_pose);
        let points: Vec<MarkerObservation> = field
            .iter()
            .filter_map(|(id, m)| {
                observe_point(&cam.intrinsics, &pose, m, noise, rng).map(|pixel| MarkerObservation { marker_id: id, pixel })
            })
            .collect();
        if !points.is_empty() {
            images.push(ImageCorrespondences::new(format!("{prefix}c{c}"), c, points));
        }
    }
    if images.is_empty() {
        return Err(SimulationError::NothingVisible);
    }
    Ok(images)
}

/// A box of control points in front of the calibration station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldArea {
    /// Direction from the station, degrees from the forward axis towards
    /// the right.
    pub azimuth_deg: f64,
    /// Horizontal distance from the station to the box centre, meters.
    pub distance: f64,
    /// Extent across the viewing direction, meters.
    pub width: f64,
    /// Extent along the viewing direction, meters.
    pub depth: f64,
    pub count: usize,
}

/// Layout of the calibration field. The station is at the origin, looking
/// along `+y`, with `z` up.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub areas: Vec<FieldArea>,
    /// Marker heights above ground, meters.
    pub height_range: (f64, f64),
}

impl Default for FieldSpec {
    /// Three areas, straight ahead and 45° to either side, which is where
    /// the reference camera and the two horizontal tilted cameras look.
    fn default() -> Self {
        let area = |azimuth_deg| FieldArea { azimuth_deg, distance: 140.0, width: 10.0, depth: 30.0, count: 60 };
        Self { areas: vec![area(0.0), area(-45.0), area(45.0)], height_range: (2.0, 10.0) }
    }
}

/// Samples marker positions uniformly inside every area box.
pub fn make_field<R: Rng>(spec: &FieldSpec, rng: &mut R) -> Result<CalibrationField, SimulationError> {
    let (lo, hi) = spec.height_range;
    if spec.areas.iter().any(|a| a.count < 6) || !(hi > lo) {
        return Err(SimulationError::InvalidParameters("each area needs ≥ 6 markers and a non-empty height range".into()));
    }
    let mut points = Vec::new();
    for area in &spec.areas {
        let (s, c) = area.azimuth_deg.to_radians().sin_cos();
        let forward = Vector3::new(s, c, 0.0);
        let across = Vector3::new(c, -s, 0.0);
        for _ in 0..area.count {
            let along = area.distance + area.depth * (rng.random::<f64>() - 0.5);
            let side = area.width * (rng.random::<f64>() - 0.5);
            let mut p = forward * along + across * side;
            p.z = rng.random_range(lo..hi);
            points.push(p);
        }
    }
    let field = CalibrationField::new(points.into_iter().enumerate().map(|(i, p)| (i as u32, p)))
        .map_err(|e| SimulationError::InvalidParameters(e.to_string()))?;
    field.validate().map_err(|e| SimulationError::InvalidParameters(e.to_string()))?;
    Ok(field)
}

/// Height of the calibration station above ground, meters.
pub const STATION_HEIGHT: f64 = 6.0;

/// World→reference pose of the station with the reference camera looking
/// along `+y`, rolled by `roll_deg` about its optical axis.
pub fn station_pose(roll_deg: f64) -> RigidTransform<f64> {
    // Rows are the camera axes in world coordinates: x right, y down, z forward.
    let level = RotationMatrix::from_matrix_unchecked(Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0));
    let rotation = rot_z(roll_deg) * level;
    let center = Vector3::new(0.0, 0.0, STATION_HEIGHT);
    RigidTransform::new(rotation, -(rotation.matrix() * center))
}

/// Uniformly random rotation axis with an angle uniform in `[0, max_deg]`.
fn random_rotation<R: Rng>(rng: &mut R, max_deg: f64) -> RotationMatrix<f64> {
    if max_deg <= 0.0 {
        return RotationMatrix::identity();
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let axis = Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
    RotationMatrix::from_axis_angle(&axis, rng.random_range(0.0..max_deg).to_radians())
}

/// Rotation stations with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSessions {
    pub sessions: Vec<RotationSession>,
    /// True world→reference pose at every station.
    pub rig_poses: Vec<RigidTransform<f64>>,
}

/// `k` stations rolled by `90°·j` about the reference optical axis, each
/// disturbed by a random rotation of at most `perturbation_deg` about the
/// reference camera centre. Every image carries the true camera centre as
/// its position prior. Stations where the reference camera sees nothing are
/// an error, since the pipeline needs it at every station.
pub fn simulate_rotation_sessions<R: Rng>(
    rig: &CameraRig<f64>,
    field: &CalibrationField,
    k: usize,
    perturbation_deg: f64,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<SimulatedSessions, SimulationError> {
    if k < 2 {
        return Err(SimulationError::InvalidParameters("at least two stations are required".into()));
    }
    let cameras: Vec<usize> = (0..rig.len()).collect();
    let mut sessions = Vec::with_capacity(k);
    let mut rig_poses = Vec::with_capacity(k);
    for j in 0..k {
        let nominal = station_pose(90.0 * j as f64);
        let center = nominal.center();
        let rotation = random_rotation(rng, perturbation_deg) * nominal.rotation;
        let pose = RigidTransform::new(rotation, -(rotation.matrix() * center));
        let mut images = synthesize_views(rig, &cameras, field, &pose, noise, &format!("s{j}"), rng)?;
        if !images.iter().any(|i| i.camera == rig.reference) {
            return Err(SimulationError::NothingVisible);
        }
        images.retain(|i| i.points.len() >= 6);
        for img in &mut images {
            img.session = Some(j);
            img.position_prior = Some(rig.camera_pose(img.camera, &pose).expect("camera index is valid").center());
        }
        sessions.push(RotationSession { index: j, images });
        rig_poses.push(pose);
    }
    Ok(SimulatedSessions { sessions, rig_poses })
}

/// World→camera pose at `center` looking at `target`, rolled by `roll_deg`.
pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>, roll_deg: f64) -> RigidTransform<f64> {
    let z = (target - center).normalize();
    let up = if z.z.abs() > 0.9 { Vector3::y() } else { Vector3::z() };
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let level = RotationMatrix::from_matrix_unchecked(Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]));
    let rotation = rot_z(roll_deg) * level;
    RigidTransform::new(rotation, -(rotation.matrix() * center))
}

/// Calibration images of one camera with their true poses.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedImages {
    pub images: Vec<ImageCorrespondences>,
    pub poses: Vec<RigidTransform<f64>>,
}

/// `count` images of a single camera placed near the station and aimed at
/// random field markers, with random roll, keeping at most
/// `points_per_image` visible markers per image (at least six).
pub fn simulate_calibration_images<R: Rng>(
    intrinsics: &CameraIntrinsics<f64>,
    camera: usize,
    field: &CalibrationField,
    count: usize,
    points_per_image: usize,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<SimulatedImages, SimulationError> {
    noise.validate()?;
    if points_per_image < 6 {
        return Err(SimulationError::InvalidParameters("at least six points per image are required".into()));
    }
    let markers: Vec<Vector3<f64>> = field.iter().map(|(_, p)| *p).collect();
    if markers.is_empty() {
        return Err(SimulationError::NothingVisible);
    }
    let mut out = SimulatedImages { images: Vec::new(), poses: Vec::new() };
    let mut attempts = 0;
    while out.images.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(SimulationError::NothingVisible);
        }
        let center = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), STATION_HEIGHT + rng.random_range(-0.5..0.5));
        let target = markers[rng.random_range(0..markers.len())];
        let pose = look_at(&center, &target, rng.random_range(0.0..360.0));
        let mut points: Vec<MarkerObservation> = field
            .iter()
            .filter_map(|(id, m)| observe_point(intrinsics, &pose, m, noise, rng).map(|pixel| MarkerObservation { marker_id: id, pixel }))
            .collect();
        if points.len() < points_per_image.min(field.len()) {
            continue;
        }
        // Keep a random subset, in id order.
        while points.len() > points_per_image {
            points.swap_remove(rng.random_range(0..points.len()));
        }
        points.sort_by_key(|p| p.marker_id);
        let mut img = ImageCorrespondences::new(format!("c{camera}i{}", out.images.len()), camera, points);
        img.position_prior = Some(center);
        out.images.push(img);
        out.poses.push(pose);
    }
    Ok(out)
}

/// How ground markers are laid out under the flight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarkerLayout {
    /// A regular grid over the whole rig footprint, with `spacing` meters
    /// between markers and heights uniform in `[0, relief]`.
    Grid { spacing: f64, relief: f64 },
    /// `count` markers per camera at uniformly random pixels, placed on the
    /// ground at a height uniform in `[0, relief]`.
    PerCamera { count: usize, relief: f64 },
}

/// One simulated hover: the rig above a marker field.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightScenario {
    pub altitude: f64,
    pub layout: MarkerLayout,
    pub noise: NoiseModel,
    /// Maximum tilt of the reference axis away from nadir, degrees.
    pub max_tilt_deg: f64,
    /// Maximum horizontal offset from the origin, meters.
    pub max_offset: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for FlightScenario {
    fn default() -> Self {
        Self {
            altitude: 350.0,
            layout: MarkerLayout::Grid { spacing: 12.0, relief: 1.0 },
            noise: NoiseModel::gaussian(1.0),
            max_tilt_deg: 2.0,
            max_offset: 50.0,
            trials: 100,
            seed: 0,
        }
    }
}

/// One trial of a flight scenario with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightTrial {
    pub index: usize,
    pub field: CalibrationField,
    pub images: Vec<ImageCorrespondences>,
    /// True world→reference pose.
    pub pose: RigidTransform<f64>,
}

/// Where the ray through pixel `p` of camera `index` meets the plane
/// `z = height`, if it does so in front of the camera.
fn ground_point(rig: &CameraRig<f64>, index: usize, rig_pose: &RigidTransform<f64>, p: &Vector2<f64>, height: f64) -> Option<Vector3<f64>> {
    let cam = rig.camera(index).ok()?;
    let pose = cam.extrinsic.inverse().compose(rig_pose);
    let und = cam.intrinsics.undistort_pixel(p).ok()?;
    let dir = pose.rotation.matrix().transpose() * cam.intrinsics.normalized_direction(&und);
    let c = pose.center();
    let s = (height - c.z) / dir.z;
    (s > 0.0).then(|| c + dir * s)
}

impl FlightScenario {
    pub fn validate(&self) -> Result<(), SimulationError> {
        self.noise.validate()?;
        let ok = match self.layout {
            MarkerLayout::Grid { spacing, relief } => spacing > 0.0 && relief >= 0.0,
            MarkerLayout::PerCamera { count, relief } => count > 0 && relief >= 0.0,
        };
        if !ok || !(self.altitude > 0.0) {
            return Err(SimulationError::InvalidParameters("altitude, spacing and count must be positive".into()));
        }
        Ok(())
    }

    /// RNG of trial `index`: the scenario seed with the trial as stream.
    pub fn trial_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = seeded_rng(self.seed);
        rng.set_stream(index as u64);
        rng
    }

    /// True world→reference pose of trial `index`: nadir-looking reference
    /// camera with random heading, small tilt and horizontal offset.
    fn sample_pose<R: Rng>(&self, rng: &mut R) -> RigidTransform<f64> {
        let heading = rng.random_range(0.0..360.0);
        let tilt = random_rotation(rng, self.max_tilt_deg);
        // Camera→world: heading about the vertical, then the camera flipped
        // to look down (x stays x, y and z reverse).
        let cam_to_world = *tilt.matrix() * rot_z(heading).matrix() * rot_x(180.0).matrix();
        let rotation = RotationMatrix::from_matrix_unchecked(cam_to_world.transpose());
        let center = Vector3::new(
            rng.random_range(-self.max_offset..=self.max_offset),
            rng.random_range(-self.max_offset..=self.max_offset),
            self.altitude,
        );
        RigidTransform::new(rotation, -(rotation.matrix() * center))
    }

    pub fn trial(&self, rig: &CameraRig<f64>, index: usize) -> Result<FlightTrial, SimulationError> {
        self.validate()?;
        let mut rng = self.trial_rng(index);
        let pose = self.sample_pose(&mut rng);
        let points = match self.layout {
            MarkerLayout::Grid { spacing, relief } => self.grid_markers(rig, &pose, spacing, relief, &mut rng),
            MarkerLayout::PerCamera { count, relief } => {
                let mut pts = Vec::new();
                for c in 0..rig.len() {
                    let intr = rig.cameras[c].intrinsics;
                    let mut placed = 0;
                    let mut tries = 0;
                    while placed < count && tries < 100 * count {
                        tries += 1;
                        let p = Vector2::new(rng.random_range(0.0..intr.width as f64), rng.random_range(0.0..intr.height as f64));
                        let h = rng.random_range(0.0..=relief);
                        if let Some(g) = ground_point(rig, c, &pose, &p, h) {
                            pts.push(g);
                            placed += 1;
                        }
                    }
                }
                pts
            }
        };
        let field = CalibrationField::new(points.into_iter().enumerate().map(|(i, p)| (i as u32, p)))
            .map_err(|e| SimulationError::InvalidParameters(e.to_string()))?;
        let cameras: Vec<usize> = (0..rig.len()).collect();
        let images = synthesize_views(rig, &cameras, &field, &pose, &self.noise, &format!("t{index}"), &mut rng)?;
        Ok(FlightTrial { index, field, images, pose })
    }

    /// Grid nodes inside the union of all camera footprints.
    fn grid_markers<R: Rng>(
        &self,
        rig: &CameraRig<f64>,
        pose: &RigidTransform<f64>,
        spacing: f64,
        relief: f64,
        rng: &mut R,
    ) -> Vec<Vector3<f64>> {
        let mut points = Vec::new();
        for c in 0..rig.len() {
            let intr = rig.cameras[c].intrinsics;
            let (w, h) = (intr.width as f64, intr.height as f64);
            let corners = [Vector2::new(0.0, 0.0), Vector2::new(w, 0.0), Vector2::new(0.0, h), Vector2::new(w, h)];
            let ground: Vec<Vector3<f64>> = corners.iter().filter_map(|p| ground_point(rig, c, pose, p, 0.0)).collect();
            if ground.len() < 4 {
                continue;
            }
            let (x0, x1) = ground.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), g| (a.min(g.x), b.max(g.x)));
            let (y0, y1) = ground.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), g| (a.min(g.y), b.max(g.y)));
            let cam_pose = rig.camera_pose(c, pose).expect("camera index is valid");
            for i in (x0 / spacing).floor() as i64..=(x1 / spacing).ceil() as i64 {
                for j in (y0 / spacing).floor() as i64..=(y1 / spacing).ceil() as i64 {
                    let p = Vector3::new(i as f64 * spacing, j as f64 * spacing, 0.0);
                    if intr.project_point(&cam_pose.apply(&p)).is_ok_and(|u| intr.contains(&u)) {
                        points.push(p);
                    }
                }
            }
        }
        // A node can fall in two footprints; keep it once.
        points.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        points.dedup();
        for p in &mut points {
            p.z = rng.random_range(0.0..=relief);
        }
        points
    }
}

/// A random absolute-pose problem whose points are all visible.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseInstance {
    /// True world→reference pose.
    pub pose: RigidTransform<f64>,
    pub observations: Vec<GeneralizedObservation<f64>>,
    /// Observed (possibly noisy) pixels, with their cameras.
    pub pixels: Vec<(usize, Vector2<f64>)>,
}

/// Haar-uniform random rotation.
pub fn uniform_rotation<R: Rng>(rng: &mut R) -> RotationMatrix<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let q = UnitQuaternion::new(normal.sample(rng), normal.sample(rng), normal.sample(rng), normal.sample(rng));
    q.to_rotation()
}

/// `n` points seen by uniformly chosen cameras of `rig` at uniformly random
/// pixels and depths in `depth_range`, under a random pose. Noise perturbs
/// the observed pixels, not the world points.
pub fn random_pose_instance<R: Rng>(
    rig: &CameraRig<f64>,
    n: usize,
    depth_range: (f64, f64),
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<PoseInstance, SimulationError> {
    noise.validate()?;
    if !(depth_range.0 > 0.0 && depth_range.1 > depth_range.0) {
        return Err(SimulationError::InvalidParameters("depth range must be positive and non-empty".into()));
    }
    let pose = RigidTransform::new(
        uniform_rotation(rng),
        Vector3::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)),
    );
    let mut observations = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n);
    while observations.len() < n {
        let c = rng.random_range(0..rig.len());
        let cam = &rig.cameras[c];
        let intr = &cam.intrinsics;
        let p = Vector2::new(rng.random_range(0.0..intr.width as f64), rng.random_range(0.0..intr.height as f64));
        let Ok(und) = intr.undistort_pixel(&p) else { continue };
        let pc = intr.normalized_direction(&und) * rng.random_range(depth_range.0..depth_range.1);
        let world = rig.camera_pose(c, &pose).expect("camera index is valid").inverse().apply(&pc);
        let noisy = p + noise.sample(rng);
        let Ok(obs) = rig.observe(c, &noisy, world) else { continue };
        observations.push(obs);
        pixels.push((c, noisy));
    }
    Ok(PoseInstance { pose, observations, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_field_of_view() {
        let (h, v) = RigPreset::dmais().fov_deg();
        assert!((h - 5.4).abs() < 0.05, "{h}");
        assert!((v - 4.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn station_pose_looks_forward() {
        let pose = station_pose(0.0);
        let axis = pose.rotation.matrix().transpose() * Vector3::z();
        assert!((axis - Vector3::y()).norm() < 1e-15);
        assert!((pose.center() - Vector3::new(0.0, 0.0, STATION_HEIGHT)).norm() < 1e-12);
    }
}
