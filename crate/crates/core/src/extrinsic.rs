//! Rig extrinsic calibration by rotating the rig in front of a control
//! field: per-image localization, per-station relative transforms, their
//! average, and a joint refinement of all station poses and extrinsics.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{CameraError, CameraIntrinsics};
use crate::dlt::{self, DltError};
use crate::field::{CalibrationField, FieldError, ImageCorrespondences};
use crate::geometry::{average_transforms, skew, RigidTransform};
use crate::nlls::{self, LeastSquaresProblem, NlsError, ParamBlock, Parameters, SolverConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtrinsicError {
    #[error("session {session} has no image from the reference camera")]
    MissingReference { session: usize },
    #[error("camera {0} is never observed")]
    CameraNeverObserved(usize),
    #[error("camera {0} has no intrinsics")]
    UnknownCamera(usize),
    #[error("need at least {required} correspondences, got {got}")]
    TooFewPoints { got: usize, required: usize },
    #[error("degenerate configuration (condition number {condition:.3e})")]
    Degenerate { condition: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Solver(#[from] NlsError),
}

impl From<DltError> for ExtrinsicError {
    fn from(e: DltError) -> Self {
        match e {
            DltError::TooFewPoints { got, required } => Self::TooFewPoints { got, required },
            DltError::Degenerate { condition } => Self::Degenerate { condition },
            DltError::Camera(e) => Self::Camera(e),
            DltError::Solver(e) => Self::Solver(e),
        }
    }
}

/// Images taken at one rotation station of the rig.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSession {
    pub index: usize,
    pub images: Vec<ImageCorrespondences>,
}

impl RotationSession {
    pub fn image_of(&self, camera: usize) -> Option<&ImageCorrespondences> {
        self.images.iter().find(|i| i.camera == camera)
    }
}

/// How surveyed camera positions are used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    pub enabled: bool,
    /// Standard deviation of the position prior, meters.
    pub sigma: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { enabled: true, sigma: 0.1 }
    }
}

impl PriorConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    fn for_image(&self, obs: &ImageCorrespondences) -> Option<(Vector3<f64>, f64)> {
        if self.enabled {
            obs.position_prior.map(|c| (c, self.sigma))
        } else {
            None
        }
    }
}

/// World→camera pose of one image with known intrinsics.
pub fn localize_image(
    field: &CalibrationField,
    obs: &ImageCorrespondences,
    intrinsics: &CameraIntrinsics<f64>,
    prior: &PriorConfig,
) -> Result<RigidTransform<f64>, ExtrinsicError> {
    let (world, pixels) = obs.resolve(field)?;
    let (pose, _) = dlt::localize(intrinsics, &world, &pixels, prior.for_image(obs))?;
    Ok(pose)
}

/// `T_Ci = P_0 · P_i⁻¹` for every camera localized at one station.
pub fn session_relative_transforms(
    poses: &BTreeMap<usize, RigidTransform<f64>>,
    reference: usize,
    session: usize,
) -> Result<BTreeMap<usize, RigidTransform<f64>>, ExtrinsicError> {
    let p0 = poses.get(&reference).ok_or(ExtrinsicError::MissingReference { session })?;
    Ok(poses.iter().map(|(&i, pi)| (i, p0.compose(&pi.inverse()))).collect())
}

/// Average of each camera's relative transforms over all stations.
pub fn initial_extrinsics(
    relative: &[BTreeMap<usize, RigidTransform<f64>>],
    camera_count: usize,
    reference: usize,
) -> Result<Vec<RigidTransform<f64>>, ExtrinsicError> {
    (0..camera_count)
        .map(|i| {
            if i == reference {
                return Ok(RigidTransform::identity());
            }
            let samples: Vec<_> = relative.iter().filter_map(|m| m.get(&i).copied()).collect();
            average_transforms(&samples).map_err(|_| ExtrinsicError::CameraNeverObserved(i))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrinsicSolution {
    /// Camera→reference transform of every camera; the reference is identity.
    pub extrinsics: Vec<RigidTransform<f64>>,
    /// World→reference pose at every station.
    pub session_poses: Vec<RigidTransform<f64>>,
    /// Per-coordinate RMS reprojection error, pixels.
    pub rms: f64,
}

struct ResolvedImage {
    session: usize,
    camera: usize,
    world: Vec<Vector3<f64>>,
    pixels: Vec<Vector2<f64>>,
    prior: Option<(Vector3<f64>, f64)>,
}

fn resolve(field: &CalibrationField, sessions: &[RotationSession], prior: &PriorConfig) -> Result<Vec<ResolvedImage>, ExtrinsicError> {
    let mut out = Vec::new();
    for (s, session) in sessions.iter().enumerate() {
        for obs in &session.images {
            let (world, pixels) = obs.resolve(field)?;
            out.push(ResolvedImage { session: s, camera: obs.camera, world, pixels, prior: prior.for_image(obs) });
        }
    }
    Ok(out)
}

/// Station poses and extrinsics of the non-reference cameras. Each camera is
/// stored as `U_i = T_Ci⁻¹` so that its pose is `U_i ∘ P_0`.
struct JointProblem<'a> {
    images: &'a [ResolvedImage],
    intrinsics: &'a [CameraIntrinsics<f64>],
    sessions: usize,
    reference: usize,
    /// Parameter block index of each camera's `U`, `None` for the reference.
    camera_block: Vec<Option<usize>>,
}

impl JointProblem<'_> {
    fn session_pose(&self, p: &Parameters<f64>, s: usize) -> RigidTransform<f64> {
        let t = p.euclidean(2 * s + 1);
        RigidTransform::new(*p.rotation(2 * s), Vector3::new(t[0], t[1], t[2]))
    }

    fn camera_u(&self, p: &Parameters<f64>, camera: usize) -> RigidTransform<f64> {
        match self.camera_block[camera] {
            None => RigidTransform::identity(),
            Some(b) => {
                let t = p.euclidean(b + 1);
                RigidTransform::new(*p.rotation(b), Vector3::new(t[0], t[1], t[2]))
            }
        }
    }

    fn pack(&self, solution: &ExtrinsicSolution) -> Parameters<f64> {
        let mut blocks = Vec::new();
        let mut push = |t: &RigidTransform<f64>| {
            blocks.push(ParamBlock::Rotation(t.rotation));
            blocks.push(ParamBlock::Euclidean(DVector::from_column_slice(t.translation.as_slice())));
        };
        for pose in &solution.session_poses {
            push(pose);
        }
        for (i, e) in solution.extrinsics.iter().enumerate() {
            if i != self.reference {
                push(&e.inverse());
            }
        }
        Parameters::new(blocks)
    }

    fn unpack(&self, p: &Parameters<f64>) -> (Vec<RigidTransform<f64>>, Vec<RigidTransform<f64>>) {
        let sessions = (0..self.sessions).map(|s| self.session_pose(p, s)).collect();
        let extrinsics = (0..self.camera_block.len()).map(|i| self.camera_u(p, i).inverse()).collect();
        (extrinsics, sessions)
    }

    fn rows(&self) -> usize {
        self.images.iter().map(|i| 2 * i.world.len() + if i.prior.is_some() { 3 } else { 0 }).sum()
    }
}

impl LeastSquaresProblem<f64> for JointProblem<'_> {
    fn residuals(&self, p: &Parameters<f64>) -> DVector<f64> {
        let mut r = DVector::zeros(self.rows());
        let mut row = 0;
        for img in self.images {
            let pose = self.camera_u(p, img.camera).compose(&self.session_pose(p, img.session));
            let intr = &self.intrinsics[img.camera];
            for (m, px) in img.world.iter().zip(&img.pixels) {
                let e = intr.project_point(&pose.apply(m)).map_or(Vector2::repeat(1e12), |u| u - px);
                r.fixed_rows_mut::<2>(row).copy_from(&e);
                row += 2;
            }
            if let Some((c, sigma)) = img.prior {
                r.fixed_rows_mut::<3>(row).copy_from(&((pose.center() - c) / sigma));
                row += 3;
            }
        }
        r
    }

    fn jacobian(&self, p: &Parameters<f64>) -> Option<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.rows(), p.tangent_dim());
        let offsets = p.offsets();
        let mut row = 0;
        for img in self.images {
            let p0 = self.session_pose(p, img.session);
            let u = self.camera_u(p, img.camera);
            let (r0, ru) = (p0.rotation.matrix(), u.rotation.matrix());
            let s_col = offsets[2 * img.session];
            let u_col = self.camera_block[img.camera].map(|b| offsets[b]);
            let intr = &self.intrinsics[img.camera];
            for m in &img.world {
                let r0m = r0 * m;
                let x = r0m + p0.translation;
                let rux = ru * x;
                if let Ok((_, jp, _)) = intr.project_point_with_jacobians(&(rux + u.translation)) {
                    j.fixed_view_mut::<2, 3>(row, s_col).copy_from(&(jp * ru * -skew(&r0m)));
                    j.fixed_view_mut::<2, 3>(row, s_col + 3).copy_from(&(jp * ru));
                    if let Some(c) = u_col {
                        j.fixed_view_mut::<2, 3>(row, c).copy_from(&(jp * -skew(&rux)));
                        j.fixed_view_mut::<2, 3>(row, c + 3).copy_from(&jp);
                    }
                }
                row += 2;
            }
            if let Some((_, sigma)) = img.prior {
                let r0t = r0.transpose();
                let w = p0.translation + ru.transpose() * u.translation;
                j.fixed_view_mut::<3, 3>(row, s_col).copy_from(&(-r0t * skew(&w) / sigma));
                j.fixed_view_mut::<3, 3>(row, s_col + 3).copy_from(&(-r0t / sigma));
                if let Some(c) = u_col {
                    let a = r0t * ru.transpose();
                    j.fixed_view_mut::<3, 3>(row, c).copy_from(&(-a * skew(&u.translation) / sigma));
                    j.fixed_view_mut::<3, 3>(row, c + 3).copy_from(&(-a / sigma));
                }
                row += 3;
            }
        }
        Some(j)
    }
}

fn pixel_rms(images: &[ResolvedImage], intrinsics: &[CameraIntrinsics<f64>], solution: &ExtrinsicSolution) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for img in images {
        let pose = solution.extrinsics[img.camera].inverse().compose(&solution.session_poses[img.session]);
        for (m, px) in img.world.iter().zip(&img.pixels) {
            let e = intrinsics[img.camera].project_point(&pose.apply(m)).map_or(Vector2::repeat(1e12), |u| u - px);
            sum += e.norm_squared();
            count += 2;
        }
    }
    (sum / count.max(1) as f64).sqrt()
}

fn check_inputs(sessions: &[RotationSession], intrinsics: &[CameraIntrinsics<f64>], reference: usize) -> Result<(), ExtrinsicError> {
    if intrinsics.get(reference).is_none() {
        return Err(ExtrinsicError::UnknownCamera(reference));
    }
    for (s, session) in sessions.iter().enumerate() {
        if session.image_of(reference).is_none() {
            return Err(ExtrinsicError::MissingReference { session: s });
        }
        if let Some(img) = session.images.iter().find(|i| i.camera >= intrinsics.len()) {
            return Err(ExtrinsicError::UnknownCamera(img.camera));
        }
    }
    Ok(())
}

/// Joint LM over every station pose and every non-reference extrinsic; the
/// reference extrinsic stays the identity. The error never increases.
pub fn joint_refine_extrinsics(
    field: &CalibrationField,
    sessions: &[RotationSession],
    intrinsics: &[CameraIntrinsics<f64>],
    reference: usize,
    initial: &ExtrinsicSolution,
    prior: &PriorConfig,
) -> Result<ExtrinsicSolution, ExtrinsicError> {
    check_inputs(sessions, intrinsics, reference)?;
    let images = resolve(field, sessions, prior)?;
    let mut camera_block = vec![None; intrinsics.len()];
    let mut next = 2 * sessions.len();
    for (i, slot) in camera_block.iter_mut().enumerate() {
        if i != reference {
            *slot = Some(next);
            next += 2;
        }
    }
    let problem = JointProblem { images: &images, intrinsics, sessions: sessions.len(), reference, camera_block };
    let start = problem.pack(initial);
    let before = problem.residuals(&start).norm_squared();
    let (x, report) = nlls::minimize(&problem, start, &SolverConfig::default())?;
    if report.final_cost > before {
        return Ok(initial.clone());
    }
    let (extrinsics, session_poses) = problem.unpack(&x);
    let mut solution = ExtrinsicSolution { extrinsics, session_poses, rms: 0.0 };
    solution.extrinsics[reference] = RigidTransform::identity();
    solution.rms = pixel_rms(&images, intrinsics, &solution);
    Ok(solution)
}

/// Localizes every image, averages the per-station relative transforms and
/// refines everything jointly.
pub fn calibrate_extrinsics(
    field: &CalibrationField,
    sessions: &[RotationSession],
    intrinsics: &[CameraIntrinsics<f64>],
    reference: usize,
    prior: &PriorConfig,
) -> Result<ExtrinsicSolution, ExtrinsicError> {
    check_inputs(sessions, intrinsics, reference)?;
    let localized = sessions
        .par_iter()
        .map(|session| {
            session
                .images
                .iter()
                .map(|obs| localize_image(field, obs, &intrinsics[obs.camera], prior).map(|p| (obs.camera, p)))
                .collect::<Result<BTreeMap<_, _>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let relative =
        localized.iter().enumerate().map(|(s, poses)| session_relative_transforms(poses, reference, s)).collect::<Result<Vec<_>, _>>()?;
    let extrinsics = initial_extrinsics(&relative, intrinsics.len(), reference)?;
    let session_poses = localized.iter().map(|poses| poses[&reference]).collect();
    let initial = ExtrinsicSolution { extrinsics, session_poses, rms: f64::NAN };
    joint_refine_extrinsics(field, sessions, intrinsics, reference, &initial, prior)
}
