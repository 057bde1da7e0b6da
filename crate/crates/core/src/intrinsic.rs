//! Per-camera intrinsic calibration from control-point correspondences:
//! focal and pose initialization, focal consensus, then joint refinement of
//! `(fx, fy, cx, cy, d)` with every image pose.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{CameraError, CameraIntrinsics, CameraRig, RigCamera};
use crate::dlt::{self, DltError, PoseProblem};
use crate::field::{CalibrationField, FieldError, ImageCorrespondences};
use crate::geometry::{skew, RigidTransform};
use crate::gpnp::{self, GpnpConfig, GpnpError};
use crate::nlls::{self, LeastSquaresProblem, NlsError, ParamBlock, Parameters, SolverConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntrinsicError {
    #[error("need at least {required} correspondences, got {got}")]
    TooFewPoints { got: usize, required: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no input")]
    EmptyInput,
    #[error("images come from cameras of different sizes")]
    MixedImageSizes,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Solver(#[from] NlsError),
}

impl From<DltError> for IntrinsicError {
    fn from(e: DltError) -> Self {
        match e {
            DltError::TooFewPoints { got, required } => Self::TooFewPoints { got, required },
            DltError::Degenerate { condition } => Self::DegenerateConfiguration(format!("DLT condition number {condition:.3e}")),
            DltError::Camera(e) => Self::Camera(e),
            DltError::Solver(e) => Self::Solver(e),
        }
    }
}

impl From<GpnpError> for IntrinsicError {
    fn from(e: GpnpError) -> Self {
        match e {
            GpnpError::TooFewPoints { got, required } => Self::TooFewPoints { got, required },
            other => Self::DegenerateConfiguration(other.to_string()),
        }
    }
}

/// Focal search interval, in multiples of the image width.
pub const FOCAL_RANGE: (f64, f64) = (0.2, 50.0);
const SCAN_STEPS: usize = 25;
const GOLDEN_ITERATIONS: usize = 40;

/// Result of the single-image focal/pose initializer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalEstimate {
    pub focal: f64,
    pub pose: RigidTransform<f64>,
    /// Per-coordinate RMS reprojection error, pixels.
    pub rms: f64,
}

/// One image's correspondences with marker ids resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedImage {
    pub world: Vec<Vector3<f64>>,
    pub pixels: Vec<Vector2<f64>>,
}

impl ResolvedImage {
    pub fn from_correspondences(field: &CalibrationField, obs: &ImageCorrespondences) -> Result<Self, FieldError> {
        let (world, pixels) = obs.resolve(field)?;
        Ok(Self { world, pixels })
    }
}

fn pose_at_focal(
    image: &ResolvedImage,
    intr: &CameraIntrinsics<f64>,
    projection: Option<&nalgebra::Matrix3x4<f64>>,
) -> Result<(RigidTransform<f64>, f64), IntrinsicError> {
    let initial = match projection {
        Some(p) => dlt::pose_from_projection(p, &intr_matrix(intr)),
        None => {
            // Too few points for a DLT: solve the central absolute pose with
            // the generalized solver on a one-camera rig.
            let rig = CameraRig::new(vec![RigCamera { intrinsics: *intr, extrinsic: RigidTransform::identity() }], 0)?;
            let obs = image.world.iter().zip(&image.pixels).map(|(m, p)| rig.observe(0, p, *m)).collect::<Result<Vec<_>, _>>()?;
            gpnp::solve_pose(&obs, &GpnpConfig::default())?.best.pose()
        }
    };
    let problem = PoseProblem { intrinsics: intr, world: &image.world, pixels: &image.pixels, prior: None };
    let (pose, _) = dlt::refine_pose(&problem, &initial)?;
    Ok((pose, dlt::reprojection_rms(&problem, &pose)))
}

fn intr_matrix(intr: &CameraIntrinsics<f64>) -> Matrix3<f64> {
    Matrix3::new(intr.fx, 0.0, intr.cx, 0.0, intr.fy, intr.cy, 0.0, 0.0, 1.0)
}

/// Focal length and pose of one image under the prior model (`fx = fy`,
/// centred principal point, no distortion).
///
/// The focal is found by a log-spaced scan over [`FOCAL_RANGE`] followed by
/// golden-section search around the best scan point. Each probe solves the
/// fixed-focal pose (DLT when at least six points are available, otherwise
/// the absolute pose solver) and polishes it with LM. A final LM over focal
/// and pose together removes the search tolerance.
pub fn estimate_focal_and_pose(image: &ResolvedImage, width: u32, height: u32) -> Result<FocalEstimate, IntrinsicError> {
    let n = image.world.len().min(image.pixels.len());
    if n < 4 {
        return Err(IntrinsicError::TooFewPoints { got: n, required: 4 });
    }
    let projection = if n >= 6 { Some(dlt::projection_matrix(&image.world, &image.pixels)?) } else { None };
    let probe = |log_f: f64| -> Option<(f64, RigidTransform<f64>)> {
        let intr = CameraIntrinsics::centered(log_f.exp(), width, height);
        pose_at_focal(image, &intr, projection.as_ref()).ok().map(|(pose, rms)| (rms, pose))
    };

    let (lo, hi) = ((FOCAL_RANGE.0 * width as f64).ln(), (FOCAL_RANGE.1 * width as f64).ln());
    let step = (hi - lo) / (SCAN_STEPS - 1) as f64;
    let scan: Vec<Option<f64>> = (0..SCAN_STEPS).map(|i| probe(lo + step * i as f64).map(|(rms, _)| rms)).collect();
    let best = scan
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| IntrinsicError::DegenerateConfiguration("no focal length gives a valid pose".into()))?;

    let cost = |x: f64| probe(x).map_or(f64::INFINITY, |(rms, _)| rms);
    let (mut a, mut b) = (lo + step * best.saturating_sub(1) as f64, lo + step * (best + 1).min(SCAN_STEPS - 1) as f64);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..GOLDEN_ITERATIONS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = cost(d);
        }
    }
    let log_f = 0.5 * (a + b);
    let (_, pose) = probe(log_f).ok_or_else(|| IntrinsicError::DegenerateConfiguration("focal search failed".into()))?;

    let problem = FocalPoseProblem { image, width, height };
    let initial = Parameters::new(vec![
        ParamBlock::Euclidean(DVector::from_element(1, log_f.exp())),
        ParamBlock::Rotation(pose.rotation),
        ParamBlock::Euclidean(DVector::from_column_slice(pose.translation.as_slice())),
    ]);
    let (x, report) = nlls::minimize(&problem, initial, &SolverConfig::default())?;
    let focal = x.euclidean(0)[0];
    let t = x.euclidean(2);
    Ok(FocalEstimate {
        focal,
        pose: RigidTransform::new(*x.rotation(1), Vector3::new(t[0], t[1], t[2])),
        rms: (report.final_cost / (2 * n) as f64).sqrt(),
    })
}

/// Pixel residual of a projection, or a large finite penalty when the point
/// is behind the camera, so that LM rejects the step.
fn pixel_residual(intr: &CameraIntrinsics<f64>, pc: &Vector3<f64>, observed: &Vector2<f64>) -> Vector2<f64> {
    intr.project_point(pc).map_or(Vector2::repeat(1e12), |u| u - observed)
}

struct FocalPoseProblem<'a> {
    image: &'a ResolvedImage,
    width: u32,
    height: u32,
}

impl FocalPoseProblem<'_> {
    fn intrinsics(&self, p: &Parameters<f64>) -> CameraIntrinsics<f64> {
        CameraIntrinsics::centered(p.euclidean(0)[0], self.width, self.height)
    }

    fn pose(p: &Parameters<f64>) -> RigidTransform<f64> {
        let t = p.euclidean(2);
        RigidTransform::new(*p.rotation(1), Vector3::new(t[0], t[1], t[2]))
    }
}

impl LeastSquaresProblem<f64> for FocalPoseProblem<'_> {
    fn residuals(&self, p: &Parameters<f64>) -> DVector<f64> {
        let intr = self.intrinsics(p);
        let pose = Self::pose(p);
        let mut r = DVector::zeros(2 * self.image.world.len());
        for (i, (m, px)) in self.image.world.iter().zip(&self.image.pixels).enumerate() {
            r.fixed_rows_mut::<2>(2 * i).copy_from(&pixel_residual(&intr, &pose.apply(m), px));
        }
        r
    }

    fn jacobian(&self, p: &Parameters<f64>) -> Option<DMatrix<f64>> {
        let intr = self.intrinsics(p);
        let pose = Self::pose(p);
        let mut j = DMatrix::zeros(2 * self.image.world.len(), 7);
        for (i, m) in self.image.world.iter().enumerate() {
            let rm = pose.rotation.apply(m);
            let Ok((_, jp, jk)) = intr.project_point_with_jacobians(&(rm + pose.translation)) else { continue };
            j.fixed_view_mut::<2, 1>(2 * i, 0).copy_from(&(jk.column(0) + jk.column(1)));
            j.fixed_view_mut::<2, 3>(2 * i, 1).copy_from(&(jp * -skew(&rm)));
            j.fixed_view_mut::<2, 3>(2 * i, 4).copy_from(&jp);
        }
        Some(j)
    }
}

/// Mean focal length over several images, with the spread for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalConsensus {
    pub mean: f64,
    pub std: f64,
}

pub fn consensus_focal(estimates: &[f64]) -> Result<FocalConsensus, IntrinsicError> {
    if estimates.is_empty() {
        return Err(IntrinsicError::EmptyInput);
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    Ok(FocalConsensus { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicSolution {
    pub intrinsics: CameraIntrinsics<f64>,
    /// World→camera pose of every calibration image, in input order.
    pub poses: Vec<RigidTransform<f64>>,
    /// Per-coordinate RMS reprojection error over all images, pixels.
    pub rms: f64,
}

fn resolve_all(field: &CalibrationField, images: &[ImageCorrespondences]) -> Result<Vec<ResolvedImage>, IntrinsicError> {
    if images.is_empty() {
        return Err(IntrinsicError::EmptyInput);
    }
    Ok(images.iter().map(|o| ResolvedImage::from_correspondences(field, o)).collect::<Result<Vec<_>, _>>()?)
}

/// Per-image focal estimates, their mean, and every pose re-solved at that
/// mean focal.
pub fn initialize_intrinsics(
    field: &CalibrationField,
    images: &[ImageCorrespondences],
    width: u32,
    height: u32,
) -> Result<(IntrinsicSolution, FocalConsensus), IntrinsicError> {
    let resolved = resolve_all(field, images)?;
    let estimates = resolved.par_iter().map(|img| estimate_focal_and_pose(img, width, height)).collect::<Result<Vec<_>, _>>()?;
    let consensus = consensus_focal(&estimates.iter().map(|e| e.focal).collect::<Vec<_>>())?;
    let intrinsics = CameraIntrinsics::centered(consensus.mean, width, height);
    let poses = resolved
        .par_iter()
        .zip(&estimates)
        .map(|(img, est)| {
            let problem = PoseProblem { intrinsics: &intrinsics, world: &img.world, pixels: &img.pixels, prior: None };
            dlt::refine_pose(&problem, &est.pose).map(|(pose, _)| pose)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rms = pooled_rms(&intrinsics, &resolved, &poses);
    Ok((IntrinsicSolution { intrinsics, poses, rms }, consensus))
}

/// Per-coordinate RMS reprojection error pooled over images.
pub fn pooled_rms(intr: &CameraIntrinsics<f64>, images: &[ResolvedImage], poses: &[RigidTransform<f64>]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for (img, pose) in images.iter().zip(poses) {
        for (m, px) in img.world.iter().zip(&img.pixels) {
            sum += pixel_residual(intr, &pose.apply(m), px).norm_squared();
            count += 2;
        }
    }
    (sum / count.max(1) as f64).sqrt()
}

struct JointProblem<'a> {
    images: &'a [ResolvedImage],
    width: u32,
    height: u32,
}

impl JointProblem<'_> {
    fn unpack(&self, p: &Parameters<f64>) -> (CameraIntrinsics<f64>, Vec<RigidTransform<f64>>) {
        let k = p.euclidean(0);
        let intr = CameraIntrinsics { fx: k[0], fy: k[1], cx: k[2], cy: k[3], d: k[4], width: self.width, height: self.height };
        let poses = (0..self.images.len())
            .map(|i| {
                let t = p.euclidean(2 + 2 * i);
                RigidTransform::new(*p.rotation(1 + 2 * i), Vector3::new(t[0], t[1], t[2]))
            })
            .collect();
        (intr, poses)
    }

    fn pack(solution: &IntrinsicSolution) -> Parameters<f64> {
        let mut blocks = vec![ParamBlock::Euclidean(DVector::from_column_slice(&solution.intrinsics.as_array()))];
        for pose in &solution.poses {
            blocks.push(ParamBlock::Rotation(pose.rotation));
            blocks.push(ParamBlock::Euclidean(DVector::from_column_slice(pose.translation.as_slice())));
        }
        Parameters::new(blocks)
    }

    fn rows(&self) -> usize {
        2 * self.images.iter().map(|i| i.world.len()).sum::<usize>()
    }
}

impl LeastSquaresProblem<f64> for JointProblem<'_> {
    fn residuals(&self, p: &Parameters<f64>) -> DVector<f64> {
        let (intr, poses) = self.unpack(p);
        let mut r = DVector::zeros(self.rows());
        let mut row = 0;
        for (img, pose) in self.images.iter().zip(&poses) {
            for (m, px) in img.world.iter().zip(&img.pixels) {
                r.fixed_rows_mut::<2>(row).copy_from(&pixel_residual(&intr, &pose.apply(m), px));
                row += 2;
            }
        }
        r
    }

    fn jacobian(&self, p: &Parameters<f64>) -> Option<DMatrix<f64>> {
        let (intr, poses) = self.unpack(p);
        let mut j = DMatrix::zeros(self.rows(), 5 + 6 * self.images.len());
        let mut row = 0;
        for (i, (img, pose)) in self.images.iter().zip(&poses).enumerate() {
            let col = 5 + 6 * i;
            for m in &img.world {
                let rm = pose.rotation.apply(m);
                if let Ok((_, jp, jk)) = intr.project_point_with_jacobians(&(rm + pose.translation)) {
                    j.fixed_view_mut::<2, 5>(row, 0).copy_from(&jk);
                    j.fixed_view_mut::<2, 3>(row, col).copy_from(&(jp * -skew(&rm)));
                    j.fixed_view_mut::<2, 3>(row, col + 3).copy_from(&jp);
                }
                row += 2;
            }
        }
        Some(j)
    }
}

/// Joint LM over the five intrinsic parameters and every image pose. The
/// returned error never exceeds the initial one.
pub fn refine_intrinsics(
    field: &CalibrationField,
    images: &[ImageCorrespondences],
    initial: &IntrinsicSolution,
) -> Result<IntrinsicSolution, IntrinsicError> {
    let resolved = resolve_all(field, images)?;
    if initial.poses.len() != resolved.len() {
        return Err(IntrinsicError::DegenerateConfiguration(format!(
            "{} initial poses for {} images",
            initial.poses.len(),
            resolved.len()
        )));
    }
    refine_resolved(&resolved, initial)
}

fn refine_resolved(resolved: &[ResolvedImage], initial: &IntrinsicSolution) -> Result<IntrinsicSolution, IntrinsicError> {
    let problem = JointProblem { images: resolved, width: initial.intrinsics.width, height: initial.intrinsics.height };
    let (x, _) = nlls::minimize(&problem, JointProblem::pack(initial), &SolverConfig::default())?;
    let (intrinsics, poses) = problem.unpack(&x);
    let rms = pooled_rms(&intrinsics, resolved, &poses);
    let before = pooled_rms(&initial.intrinsics, resolved, &initial.poses);
    if rms > before {
        return Ok(IntrinsicSolution { rms: before, ..initial.clone() });
    }
    Ok(IntrinsicSolution { intrinsics, poses, rms })
}

/// Initialization followed by joint refinement.
pub fn calibrate_intrinsics(
    field: &CalibrationField,
    images: &[ImageCorrespondences],
    width: u32,
    height: u32,
) -> Result<IntrinsicSolution, IntrinsicError> {
    let (initial, _) = initialize_intrinsics(field, images, width, height)?;
    let resolved = resolve_all(field, images)?;
    refine_resolved(&resolved, &initial)
}

/// Reprojection error on held-out images, each localized with the
/// intrinsics held fixed.
pub fn evaluation_rms(
    field: &CalibrationField,
    images: &[ImageCorrespondences],
    intrinsics: &CameraIntrinsics<f64>,
) -> Result<f64, IntrinsicError> {
    let resolved = resolve_all(field, images)?;
    let poses = resolved
        .par_iter()
        .map(|img| dlt::localize(intrinsics, &img.world, &img.pixels, None).map(|(pose, _)| pose))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pooled_rms(intrinsics, &resolved, &poses))
}
