//! Direct linear transform for camera resectioning, and pose-only
//! refinement with known intrinsics.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Vector2, Vector3};
use thiserror::Error;

use crate::camera::{CameraError, CameraIntrinsics};
use crate::geometry::{skew, RigidTransform, RotationMatrix};
use crate::nlls::{self, LeastSquaresProblem, NlsError, ParamBlock, Parameters, SolverConfig};

/// Above this ratio of extreme singular values the DLT is refused.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DltError {
    #[error("need at least {required} correspondences, got {got}")]
    TooFewPoints { got: usize, required: usize },
    #[error("degenerate configuration (condition number {condition:.3e})")]
    Degenerate { condition: f64 },
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Solver(#[from] NlsError),
}

/// Similarity that moves points to zero mean and RMS distance `√dim`.
fn normalizer2(p: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = p.len() as f64;
    let mean = p.iter().fold(Vector2::zeros(), |a, x| a + x) / n;
    let rms = (p.iter().map(|x| (x - mean).norm_squared()).sum::<f64>() / n).sqrt();
    let s = if rms > 0.0 { 2f64.sqrt() / rms } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
}

fn normalizer3(p: &[Vector3<f64>]) -> nalgebra::Matrix4<f64> {
    let n = p.len() as f64;
    let mean = p.iter().fold(Vector3::zeros(), |a, x| a + x) / n;
    let rms = (p.iter().map(|x| (x - mean).norm_squared()).sum::<f64>() / n).sqrt();
    let s = if rms > 0.0 { 3f64.sqrt() / rms } else { 1.0 };
    let mut t = nalgebra::Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    for i in 0..3 {
        t[(i, 3)] = -s * mean[i];
    }
    t
}

/// Estimates the 3×4 projection matrix from ≥ 6 correspondences
/// (Hartley-normalized, smallest right singular vector).
pub fn projection_matrix(world: &[Vector3<f64>], pixels: &[Vector2<f64>]) -> Result<Matrix3x4<f64>, DltError> {
    let n = world.len().min(pixels.len());
    if n < 6 {
        return Err(DltError::TooFewPoints { got: n, required: 6 });
    }
    let t2 = normalizer2(pixels);
    let t3 = normalizer3(world);
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for i in 0..n {
        let x = t3 * world[i].push(1.0);
        let u = t2 * pixels[i].push(1.0);
        for k in 0..4 {
            a[(2 * i, k)] = x[k];
            a[(2 * i, 8 + k)] = -u.x * x[k];
            a[(2 * i + 1, 4 + k)] = x[k];
            a[(2 * i + 1, 8 + k)] = -u.y * x[k];
        }
    }
    // The 12×12 normal matrix is enough here and much cheaper than an SVD
    // of the tall matrix; singular values are square roots of its spectrum.
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let sv = |k: usize| eig.eigenvalues[order[k]].max(0.0).sqrt();
    let condition = sv(0) / sv(10);
    if !(condition <= MAX_CONDITION) {
        return Err(DltError::Degenerate { condition });
    }
    let h = eig.eigenvectors.column(order[11]);
    let pn = Matrix3x4::from_row_slice(h.as_slice());
    let p = t2.try_inverse().unwrap_or_else(Matrix3::identity) * pn * t3;
    Ok(p / p.fixed_view::<3, 3>(0, 0).determinant().abs().cbrt())
}

/// `P = K·[R | t]` with `K` upper triangular, positive diagonal.
pub fn decompose(p: &Matrix3x4<f64>) -> (Matrix3<f64>, RigidTransform<f64>) {
    let mut p = *p;
    if p.fixed_view::<3, 3>(0, 0).determinant() < 0.0 {
        p = -p;
    }
    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    // RQ via QR of the row-reversed transpose.
    let flip = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qr = (flip * m).transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut k = flip * r.transpose() * flip;
    let mut rot = flip * q.transpose();
    let signs = Matrix3::from_diagonal(&Vector3::from_fn(|i, _| if k[(i, i)] < 0.0 { -1.0 } else { 1.0 }));
    k *= signs;
    rot = signs * rot;
    if rot.determinant() < 0.0 {
        rot = -rot;
        k = -k;
    }
    let t = k.try_inverse().unwrap_or_else(Matrix3::identity) * p.column(3);
    let scale = k[(2, 2)];
    (k / scale, RigidTransform::new(RotationMatrix::nearest(&rot), t))
}

/// Pose for known `K` from a projection matrix: `K⁻¹P ≈ λ[R | t]`.
pub fn pose_from_projection(p: &Matrix3x4<f64>, k: &Matrix3<f64>) -> RigidTransform<f64> {
    let kinv = k.try_inverse().unwrap_or_else(Matrix3::identity);
    let mut a = kinv * p;
    if a.fixed_view::<3, 3>(0, 0).determinant() < 0.0 {
        a = -a;
    }
    let m = a.fixed_view::<3, 3>(0, 0).into_owned();
    let sv = m.svd(false, false).singular_values;
    let lambda = sv.mean();
    let rot = RotationMatrix::nearest(&m);
    RigidTransform::new(rot, a.column(3) / lambda)
}

/// Pixel residuals of one image for a pose-only problem. A position prior
/// adds `(C − prior)/σ` rows, `C` the camera centre.
pub struct PoseProblem<'a> {
    pub intrinsics: &'a CameraIntrinsics<f64>,
    pub world: &'a [Vector3<f64>],
    pub pixels: &'a [Vector2<f64>],
    pub prior: Option<(Vector3<f64>, f64)>,
}

fn pose_of(p: &Parameters<f64>) -> RigidTransform<f64> {
    let t = p.euclidean(1);
    RigidTransform::new(*p.rotation(0), Vector3::new(t[0], t[1], t[2]))
}

pub fn pose_params(pose: &RigidTransform<f64>) -> Parameters<f64> {
    Parameters::new(vec![
        ParamBlock::Rotation(pose.rotation),
        ParamBlock::Euclidean(DVector::from_column_slice(pose.translation.as_slice())),
    ])
}

impl LeastSquaresProblem<f64> for PoseProblem<'_> {
    fn residuals(&self, p: &Parameters<f64>) -> DVector<f64> {
        let pose = pose_of(p);
        let extra = if self.prior.is_some() { 3 } else { 0 };
        let mut r = DVector::zeros(2 * self.world.len() + extra);
        for (i, (m, px)) in self.world.iter().zip(self.pixels).enumerate() {
            let pc = pose.apply(m);
            // Points that fall behind the camera get a large, finite penalty
            // so LM rejects the step instead of failing.
            let e = match self.intrinsics.project_point(&pc) {
                Ok(u) => u - px,
                Err(_) => Vector2::repeat(1e12),
            };
            r[2 * i] = e.x;
            r[2 * i + 1] = e.y;
        }
        if let Some((c, sigma)) = self.prior {
            let e = (pose.center() - c) / sigma;
            r.rows_mut(2 * self.world.len(), 3).copy_from(&e);
        }
        r
    }

    fn jacobian(&self, p: &Parameters<f64>) -> Option<DMatrix<f64>> {
        let pose = pose_of(p);
        let extra = if self.prior.is_some() { 3 } else { 0 };
        let mut j = DMatrix::zeros(2 * self.world.len() + extra, 6);
        for (i, m) in self.world.iter().enumerate() {
            let rm = pose.rotation.apply(m);
            let pc = rm + pose.translation;
            let Ok((_, jp, _)) = self.intrinsics.project_point_with_jacobians(&pc) else { continue };
            j.fixed_view_mut::<2, 3>(2 * i, 0).copy_from(&(jp * -skew(&rm)));
            j.fixed_view_mut::<2, 3>(2 * i, 3).copy_from(&jp);
        }
        if let Some((_, sigma)) = self.prior {
            let rt = pose.rotation.matrix().transpose();
            let row = 2 * self.world.len();
            j.fixed_view_mut::<3, 3>(row, 0).copy_from(&(-rt * skew(&pose.translation) / sigma));
            j.fixed_view_mut::<3, 3>(row, 3).copy_from(&(-rt / sigma));
        }
        Some(j)
    }
}

/// LM over one world→camera pose with fixed intrinsics.
pub fn refine_pose(problem: &PoseProblem<'_>, initial: &RigidTransform<f64>) -> Result<(RigidTransform<f64>, f64), DltError> {
    let (x, report) = nlls::minimize(problem, pose_params(initial), &SolverConfig::default())?;
    Ok((pose_of(&x), report.final_cost))
}

/// Per-coordinate RMS of the pixel residuals of `problem` at `pose`.
pub fn reprojection_rms(problem: &PoseProblem<'_>, pose: &RigidTransform<f64>) -> f64 {
    let r = problem.residuals(&pose_params(pose));
    let n = 2 * problem.world.len();
    (r.rows(0, n).norm_squared() / n.max(1) as f64).sqrt()
}

/// Pose of one image with known intrinsics: DLT on undistorted pixels,
/// then LM on the full model. With a prior `(centre, σ)` the translation
/// starts at that centre and the prior stays in the cost.
pub fn localize(
    intrinsics: &CameraIntrinsics<f64>,
    world: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    prior: Option<(Vector3<f64>, f64)>,
) -> Result<(RigidTransform<f64>, f64), DltError> {
    let undistorted = pixels.iter().map(|p| intrinsics.undistort_pixel(p)).collect::<Result<Vec<_>, _>>()?;
    let p = projection_matrix(world, &undistorted)?;
    let k = Matrix3::new(intrinsics.fx, 0.0, intrinsics.cx, 0.0, intrinsics.fy, intrinsics.cy, 0.0, 0.0, 1.0);
    let mut initial = pose_from_projection(&p, &k);
    if let Some((c, _)) = prior {
        initial.translation = -(initial.rotation.matrix() * c);
    }
    let problem = PoseProblem { intrinsics, world, pixels, prior };
    let (pose, _) = refine_pose(&problem, &initial)?;
    Ok((pose, reprojection_rms(&problem, &pose)))
}
