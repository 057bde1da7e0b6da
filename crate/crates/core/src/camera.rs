//! Pinhole cameras with one radial distortion term, and the generalized
//! (multi-camera) ray model built on top of them.
//!
//! Distortion acts in pixel space on the offset from the principal point,
//! scaled by the squared radius of the *normalized* undistorted point:
//!
//! ```text
//! x = (u − cx)/fx,  y = (v − cy)/fy
//! ŭ = u + d·(u − cx)·(x² + y²)
//! v̆ = v + d·(v − cy)·(x² + y²)
//! ```

use nalgebra::{Matrix2x3, SMatrix, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{skew, RigidTransform};
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point is behind the camera (depth {depth:.3e})")]
    BehindCamera { depth: f64 },
    #[error("undistortion did not converge (residual {residual:.3e} px)")]
    NoConvergence { residual: f64 },
    #[error("pixel ({u:.1}, {v:.1}) is outside the undistortion domain")]
    OutOfDomain { u: f64, v: f64 },
    #[error("camera index {0} is not in the rig")]
    InvalidCameraIndex(usize),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rig: {0}")]
    InvalidRig(String),
}

/// `K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]` plus the radial coefficient `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub d: T,
    pub width: u32,
    pub height: u32,
}

/// Pixel Jacobian with respect to `(fx, fy, cx, cy, d)`.
pub type IntrinsicsJacobian<T> = SMatrix<T, 2, 5>;

impl<T: Real> CameraIntrinsics<T> {
    /// Camera with equal focal lengths, centered principal point, no distortion.
    pub fn centered(f: T, width: u32, height: u32) -> Self {
        Self { fx: f, fy: f, cx: lit::<T>(width as f64) / lit(2.0), cy: lit::<T>(height as f64) / lit(2.0), d: T::zero(), width, height }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |m: &str| Err(CameraError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return bad("focal lengths must be positive");
        }
        let (w, h) = (lit::<T>(self.width as f64), lit::<T>(self.height as f64));
        if !(self.cx >= T::zero() && self.cx <= w && self.cy >= T::zero() && self.cy <= h) {
            return bad("principal point must lie inside the image");
        }
        if !self.d.is_finite() {
            return bad("distortion coefficient must be finite");
        }
        Ok(())
    }

    pub fn as_array(&self) -> [T; 5] {
        [self.fx, self.fy, self.cx, self.cy, self.d]
    }

    pub fn with_array(&self, p: &[T; 5]) -> Self {
        Self { fx: p[0], fy: p[1], cx: p[2], cy: p[3], d: p[4], ..*self }
    }

    /// Mean focal length in pixels.
    pub fn focal(&self) -> T {
        (self.fx + self.fy) * lit(0.5)
    }

    /// Whether a pixel lies in `[0, W] × [0, H]`.
    pub fn contains(&self, p: &Vector2<T>) -> bool {
        p.x >= T::zero() && p.y >= T::zero() && p.x <= lit(self.width as f64) && p.y <= lit(self.height as f64)
    }

    /// Distorted pixel of a normalized undistorted image point.
    pub fn distort_normalized(&self, xn: T, yn: T) -> Vector2<T> {
        let k = T::one() + self.d * (xn * xn + yn * yn);
        Vector2::new(self.cx + self.fx * xn * k, self.cy + self.fy * yn * k)
    }

    /// Applies the distortion to an undistorted pixel.
    pub fn distort_pixel(&self, p: &Vector2<T>) -> Vector2<T> {
        self.distort_normalized((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    /// Projects a point given in camera coordinates, with Jacobians with
    /// respect to the point and to the intrinsics.
    #[allow(clippy::type_complexity)]
    pub fn project_point_with_jacobians(&self, pc: &Vector3<T>) -> Result<(Vector2<T>, Matrix2x3<T>, IntrinsicsJacobian<T>), CameraError> {
        let s = pc.z;
        if s <= lit(1e-12) {
            return Err(CameraError::BehindCamera { depth: to_f64(s) });
        }
        let inv = T::one() / s;
        let (x, y) = (pc.x * inv, pc.y * inv);
        let r2 = x * x + y * y;
        let k = T::one() + self.d * r2;
        let two_d = lit::<T>(2.0) * self.d;
        let pixel = Vector2::new(self.cx + self.fx * x * k, self.cy + self.fy * y * k);

        let du_dx = self.fx * (k + two_d * x * x);
        let du_dy = self.fx * two_d * x * y;
        let dv_dx = self.fy * two_d * x * y;
        let dv_dy = self.fy * (k + two_d * y * y);
        // d(x, y)/d(pc)
        let dx = [inv, T::zero(), -x * inv];
        let dy = [T::zero(), inv, -y * inv];
        let mut jp = Matrix2x3::zeros();
        for c in 0..3 {
            jp[(0, c)] = du_dx * dx[c] + du_dy * dy[c];
            jp[(1, c)] = dv_dx * dx[c] + dv_dy * dy[c];
        }
        let z = T::zero();
        let o = T::one();
        let ji = IntrinsicsJacobian::new(
            x * k,
            z,
            o,
            z,
            self.fx * x * r2, //
            z,
            y * k,
            z,
            o,
            self.fy * y * r2,
        );
        Ok((pixel, jp, ji))
    }

    pub fn project_point(&self, pc: &Vector3<T>) -> Result<Vector2<T>, CameraError> {
        let s = pc.z;
        if s <= lit(1e-12) {
            return Err(CameraError::BehindCamera { depth: to_f64(s) });
        }
        Ok(self.distort_normalized(pc.x / s, pc.y / s))
    }

    /// Removes distortion from a pixel. Newton iteration on the radial
    /// equation `ρ + d·ρ³ = ρ_d`, max 20 iterations, 1e-6 px acceptance.
    pub fn undistort_pixel(&self, p: &Vector2<T>) -> Result<Vector2<T>, CameraError> {
        self.undistort_pixel_with_margin(p, lit(0.5))
    }

    /// As [`Self::undistort_pixel`], with the accepted domain extending
    /// `margin · max(W, H)` beyond the image borders.
    pub fn undistort_pixel_with_margin(&self, p: &Vector2<T>, margin: T) -> Result<Vector2<T>, CameraError> {
        let (w, h) = (lit::<T>(self.width as f64), lit::<T>(self.height as f64));
        let m = margin * w.max(h);
        if !(p.x >= -m && p.y >= -m && p.x <= w + m && p.y <= h + m) {
            return Err(CameraError::OutOfDomain { u: to_f64(p.x), v: to_f64(p.y) });
        }
        let xd = (p.x - self.cx) / self.fx;
        let yd = (p.y - self.cy) / self.fy;
        let rho_d = (xd * xd + yd * yd).sqrt();
        if rho_d == T::zero() || self.d == T::zero() {
            return Ok(*p);
        }
        let mut rho = rho_d;
        for _ in 0..20 {
            let g = rho + self.d * rho * rho * rho - rho_d;
            let dg = T::one() + lit::<T>(3.0) * self.d * rho * rho;
            if dg <= T::zero() {
                break;
            }
            let step = g / dg;
            rho -= step;
            if step.abs() <= rho_d * lit(1e-16) {
                break;
            }
        }
        let scale = rho / rho_d;
        let und = Vector2::new(self.cx + (p.x - self.cx) * scale, self.cy + (p.y - self.cy) * scale);
        let residual = (self.distort_pixel(&und) - p).norm();
        if !(residual <= lit(1e-6)) {
            return Err(CameraError::NoConvergence { residual: to_f64(residual) });
        }
        Ok(und)
    }

    /// Homogeneous normalized direction `K⁻¹·[u, v, 1]` of an undistorted pixel.
    pub fn normalized_direction(&self, undistorted: &Vector2<T>) -> Vector3<T> {
        Vector3::new((undistorted.x - self.cx) / self.fx, (undistorted.y - self.cy) / self.fy, T::one())
    }
}

/// Projects world point `m` through a camera with world→camera `pose`.
pub fn project<T: Real>(intr: &CameraIntrinsics<T>, pose: &RigidTransform<T>, m: &Vector3<T>) -> Result<Vector2<T>, CameraError> {
    intr.project_point(&pose.apply(m))
}

/// One camera of a rig: intrinsics plus the camera→reference transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigCamera<T: Real> {
    pub intrinsics: CameraIntrinsics<T>,
    pub extrinsic: RigidTransform<T>,
}

/// Rigidly coupled cameras sharing a reference frame (that of `reference`).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig<T: Real> {
    pub cameras: Vec<RigCamera<T>>,
    pub reference: usize,
}

impl<T: Real> CameraRig<T> {
    pub fn new(cameras: Vec<RigCamera<T>>, reference: usize) -> Result<Self, CameraError> {
        let rig = Self { cameras, reference };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if self.cameras.is_empty() {
            return Err(CameraError::InvalidRig("rig has no cameras".into()));
        }
        let cam = self.cameras.get(self.reference).ok_or(CameraError::InvalidCameraIndex(self.reference))?;
        let is_identity = |e: &RigidTransform<T>| {
            (e.rotation.matrix() - nalgebra::Matrix3::identity()).amax() <= lit(1e-12) && e.translation.amax() <= lit(1e-12)
        };
        if !is_identity(&cam.extrinsic) {
            return Err(CameraError::InvalidRig("reference camera extrinsic must be identity".into()));
        }
        let identities = self.cameras.iter().filter(|c| is_identity(&c.extrinsic)).count();
        if identities != 1 {
            return Err(CameraError::InvalidRig(format!("exactly one camera may coincide with the reference frame, found {identities}")));
        }
        for c in &self.cameras {
            c.intrinsics.validate()?;
        }
        Ok(())
    }

    pub fn camera(&self, index: usize) -> Result<&RigCamera<T>, CameraError> {
        self.cameras.get(index).ok_or(CameraError::InvalidCameraIndex(index))
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// World→camera pose of camera `index` for a world→reference rig pose.
    pub fn camera_pose(&self, index: usize, rig_pose: &RigidTransform<T>) -> Result<RigidTransform<T>, CameraError> {
        Ok(self.camera(index)?.extrinsic.inverse().compose(rig_pose))
    }

    /// Pixel of world point `m` in camera `index` with the rig at `rig_pose`.
    pub fn project(&self, index: usize, rig_pose: &RigidTransform<T>, m: &Vector3<T>) -> Result<Vector2<T>, CameraError> {
        let cam = self.camera(index)?;
        project(&cam.intrinsics, &self.camera_pose(index, rig_pose)?, m)
    }

    /// Lifts a distorted pixel of camera `index` to a ray `(f, v)` in the
    /// reference frame: `v = t_c`, `f = normalize(R_c · K⁻¹ · m̃)`.
    pub fn pixel_to_ray(&self, index: usize, p: &Vector2<T>) -> Result<(Vector3<T>, Vector3<T>), CameraError> {
        let cam = self.camera(index)?;
        let und = cam.intrinsics.undistort_pixel(p)?;
        let dir = cam.extrinsic.rotation.matrix() * cam.intrinsics.normalized_direction(&und);
        Ok((dir.normalize(), cam.extrinsic.translation))
    }

    /// Builds a [`GeneralizedObservation`] from a pixel and its world point.
    pub fn observe(&self, index: usize, p: &Vector2<T>, world: Vector3<T>) -> Result<GeneralizedObservation<T>, CameraError> {
        let (f, v) = self.pixel_to_ray(index, p)?;
        Ok(GeneralizedObservation { direction: f, origin: v, point: world, camera: index })
    }
}

/// A ray `α·f + v` of the generalized camera paired with its world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedObservation<T: Real> {
    /// Unit direction `f` in the reference frame.
    pub direction: Vector3<T>,
    /// Ray origin `v` in the reference frame (meters).
    pub origin: Vector3<T>,
    /// World point `M` (meters).
    pub point: Vector3<T>,
    pub camera: usize,
}

impl<T: Real> GeneralizedObservation<T> {
    /// Normalizes the direction on construction.
    pub fn new(direction: Vector3<T>, origin: Vector3<T>, point: Vector3<T>, camera: usize) -> Self {
        Self { direction: direction.normalize(), origin, point, camera }
    }

    /// Depth of the transformed point along the ray, `fᵀ(R·M + t − v)`.
    pub fn depth(&self, pose: &RigidTransform<T>) -> T {
        self.direction.dot(&(pose.apply(&self.point) - self.origin))
    }
}

/// Space geometric error vector `[f]× (R·M + t − v)`.
pub fn generalized_residual<T: Real>(obs: &GeneralizedObservation<T>, pose: &RigidTransform<T>) -> Vector3<T> {
    skew(&obs.direction) * (pose.apply(&obs.point) - obs.origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RotationMatrix;
    use approx::assert_abs_diff_eq;

    fn cam(d: f64) -> CameraIntrinsics<f64> {
        CameraIntrinsics { fx: 1000.0, fy: 1000.0, cx: 2048.0, cy: 1500.0, d, width: 4096, height: 3000 }
    }

    #[test]
    fn principal_ray_hits_principal_point() {
        let p = project(&cam(0.0), &RigidTransform::identity(), &Vector3::new(0.0, 0.0, 10.0)).unwrap();
        assert_eq!(p, Vector2::new(2048.0, 1500.0));
    }

    #[test]
    fn linear_projection() {
        let p = project(&cam(0.0), &RigidTransform::identity(), &Vector3::new(1.0, 0.0, 10.0)).unwrap();
        assert_abs_diff_eq!(p, Vector2::new(2148.0, 1500.0), epsilon = 1e-9);
    }

    #[test]
    fn radial_distortion_example() {
        let p = project(&cam(0.1), &RigidTransform::identity(), &Vector3::new(1.0, 0.0, 10.0)).unwrap();
        assert_abs_diff_eq!(p, Vector2::new(2148.1, 1500.0), epsilon = 1e-9);
        let u = cam(0.1).undistort_pixel(&Vector2::new(2148.1, 1500.0)).unwrap();
        assert_abs_diff_eq!(u, Vector2::new(2148.0, 1500.0), epsilon = 1e-6);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let r = project(&cam(0.0), &RigidTransform::identity(), &Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(r, Err(CameraError::BehindCamera { .. })));
        let r = project(&cam(0.0), &RigidTransform::identity(), &Vector3::new(0.0, 0.0, 0.0));
        assert!(matches!(r, Err(CameraError::BehindCamera { .. })));
    }

    #[test]
    fn undistortion_fixed_points() {
        let p = Vector2::new(300.0, 2000.0);
        assert_eq!(cam(0.0).undistort_pixel(&p).unwrap(), p);
        for d in [-0.3, 0.0, 2.0, 5.0] {
            let c = Vector2::new(2048.0, 1500.0);
            assert_eq!(cam(d).undistort_pixel(&c).unwrap(), c);
        }
    }

    #[test]
    fn undistortion_rejects_far_pixels() {
        let r = cam(0.1).undistort_pixel(&Vector2::new(-5000.0, 0.0));
        assert!(matches!(r, Err(CameraError::OutOfDomain { .. })));
    }

    #[test]
    fn scale_invariance_along_optical_ray() {
        let c = cam(0.3);
        let pc = Vector3::new(0.4, -0.7, 3.0);
        assert_abs_diff_eq!(c.project_point(&pc).unwrap(), c.project_point(&(pc * 2.0)).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let c = CameraIntrinsics { fx: 1200.0, fy: 1100.0, cx: 640.0, cy: 480.0, d: 0.4, width: 1280, height: 960 };
        let pc = Vector3::new(0.3, -0.2, 1.7);
        let (_, jp, ji) = c.project_point_with_jacobians(&pc).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut a = pc;
            let mut b = pc;
            a[k] += h;
            b[k] -= h;
            let fd = (c.project_point(&a).unwrap() - c.project_point(&b).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(fd, jp.column(k).into_owned(), epsilon = 1e-4);
        }
        for k in 0..5 {
            let mut pa = c.as_array();
            let mut pb = c.as_array();
            pa[k] += h;
            pb[k] -= h;
            let fd = (c.with_array(&pa).project_point(&pc).unwrap() - c.with_array(&pb).project_point(&pc).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(fd, ji.column(k).into_owned(), epsilon = 1e-4);
        }
    }

    fn two_camera_rig() -> CameraRig<f64> {
        let c0 = RigCamera { intrinsics: cam(0.05), extrinsic: RigidTransform::identity() };
        let c1 = RigCamera {
            intrinsics: cam(-0.02),
            extrinsic: RigidTransform::new(RotationMatrix::from_axis_angle(&Vector3::x(), 0.6), Vector3::new(0.1, 0.0, -0.1)),
        };
        CameraRig::new(vec![c0, c1], 0).unwrap()
    }

    #[test]
    fn principal_point_lifts_to_optical_axis() {
        let rig = two_camera_rig();
        let (f, v) = rig.pixel_to_ray(0, &Vector2::new(2048.0, 1500.0)).unwrap();
        assert_abs_diff_eq!(f, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        assert_eq!(v, Vector3::zeros());
    }

    #[test]
    fn ray_origin_is_extrinsic_translation() {
        let rig = two_camera_rig();
        for p in [Vector2::new(10.0, 20.0), Vector2::new(3000.0, 2900.0)] {
            let (_, v) = rig.pixel_to_ray(1, &p).unwrap();
            assert_eq!(v, Vector3::new(0.1, 0.0, -0.1));
        }
    }

    #[test]
    fn projected_then_lifted_ray_passes_through_point() {
        let rig = two_camera_rig();
        let pose = RigidTransform::new(RotationMatrix::from_axis_angle(&Vector3::new(0.3, -1.0, 0.2), 0.4), Vector3::new(0.5, -0.2, 1.0));
        // A point in front of camera 1.
        let in_cam = Vector3::new(0.2, -0.1, 8.0);
        let in_ref = rig.cameras[1].extrinsic.apply(&in_cam);
        let world = pose.inverse().apply(&in_ref);
        let px = rig.project(1, &pose, &world).unwrap();
        let obs = rig.observe(1, &px, world).unwrap();
        assert!(generalized_residual(&obs, &pose).norm() < 1e-9);
        assert!(obs.depth(&pose) > 0.0);
    }

    #[test]
    fn generalized_residual_hand_example() {
        let obs = GeneralizedObservation::new(Vector3::z(), Vector3::zeros(), Vector3::new(1.0, 0.0, 5.0), 0);
        let e = generalized_residual(&obs, &RigidTransform::identity());
        assert_eq!(e, Vector3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn residual_ignores_motion_along_ray() {
        let obs = GeneralizedObservation::new(Vector3::new(0.2, 0.1, 1.0), Vector3::new(0.1, 0.0, 0.0), Vector3::new(1.0, 0.5, 5.0), 0);
        let moved = GeneralizedObservation { point: obs.point + obs.direction * 3.0, ..obs };
        let pose = RigidTransform::identity();
        assert_abs_diff_eq!(generalized_residual(&obs, &pose), generalized_residual(&moved, &pose), epsilon = 1e-12);
    }

    #[test]
    fn rig_validation() {
        let mut rig = two_camera_rig();
        rig.cameras[1].extrinsic = RigidTransform::identity();
        assert!(matches!(rig.validate(), Err(CameraError::InvalidRig(_))));
        let rig = CameraRig::<f64> { cameras: vec![], reference: 0 };
        assert!(rig.validate().is_err());
        assert!(matches!(two_camera_rig().camera(5), Err(CameraError::InvalidCameraIndex(5))));
    }
}
