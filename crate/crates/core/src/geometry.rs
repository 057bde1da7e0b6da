//! Rotation and rigid-transform algebra.
//!
//! Conventions used throughout the crate:
//!
//! * [`RigidTransform`] maps points `p ↦ R·p + t`. A camera or rig *pose* maps
//!   world coordinates into the body frame; a camera *extrinsic* maps the
//!   camera frame into the rig reference frame.
//! * Rotations are stored as 3×3 matrices. The vectorized form `r` used by
//!   the pose solver is row-major: `r = [R11, R12, R13, R21, ..., R33]`.
//! * Euler angles are intrinsic Z-Y-X: `R = Rz(yaw) · Ry(pitch) · Rx(roll)`,
//!   reported in degrees.
//! * Quaternions are kept in the normal form `w ≥ 0`.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3, Vector4};
use thiserror::Error;

use crate::scalar::{lit, tol, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is within 1e-9 of a half turn; the Cayley vector is undefined")]
    SingularRotation,
    #[error("pitch is within 1e-6 rad of ±90°; roll and yaw are not separable")]
    GimbalLock,
    #[error("cannot average an empty list of transforms")]
    EmptyInput,
    #[error("matrix is not a rotation (orthogonality error {orthogonality:.3e}, det {determinant:.6})")]
    NotARotation { orthogonality: f64, determinant: f64 },
}

/// Skew-symmetric (cross-product) matrix: `skew(a) * b == a × b`.
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
pub fn vee<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    let half = lit::<T>(0.5);
    Vector3::new((m[(2, 1)] - m[(1, 2)]) * half, (m[(0, 2)] - m[(2, 0)]) * half, (m[(1, 0)] - m[(0, 1)]) * half)
}

/// A proper rotation matrix (`RᵀR = I`, `det R = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix<T: Real>(Matrix3<T>);

impl<T: Real> Default for RotationMatrix<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> RotationMatrix<T> {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and orientation to 1e-9.
    pub fn from_matrix(m: Matrix3<T>) -> Result<Self, GeometryError> {
        let orth = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        let eps = tol::<T>(1e-9);
        if orth > eps || (det - T::one()).abs() > eps {
            return Err(GeometryError::NotARotation {
                orthogonality: crate::scalar::to_f64(orth),
                determinant: crate::scalar::to_f64(det),
            });
        }
        Ok(Self(m))
    }

    /// Wraps `m` without checking. The caller guarantees it is a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<T>) -> Self {
        Self(m)
    }

    /// Nearest rotation in the Frobenius sense (polar decomposition).
    pub fn nearest(m: &Matrix3<T>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v requested");
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < T::zero() {
            d[(2, 2)] = -T::one();
        }
        Self(u * d * v_t)
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<T>, angle: T) -> Self {
        Self::exp(&(axis.normalize() * angle))
    }

    /// Rodrigues' formula for the rotation vector `w`.
    pub fn exp(w: &Vector3<T>) -> Self {
        let theta2 = w.norm_squared();
        let k = skew(w);
        let (a, b) = if theta2 < lit(1e-12) {
            (T::one() - theta2 / lit(6.0), lit::<T>(0.5) - theta2 / lit(24.0))
        } else {
            let theta = theta2.sqrt();
            (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
        };
        Self(Matrix3::identity() + k * a + k * k * b)
    }

    /// Rotation vector (axis times angle in radians, angle in `[0, π]`).
    pub fn log(&self) -> Vector3<T> {
        let q = UnitQuaternion::from_rotation(self);
        let v = Vector3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < lit(1e-300) {
            return Vector3::zeros();
        }
        let angle = lit::<T>(2.0) * s.atan2(q.w);
        v * (angle / s)
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> T {
        self.log().norm()
    }

    /// Geodesic distance to `other` in radians.
    pub fn angle_to(&self, other: &Self) -> T {
        (self.transpose() * *other).angle()
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<T> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.0 * p
    }

    /// Row-major vectorization `r` with `R·M = Y(M)·r`.
    pub fn to_row_major(&self) -> [T; 9] {
        let m = &self.0;
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
    }

    /// Maximum elementwise deviation of `RᵀR` from the identity.
    pub fn orthogonality_error(&self) -> T {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }

    /// Re-projects onto SO(3); used after long chains of compositions.
    pub fn renormalized(&self) -> Self {
        Self::nearest(&self.0)
    }

    /// Intrinsic Z-Y-X decomposition, in degrees.
    pub fn to_euler_zyx(&self) -> Result<EulerZyx<T>, GeometryError> {
        let m = &self.0;
        let s = (-m[(2, 0)]).max(-T::one()).min(T::one());
        let pitch = s.asin();
        if (T::frac_pi_2() - pitch.abs()) < lit(1e-6) {
            return Err(GeometryError::GimbalLock);
        }
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        let deg = lit::<T>(180.0) / T::pi();
        Ok(EulerZyx { roll_x: roll * deg, pitch_y: pitch * deg, yaw_z: yaw * deg })
    }

    /// Builds `Rz(yaw) · Ry(pitch) · Rx(roll)` from angles in degrees.
    pub fn from_euler_zyx(e: &EulerZyx<T>) -> Self {
        let rad = T::pi() / lit(180.0);
        let rz = Self::from_axis_angle(&Vector3::z(), e.yaw_z * rad);
        let ry = Self::from_axis_angle(&Vector3::y(), e.pitch_y * rad);
        let rx = Self::from_axis_angle(&Vector3::x(), e.roll_x * rad);
        rz * ry * rx
    }
}

impl<T: Real> std::ops::Mul for RotationMatrix<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

impl<T: Real> std::ops::Mul<Vector3<T>> for RotationMatrix<T> {
    type Output = Vector3<T>;
    fn mul(self, rhs: Vector3<T>) -> Vector3<T> {
        self.0 * rhs
    }
}

/// Intrinsic Z-Y-X Euler angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerZyx<T: Real> {
    pub roll_x: T,
    pub pitch_y: T,
    pub yaw_z: T,
}

impl<T: Real> EulerZyx<T> {
    /// `(roll, pitch, yaw)` ordering, i.e. angles about x, y, z.
    pub fn as_xyz(&self) -> [T; 3] {
        [self.roll_x, self.pitch_y, self.yaw_z]
    }

    /// `(yaw, pitch, roll)` ordering, the order the rotations are applied in.
    pub fn as_zyx(&self) -> [T; 3] {
        [self.yaw_z, self.pitch_y, self.roll_x]
    }
}

/// Three-parameter Cayley representation `(q_x, q_y, q_z)`.
///
/// The map is the rotation of the non-normalized quaternion `(1, q)`; it
/// covers every rotation except half turns, which sit at infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CayleyVector<T: Real>(pub Vector3<T>);

impl<T: Real> CayleyVector<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn vector(&self) -> &Vector3<T> {
        &self.0
    }

    pub fn to_rotation(&self) -> RotationMatrix<T> {
        let (x, y, z) = (self.0.x, self.0.y, self.0.z);
        let one = T::one();
        let two = lit::<T>(2.0);
        let s = one + x * x + y * y + z * z;
        let m = Matrix3::new(
            one + x * x - y * y - z * z,
            two * x * y - two * z,
            two * y + two * x * z,
            two * x * y + two * z,
            one - x * x + y * y - z * z,
            two * y * z - two * x,
            two * x * z - two * y,
            two * x + two * y * z,
            one - x * x - y * y + z * z,
        );
        RotationMatrix(m / s)
    }

    /// Inverse Cayley map: `q = vee(R − Rᵀ) / (1 + trace R)`.
    pub fn from_rotation(r: &RotationMatrix<T>) -> Result<Self, GeometryError> {
        let m = r.matrix();
        let denom = T::one() + m.trace();
        if denom < lit(1e-9) {
            return Err(GeometryError::SingularRotation);
        }
        let two = lit::<T>(2.0);
        Ok(Self(vee(m) * (two / denom)))
    }
}

/// Unit quaternion `(w, x, y, z)` in normal form `w ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion<T: Real> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> UnitQuaternion<T> {
    /// Normalizes and puts the quaternion in `w ≥ 0` form.
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        let v = Vector4::new(w, x, y, z);
        Self::from_vector(&v)
    }

    fn from_vector(v: &Vector4<T>) -> Self {
        let n = v.norm();
        let mut v = v / n;
        // w == 0 still has a sign ambiguity; fix it on the first nonzero part.
        let lead = v.iter().copied().find(|c| c.abs() > lit(1e-15)).unwrap_or(T::one());
        if v[0] < T::zero() || (v[0] == T::zero() && lead < T::zero()) {
            v = -v;
        }
        Self { w: v[0], x: v[1], y: v[2], z: v[3] }
    }

    pub fn as_vector(&self) -> Vector4<T> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_rotation(r: &RotationMatrix<T>) -> Self {
        // Shepperd's method: branch on the largest diagonal term.
        let m = r.matrix();
        let quarter = lit::<T>(0.25);
        let one = T::one();
        let two = lit::<T>(2.0);
        let tr = m.trace();
        let v = if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
            let s = (one + tr).sqrt() * two;
            Vector4::new(quarter * s, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s)
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (one + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * two;
            Vector4::new((m[(2, 1)] - m[(1, 2)]) / s, quarter * s, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s)
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (one + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * two;
            Vector4::new((m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, quarter * s, (m[(1, 2)] + m[(2, 1)]) / s)
        } else {
            let s = (one + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * two;
            Vector4::new((m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, quarter * s)
        };
        Self::from_vector(&v)
    }

    pub fn to_rotation(&self) -> RotationMatrix<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let one = T::one();
        let two = lit::<T>(2.0);
        RotationMatrix(Matrix3::new(
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ))
    }
}

/// Rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    pub rotation: RotationMatrix<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Default for RigidTransform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> RigidTransform<T> {
    pub fn new(rotation: RotationMatrix<T>, translation: Vector3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: RotationMatrix::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.matrix() * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self { rotation: self.rotation * other.rotation, translation: self.rotation.matrix() * other.translation + self.translation }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt.matrix() * self.translation) }
    }

    /// Origin of the source frame expressed in the target frame's inverse,
    /// i.e. the camera center in world coordinates for a world→camera pose.
    pub fn center(&self) -> Vector3<T> {
        -(self.rotation.matrix().transpose() * self.translation)
    }

    pub fn renormalized(&self) -> Self {
        Self { rotation: self.rotation.renormalized(), translation: self.translation }
    }

    /// Rotation angle (rad) and translation distance between two transforms.
    pub fn distance_to(&self, other: &Self) -> (T, T) {
        (self.rotation.angle_to(&other.rotation), (self.translation - other.translation).norm())
    }
}

/// Average of rigid transforms: eigenvector quaternion mean for the rotation
/// and arithmetic mean for the translation.
///
/// Quaternion signs are aligned to the first element before accumulating
/// `Σ q qᵀ`; the dominant eigenvector of that 4×4 matrix is the rotation
/// mean. The result does not depend on input order.
pub fn average_transforms<T: Real>(transforms: &[RigidTransform<T>]) -> Result<RigidTransform<T>, GeometryError> {
    let first = transforms.first().ok_or(GeometryError::EmptyInput)?;
    let q0 = UnitQuaternion::from_rotation(&first.rotation).as_vector();
    let mut acc = Matrix4::<T>::zeros();
    let mut t = Vector3::<T>::zeros();
    for tr in transforms {
        let mut q = UnitQuaternion::from_rotation(&tr.rotation).as_vector();
        if q.dot(&q0) < T::zero() {
            q = -q;
        }
        acc += q * q.transpose();
        t += tr.translation;
    }
    let count = lit::<T>(transforms.len() as f64);
    let eig = SymmetricEigen::new(acc);
    let best = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(best).into_owned();
    Ok(RigidTransform::new(UnitQuaternion::from_vector(&q).to_rotation(), t / count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    #[test]
    fn zero_cayley_is_identity() {
        let r = CayleyVector::<f64>::zero().to_rotation();
        assert_abs_diff_eq!(*r.matrix(), Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn unit_x_cayley_is_quarter_turn() {
        let r = CayleyVector::new(1.0, 0.0, 0.0).to_rotation();
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_abs_diff_eq!(*r.matrix(), expected, epsilon = 1e-15);
        let q = CayleyVector::from_rotation(&RotationMatrix::from_matrix(expected).unwrap()).unwrap();
        assert_abs_diff_eq!(q.0, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn identity_maps_to_zero_cayley() {
        let q = CayleyVector::<f64>::from_rotation(&RotationMatrix::identity()).unwrap();
        assert_eq!(q.0, Vector3::zeros());
    }

    #[test]
    fn half_turn_has_no_cayley_vector() {
        let r = RotationMatrix::<f64>::from_axis_angle(&Vector3::z(), std::f64::consts::PI);
        assert_eq!(CayleyVector::from_rotation(&r), Err(GeometryError::SingularRotation));
    }

    #[test]
    fn skew_matches_definition() {
        let s = skew(&Vector3::new(1.0, 2.0, 3.0));
        let expected = Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(s, expected);
        let v = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(s * v, Vector3::zeros());
        assert_eq!(skew(&Vector3::<f64>::zeros()), Matrix3::zeros());
    }

    #[test]
    fn average_of_identical_transforms() {
        let t = RigidTransform::new(RotationMatrix::from_axis_angle(&Vector3::new(1.0, 2.0, -0.5), 0.7), Vector3::new(0.3, -1.0, 2.0));
        let avg = average_transforms(&[t, t]).unwrap();
        assert_abs_diff_eq!(*avg.rotation.matrix(), *t.rotation.matrix(), epsilon = 1e-12);
        assert_abs_diff_eq!(avg.translation, t.translation, epsilon = 1e-15);
    }

    #[test]
    fn average_of_coaxial_rotations_is_midpoint() {
        let a = RigidTransform::new(RotationMatrix::from_axis_angle(&Vector3::z(), deg(10.0)), Vector3::zeros());
        let b = RigidTransform::new(RotationMatrix::from_axis_angle(&Vector3::z(), deg(20.0)), Vector3::zeros());
        let avg = average_transforms(&[a, b]).unwrap();
        let expected = RotationMatrix::from_axis_angle(&Vector3::z(), deg(15.0));
        assert!(avg.rotation.angle_to(&expected) < 1e-12);
    }

    #[test]
    fn average_translation_is_mean() {
        let a = RigidTransform::new(RotationMatrix::identity(), Vector3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::new(RotationMatrix::identity(), Vector3::new(3.0, 0.0, 0.0));
        let avg = average_transforms(&[a, b]).unwrap();
        assert_eq!(avg.translation, Vector3::new(2.0, 0.0, 0.0));
        assert!(avg.rotation.angle() < 1e-15);
    }

    #[test]
    fn empty_average_is_an_error() {
        assert_eq!(average_transforms::<f64>(&[]), Err(GeometryError::EmptyInput));
    }

    #[test]
    fn average_handles_opposite_quaternion_signs() {
        // Two rotations near a half turn whose quaternions land on opposite
        // sides of w = 0 in normal form.
        let a = RigidTransform::new(RotationMatrix::from_axis_angle(&Vector3::z(), deg(179.0)), Vector3::zeros());
        let b = RigidTransform::new(RotationMatrix::from_axis_angle(&Vector3::z(), deg(-179.0)), Vector3::zeros());
        let avg = average_transforms(&[a, b]).unwrap();
        let expected = RotationMatrix::from_axis_angle(&Vector3::z(), deg(180.0));
        assert!(avg.rotation.angle_to(&expected) < 1e-9);
    }

    #[test]
    fn euler_identity_and_pure_yaw() {
        let e = RotationMatrix::<f64>::identity().to_euler_zyx().unwrap();
        assert_eq!(e.as_xyz(), [0.0, 0.0, 0.0]);
        let e = RotationMatrix::from_axis_angle(&Vector3::z(), deg(45.0)).to_euler_zyx().unwrap();
        let [x, y, z] = e.as_xyz();
        assert_abs_diff_eq!(x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z, 45.0, epsilon = 1e-12);
    }

    #[test]
    fn euler_round_trip_and_gimbal_lock() {
        let e = EulerZyx { roll_x: 46.233, pitch_y: -0.152, yaw_z: -179.811 };
        let r = RotationMatrix::<f64>::from_euler_zyx(&e);
        let back = r.to_euler_zyx().unwrap();
        assert_abs_diff_eq!(RotationMatrix::from_euler_zyx(&back).matrix(), r.matrix(), epsilon = 1e-12);
        assert_abs_diff_eq!(back.yaw_z, -179.811, epsilon = 1e-9);

        let lock = RotationMatrix::<f64>::from_axis_angle(&Vector3::y(), deg(90.0));
        assert_eq!(lock.to_euler_zyx(), Err(GeometryError::GimbalLock));
    }

    #[test]
    fn nearest_rotation_repairs_drift() {
        let r = RotationMatrix::<f64>::from_axis_angle(&Vector3::new(0.2, 1.0, 0.3), 1.1);
        let drifted = r.matrix() + Matrix3::from_element(1e-6);
        let fixed = RotationMatrix::nearest(&drifted);
        assert!(fixed.orthogonality_error() < 1e-14);
        assert!((fixed.matrix().determinant() - 1.0).abs() < 1e-14);
        assert!(fixed.angle_to(&r) < 1e-5);
    }

    #[test]
    fn from_matrix_rejects_reflections() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(matches!(RotationMatrix::from_matrix(m), Err(GeometryError::NotARotation { .. })));
    }

    #[test]
    fn log_exp_round_trip() {
        let w = Vector3::new(0.3, -0.2, 2.5);
        let r = RotationMatrix::<f64>::exp(&w);
        assert_abs_diff_eq!(r.log(), w, epsilon = 1e-12);
    }

    #[test]
    fn single_precision_cayley() {
        let r = CayleyVector::new(0.5f32, -0.25, 2.0).to_rotation();
        assert!(r.orthogonality_error() < 1e-5);
        let q = CayleyVector::from_rotation(&r).unwrap();
        assert!((q.0 - Vector3::new(0.5, -0.25, 2.0)).norm() < 1e-4);
    }
}
