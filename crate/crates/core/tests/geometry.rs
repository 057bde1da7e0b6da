use approx::assert_abs_diff_eq;
use nalgebra::Vector3;
use proptest::prelude::*;
use rigpose::geometry::{average_transforms, CayleyVector, EulerZyx, RigidTransform, RotationMatrix, UnitQuaternion};

fn axis_angle() -> impl Strategy<Value = (Vector3<f64>, f64)> {
    (prop::array::uniform3(-1.0..1.0f64), 0.0..std::f64::consts::PI)
        .prop_filter("non-degenerate axis", |(a, _)| Vector3::from(*a).norm() > 1e-3)
        .prop_map(|(a, angle)| (Vector3::from(a).normalize(), angle))
}

fn transform() -> impl Strategy<Value = RigidTransform<f64>> {
    (axis_angle(), prop::array::uniform3(-100.0..100.0f64))
        .prop_map(|((axis, angle), t)| RigidTransform::new(RotationMatrix::from_axis_angle(&axis, angle), Vector3::from(t)))
}

proptest! {
    #[test]
    fn quaternion_round_trip((axis, angle) in axis_angle()) {
        let r = RotationMatrix::from_axis_angle(&axis, angle);
        let q = UnitQuaternion::from_rotation(&r);
        prop_assert!(q.to_array()[0] >= 0.0);
        prop_assert!((q.as_vector().norm() - 1.0).abs() < 1e-12);
        prop_assert!(q.to_rotation().angle_to(&r) < 1e-12);
    }

    #[test]
    fn exp_inverts_log((axis, angle) in axis_angle()) {
        prop_assume!(angle < std::f64::consts::PI - 1e-6);
        let w = axis * angle;
        let back = RotationMatrix::exp(&w).log();
        prop_assert!((back - w).norm() < 1e-9);
    }

    #[test]
    fn cayley_round_trip((axis, angle) in axis_angle()) {
        prop_assume!(angle < 3.0);
        let r = RotationMatrix::from_axis_angle(&axis, angle);
        let q = CayleyVector::from_rotation(&r).unwrap();
        // The Cayley vector is the axis scaled by tan(θ/2).
        prop_assert!((q.vector() - axis * (angle / 2.0).tan()).norm() < 1e-9 * (1.0 + q.vector().norm()));
        prop_assert!(q.to_rotation().angle_to(&r) < 1e-12);
    }

    #[test]
    fn euler_round_trip(yaw in -179.0..179.0f64, pitch in -89.0..89.0f64, roll in -179.0..179.0f64) {
        let e = EulerZyx { roll_x: roll, pitch_y: pitch, yaw_z: yaw };
        let back = RotationMatrix::from_euler_zyx(&e).to_euler_zyx().unwrap();
        for (a, b) in back.as_zyx().iter().zip(e.as_zyx()) {
            prop_assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn compose_with_inverse_is_identity(t in transform(), p in prop::array::uniform3(-50.0..50.0f64)) {
        let p = Vector3::from(p);
        let id = t.compose(&t.inverse());
        prop_assert!((id.apply(&p) - p).norm() < 1e-10);
        prop_assert!((t.inverse().apply(&t.apply(&p)) - p).norm() < 1e-10);
        // The centre maps to the origin of the target frame.
        prop_assert!(t.apply(&t.center()).norm() < 1e-10);
    }

    #[test]
    fn composition_is_associative(a in transform(), b in transform(), c in transform()) {
        let (l, r) = (a.compose(&b).compose(&c), a.compose(&b.compose(&c)));
        let (angle, distance) = l.distance_to(&r);
        prop_assert!(angle < 1e-12 && distance < 1e-9);
    }

    #[test]
    fn average_of_copies_is_the_copy(t in transform(), n in 1usize..6) {
        let avg = average_transforms(&vec![t; n]).unwrap();
        let (angle, distance) = avg.distance_to(&t);
        prop_assert!(angle < 1e-9 && distance < 1e-9);
    }
}

#[test]
fn average_of_symmetric_pair_is_midpoint() {
    // Rotations of ±10° about z average to the identity; translations to
    // their mean.
    let a = RigidTransform::new(RotationMatrix::from_axis_angle(&Vector3::z(), 0.1745), Vector3::new(1.0, 0.0, 0.0));
    let b = RigidTransform::new(RotationMatrix::from_axis_angle(&Vector3::z(), -0.1745), Vector3::new(3.0, 2.0, 0.0));
    let avg = average_transforms(&[a, b]).unwrap();
    assert_abs_diff_eq!(avg.rotation.angle(), 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(avg.translation, Vector3::new(2.0, 1.0, 0.0), epsilon = 1e-12);
}

#[test]
fn half_turn_has_no_cayley_vector() {
    let r = RotationMatrix::from_axis_angle(&Vector3::x(), std::f64::consts::PI);
    assert!(CayleyVector::from_rotation(&r).is_err());
}

#[test]
fn non_orthogonal_matrix_is_rejected() {
    let m = nalgebra::Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    assert!(RotationMatrix::from_matrix(m).is_err());
    assert!(RotationMatrix::nearest(&m).orthogonality_error() < 1e-12);
}
