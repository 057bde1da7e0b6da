use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rigpose::camera::{generalized_residual, CameraIntrinsics, CameraRig, GeneralizedObservation};
use rigpose::geometry::{RigidTransform, RotationMatrix};
use rigpose::simulator::{make_dmais_rig, RigPreset};

fn rig() -> CameraRig<f64> {
    make_dmais_rig(&RigPreset::dmais()).unwrap()
}

fn intrinsics(d: f64) -> CameraIntrinsics<f64> {
    CameraIntrinsics { fx: 1200.0, fy: 1180.0, cx: 640.0, cy: 480.0, d, width: 1280, height: 960 }
}

proptest! {
    #[test]
    fn undistortion_inverts_distortion(u in 0.0..1280.0f64, v in 0.0..960.0f64, d in -0.2..0.2f64) {
        let intr = intrinsics(d);
        let p = Vector2::new(u, v);
        let und = intr.undistort_pixel(&intr.distort_pixel(&p)).unwrap();
        prop_assert!((und - p).norm() < 1e-6);
    }

    #[test]
    fn projection_lies_on_the_ray(x in -5.0..5.0f64, y in -4.0..4.0f64, z in 10.0..100.0f64, d in -0.1..0.1f64) {
        let intr = intrinsics(d);
        let pc = Vector3::new(x, y, z);
        let p = intr.project_point(&pc).unwrap();
        let dir = intr.normalized_direction(&intr.undistort_pixel_with_margin(&p, 10.0).unwrap());
        prop_assert!((dir * z - pc).norm() < 1e-6 * z);
    }

    #[test]
    fn rig_rays_pass_through_their_points(cam in 0usize..5, u in 0.0..4096.0f64, v in 0.0..3000.0f64, depth in 50.0..500.0f64) {
        // Back-project a pixel to a world point, then check the generalized
        // residual of that pixel's ray vanishes at the rig pose.
        let rig = rig();
        let rig_pose = RigidTransform::new(RotationMatrix::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7), Vector3::new(3.0, -2.0, 10.0));
        let cam_pose = rig.camera_pose(cam, &rig_pose).unwrap();
        let intr = rig.cameras[cam].intrinsics;
        let p = Vector2::new(u, v);
        let pc = intr.normalized_direction(&intr.undistort_pixel(&p).unwrap()) * depth;
        let world = cam_pose.inverse().apply(&pc);
        let reprojected = rig.project(cam, &rig_pose, &world).unwrap();
        prop_assert!((reprojected - p).norm() < 1e-6);
        let obs = rig.observe(cam, &p, world).unwrap();
        prop_assert!(generalized_residual(&obs, &rig_pose).norm() < 1e-9 * depth);
        prop_assert!(obs.depth(&rig_pose) > 0.0);
    }
}

#[test]
fn centered_camera_projects_axis_to_principal_point() {
    let intr = CameraIntrinsics::centered(1000.0, 800, 600);
    let p = intr.project_point(&Vector3::new(0.0, 0.0, 5.0)).unwrap();
    assert_eq!(p, Vector2::new(400.0, 300.0));
}

#[test]
fn point_behind_camera_is_rejected() {
    assert!(intrinsics(0.0).project_point(&Vector3::new(0.0, 0.0, -1.0)).is_err());
}

#[test]
fn invalid_intrinsics_are_rejected() {
    let mut intr = intrinsics(0.0);
    intr.fx = -1.0;
    assert!(intr.validate().is_err());
    let mut intr = intrinsics(0.0);
    intr.cx = 5000.0;
    assert!(intr.validate().is_err());
}

#[test]
fn rig_rejects_bad_reference_and_index() {
    let rig = rig();
    assert!(CameraRig::new(rig.cameras.clone(), 9).is_err());
    assert!(rig.camera(5).is_err());
}

#[test]
fn reference_camera_pose_is_rig_pose() {
    let rig = rig();
    let pose = RigidTransform::new(RotationMatrix::from_axis_angle(&Vector3::y(), 0.3), Vector3::new(1.0, 2.0, 3.0));
    let (angle, distance) = rig.camera_pose(rig.reference, &pose).unwrap().distance_to(&pose);
    assert!(angle < 1e-15 && distance < 1e-15);
}

#[test]
fn residual_is_perpendicular_distance() {
    // Ray along z from the origin; point one meter to the side at depth 10.
    let obs = GeneralizedObservation::new(Vector3::z(), Vector3::zeros(), Vector3::new(1.0, 0.0, 10.0), 0);
    let r = generalized_residual(&obs, &RigidTransform::<f64>::identity());
    assert!((r.norm() - 1.0).abs() < 1e-15);
    assert_eq!(obs.depth(&RigidTransform::<f64>::identity()), 10.0);
}
