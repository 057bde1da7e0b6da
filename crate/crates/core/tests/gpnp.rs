use nalgebra::Vector3;
use rand::Rng;
use rigpose::camera::{generalized_residual, CameraRig, GeneralizedObservation};
use rigpose::geometry::RigidTransform;
use rigpose::gpnp::{self, Backend, GpnpConfig, GpnpError};
use rigpose::simulator::{make_dmais_rig, random_pose_instance, seeded_rng, NoiseModel, PoseInstance, RigPreset};

fn rig() -> CameraRig<f64> {
    make_dmais_rig(&RigPreset::dmais()).unwrap()
}

fn instance(seed: u64, n: usize, sigma: f64) -> PoseInstance {
    let noise = if sigma > 0.0 { NoiseModel::gaussian(sigma) } else { NoiseModel::none() };
    random_pose_instance(&rig(), n, (50.0, 500.0), &noise, &mut seeded_rng(seed)).unwrap()
}

fn ray_cost(obs: &[GeneralizedObservation<f64>], pose: &RigidTransform<f64>) -> f64 {
    obs.iter().map(|o| generalized_residual(o, pose).norm_squared()).sum()
}

#[test]
fn recovers_noise_free_poses() {
    for (seed, n) in [(1, 4), (2, 6), (3, 10), (4, 50), (5, 200)] {
        let inst = instance(seed, n, 0.0);
        let res = gpnp::solve_pose(&inst.observations, &GpnpConfig::default()).unwrap();
        let (angle, distance) = res.best.pose().distance_to(&inst.pose);
        assert!(angle < 1e-9 && distance < 1e-6, "n={n}: {angle:e} rad {distance:e} m");
        assert_eq!(res.best.positive_depths, n);
    }
}

#[test]
fn reported_cost_is_the_ray_cost() {
    let inst = instance(7, 25, 1.0);
    let res = gpnp::solve_pose(&inst.observations, &GpnpConfig::default()).unwrap();
    for c in &res.candidates {
        let direct = ray_cost(&inst.observations, &c.pose());
        assert!((c.cost - direct).abs() <= 1e-9 * direct.max(1e-12), "{} vs {direct}", c.cost);
    }
}

#[test]
fn translation_is_optimal_for_the_rotation() {
    let inst = instance(8, 30, 2.0);
    let sys = gpnp::build_system(&inst.observations).unwrap();
    let t = gpnp::solve_translation(&sys, &inst.pose.rotation);
    let base = ray_cost(&inst.observations, &RigidTransform::new(inst.pose.rotation, t));
    let mut rng = seeded_rng(8);
    for _ in 0..20 {
        let dt = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-3;
        assert!(ray_cost(&inst.observations, &RigidTransform::new(inst.pose.rotation, t + dt)) >= base);
    }
}

#[test]
fn backends_agree_on_the_best_pose() {
    for seed in 10..15 {
        let inst = instance(seed, 20, 1.0);
        let action = gpnp::solve_pose(&inst.observations, &GpnpConfig::default()).unwrap();
        let sampling = gpnp::solve_pose(&inst.observations, &GpnpConfig { backend: Backend::Sampling, ..Default::default() }).unwrap();
        let (angle, distance) = action.best.pose().distance_to(&sampling.best.pose());
        assert!(angle < 1e-8 && distance < 1e-5, "seed {seed}: {angle:e} {distance:e}");
        assert!((action.best.cost - sampling.best.cost).abs() <= 1e-9 * action.best.cost);
    }
}

#[test]
fn best_candidate_is_no_worse_than_truth() {
    for seed in 20..30 {
        let inst = instance(seed, 15, 2.0);
        let res = gpnp::solve_pose(&inst.observations, &GpnpConfig::default()).unwrap();
        assert!(res.best.cost <= ray_cost(&inst.observations, &inst.pose) * (1.0 + 1e-9));
    }
}

#[test]
fn polynomial_system_vanishes_at_the_truth() {
    let inst = instance(31, 12, 0.0);
    let sys = gpnp::build_system(&inst.observations).unwrap();
    let q = rigpose::geometry::CayleyVector::from_rotation(&inst.pose.rotation).unwrap();
    let residual = gpnp::poly::relative_residual(&gpnp::polynomial_system(&sys), q.vector());
    assert!(residual < 1e-9, "{residual:e}");
}

#[test]
fn single_precision_solves_too() {
    let inst = instance(40, 30, 0.0);
    let obs: Vec<GeneralizedObservation<f32>> = inst
        .observations
        .iter()
        .map(|o| GeneralizedObservation::new(o.direction.cast(), o.origin.cast(), o.point.cast(), o.camera))
        .collect();
    let res = gpnp::solve_pose(&obs, &GpnpConfig::default()).unwrap();
    let r: nalgebra::Matrix3<f64> = res.best.rotation.matrix().cast();
    let angle = ((r.transpose() * inst.pose.rotation.matrix()).trace() - 1.0).clamp(-2.0, 2.0) / 2.0;
    assert!(angle.clamp(-1.0, 1.0).acos() < 1e-3);
}

#[test]
fn too_few_points_is_an_error() {
    let inst = instance(50, 3, 0.0);
    assert!(matches!(
        gpnp::solve_pose(&inst.observations[..2], &GpnpConfig::default()),
        Err(GpnpError::TooFewPoints { got: 2, required: 3 })
    ));
}

#[test]
fn coincident_points_are_degenerate() {
    let p = Vector3::new(1.0, 2.0, 100.0);
    let obs: Vec<_> = [Vector3::z(), Vector3::new(0.01, 0.0, 1.0), Vector3::new(0.0, 0.01, 1.0)]
        .iter()
        .map(|d| GeneralizedObservation::new(*d, Vector3::zeros(), p, 0))
        .collect();
    assert!(gpnp::solve_pose(&obs, &GpnpConfig::default()).is_err());
}
