//! Calibration and absolute pose estimation for divergent multi-camera rigs.
//!
//! The rig is treated as one generalized camera: every observation becomes a
//! ray with its own origin, and the world pose is recovered from ray/point
//! correspondences by eliminating the translation and solving the polynomial
//! optimality conditions of the rotation.
//!
//! The numeric core is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the pipelines use.

// Negated comparisons are used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod dlt;
pub mod evaluation;
pub mod extrinsic;
pub mod field;
pub mod geometry;
pub mod gpnp;
pub mod intrinsic;
pub mod io;
pub mod nlls;
pub mod scalar;
pub mod simulator;

pub use scalar::Real;

pub type Rotation = geometry::RotationMatrix<f64>;
pub type Cayley = geometry::CayleyVector<f64>;
pub type Quaternion = geometry::UnitQuaternion<f64>;
pub type Transform = geometry::RigidTransform<f64>;
pub type Intrinsics = camera::CameraIntrinsics<f64>;
pub type Rig = camera::CameraRig<f64>;
pub type Observation = camera::GeneralizedObservation<f64>;
