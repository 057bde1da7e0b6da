//! Control points and their image observations.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("marker id {0} appears more than once")]
    DuplicateId(u32),
    #[error("marker id {0} is not in the field")]
    UnknownMarker(u32),
    #[error("control points are coplanar (singular value ratio {ratio:.3e})")]
    Coplanar { ratio: f64 },
    #[error("field is empty")]
    Empty,
}

/// Surveyed control points keyed by marker id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationField {
    points: BTreeMap<u32, Vector3<f64>>,
}

impl CalibrationField {
    pub fn new(points: impl IntoIterator<Item = (u32, Vector3<f64>)>) -> Result<Self, FieldError> {
        let mut map = BTreeMap::new();
        for (id, p) in points {
            if map.insert(id, p).is_some() {
                return Err(FieldError::DuplicateId(id));
            }
        }
        Ok(Self { points: map })
    }

    pub fn get(&self, id: u32) -> Option<&Vector3<f64>> {
        self.points.get(&id)
    }

    pub fn resolve(&self, id: u32) -> Result<Vector3<f64>, FieldError> {
        self.points.get(&id).copied().ok_or(FieldError::UnknownMarker(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Vector3<f64>)> {
        self.points.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest over largest singular value of the centred point matrix.
    pub fn planarity_ratio(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let n = self.points.len() as f64;
        let mean = self.points.values().fold(Vector3::zeros(), |a, p| a + p) / n;
        let scatter = self.points.values().fold(Matrix3::zeros(), |a, p| a + (p - mean) * (p - mean).transpose());
        let ev = scatter.symmetric_eigenvalues();
        let (lo, hi) = (ev.min().max(0.0).sqrt(), ev.max().sqrt());
        if hi > 0.0 {
            lo / hi
        } else {
            0.0
        }
    }

    /// Rejects empty or coplanar fields.
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.points.is_empty() {
            return Err(FieldError::Empty);
        }
        let ratio = self.planarity_ratio();
        if ratio <= 1e-6 {
            return Err(FieldError::Coplanar { ratio });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerObservation {
    pub marker_id: u32,
    pub pixel: Vector2<f64>,
}

/// The markers found in one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageCorrespondences {
    pub image_id: String,
    pub camera: usize,
    /// Flight frame this image belongs to, when images are grouped by exposure.
    pub frame: Option<usize>,
    /// Rotation station during extrinsic calibration.
    pub session: Option<usize>,
    /// Surveyed position of the camera centre, world frame.
    pub position_prior: Option<Vector3<f64>>,
    pub points: Vec<MarkerObservation>,
}

impl ImageCorrespondences {
    pub fn new(image_id: impl Into<String>, camera: usize, points: Vec<MarkerObservation>) -> Self {
        Self { image_id: image_id.into(), camera, frame: None, session: None, position_prior: None, points }
    }

    /// World points and pixels, in observation order.
    #[allow(clippy::type_complexity)]
    pub fn resolve(&self, field: &CalibrationField) -> Result<(Vec<Vector3<f64>>, Vec<Vector2<f64>>), FieldError> {
        let mut world = Vec::with_capacity(self.points.len());
        let mut pixels = Vec::with_capacity(self.points.len());
        for p in &self.points {
            world.push(field.resolve(p.marker_id)?);
            pixels.push(p.pixel);
        }
        Ok((world, pixels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_ids_are_rejected() {
        let r = CalibrationField::new([(1, Vector3::zeros()), (1, Vector3::x())]);
        assert_eq!(r, Err(FieldError::DuplicateId(1)));
    }

    #[test]
    fn coplanar_field_is_rejected() {
        let f = CalibrationField::new((0..10).map(|i| (i, Vector3::new(i as f64, (i * i) as f64, 0.0)))).unwrap();
        assert!(matches!(f.validate(), Err(FieldError::Coplanar { .. })));
        let g = CalibrationField::new((0..10).map(|i| (i, Vector3::new(i as f64, (i * i) as f64, (i % 3) as f64)))).unwrap();
        assert!(g.validate().is_ok());
    }
}
