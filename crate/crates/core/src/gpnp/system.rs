use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};

use super::GpnpError;
use crate::camera::GeneralizedObservation;
use crate::geometry::{skew, RigidTransform, RotationMatrix};
use crate::scalar::{lit, to_f64, Real};

/// The stacked linear form of the ray residuals,
/// `[fᵢ]×(R·Mᵢ + t − vᵢ) = Aᵢ·r + Bᵢ·t − Dᵢ`, with `r` the row-major
/// vectorization of `R`.
#[derive(Debug, Clone)]
pub struct StackedSystem<T: Real> {
    /// `3n × 9`, blocks `[fᵢ]×·Yᵢ`.
    pub a: DMatrix<T>,
    /// `3n × 3`, blocks `[fᵢ]×`.
    pub b: DMatrix<T>,
    /// `3n`, blocks `[fᵢ]×·vᵢ`.
    pub d: DVector<T>,
    btb_inv: Matrix3<T>,
    observations: Vec<GeneralizedObservation<T>>,
}

/// `Yᵢ` such that `Yᵢ·vec(R) = R·M` for row-major `vec`.
fn y_block<T: Real>(m: &Vector3<T>) -> SMatrix<T, 3, 9> {
    let mut y = SMatrix::<T, 3, 9>::zeros();
    for r in 0..3 {
        for k in 0..3 {
            y[(r, 3 * r + k)] = m[k];
        }
    }
    y
}

impl<T: Real> StackedSystem<T> {
    pub fn build(observations: &[GeneralizedObservation<T>]) -> Result<Self, GpnpError> {
        let n = observations.len();
        if n < 3 {
            return Err(GpnpError::TooFewPoints { got: n, required: 3 });
        }
        let mut a = DMatrix::zeros(3 * n, 9);
        let mut b = DMatrix::zeros(3 * n, 3);
        let mut d = DVector::zeros(3 * n);
        let mut btb = Matrix3::zeros();
        for (i, o) in observations.iter().enumerate() {
            let s = skew(&o.direction);
            a.fixed_view_mut::<3, 9>(3 * i, 0).copy_from(&(s * y_block(&o.point)));
            b.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&s);
            d.fixed_rows_mut::<3>(3 * i).copy_from(&(s * o.origin));
            btb += s.transpose() * s;
        }
        // BᵀB = Σ (I − f fᵀ); it is singular exactly when every f is parallel.
        let eig = btb.symmetric_eigenvalues();
        if eig.min() <= lit::<T>(1e-9) * eig.max().max(T::one()) {
            return Err(GpnpError::RankDeficientB);
        }
        let btb_inv = btb.try_inverse().ok_or(GpnpError::RankDeficientB)?;
        Ok(Self { a, b, d, btb_inv, observations: observations.to_vec() })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[GeneralizedObservation<T>] {
        &self.observations
    }

    /// `B⁺ = (BᵀB)⁻¹Bᵀ`.
    pub fn b_pinv(&self) -> DMatrix<T> {
        let btb_inv = DMatrix::from_fn(3, 3, |i, j| self.btb_inv[(i, j)]);
        btb_inv * self.b.transpose()
    }

    /// `G = I − BB⁺`, formed explicitly (`3n × 3n`).
    pub fn g_matrix(&self) -> DMatrix<T> {
        let n = self.b.nrows();
        DMatrix::identity(n, n) - &self.b * self.b_pinv()
    }

    /// `(I − BB⁺)ᵀ(I − BB⁺)`, the squared form of the same projector.
    pub fn g_squared_form(&self) -> DMatrix<T> {
        let p = self.g_matrix();
        p.transpose() * p
    }

    /// `G·x` without forming `G`.
    pub fn apply_g(&self, x: &DVector<T>) -> DVector<T> {
        let bt_x = self.b.transpose() * x;
        let coef = self.btb_inv * Vector3::new(bt_x[0], bt_x[1], bt_x[2]);
        x - &self.b * DVector::from_column_slice(coef.as_slice())
    }

    /// Least-squares translation for a fixed rotation, `t = −B⁺(A·r − D)`.
    pub fn solve_translation(&self, rotation: &RotationMatrix<T>) -> Vector3<T> {
        let r = DVector::from_column_slice(&rotation.to_row_major());
        let e = &self.a * r - &self.d;
        let bt_e = self.b.transpose() * e;
        -(self.btb_inv * Vector3::new(bt_e[0], bt_e[1], bt_e[2]))
    }

    /// Stacked residual `A·r + B·t − D`.
    pub fn residual(&self, pose: &RigidTransform<T>) -> DVector<T> {
        let r = DVector::from_column_slice(&pose.rotation.to_row_major());
        let t = DVector::from_column_slice(pose.translation.as_slice());
        &self.a * r + &self.b * t - &self.d
    }

    /// The summed space error `Σ ‖[fᵢ]×(R·Mᵢ + t − vᵢ)‖²`, evaluated per ray.
    pub fn cost(&self, pose: &RigidTransform<T>) -> T {
        self.observations.iter().map(|o| crate::camera::generalized_residual(o, pose).norm_squared()).fold(T::zero(), |acc, v| acc + v)
    }

    /// Number of points in front of their ray origin.
    pub fn positive_depths(&self, pose: &RigidTransform<T>) -> usize {
        self.observations.iter().filter(|o| o.depth(pose) > T::zero()).count()
    }

    /// Reduced cost in `f64`, from world points re-centred at their centroid
    /// (this leaves `Q` and `c` unchanged but avoids cancellation) and scaled
    /// so that `max |Qᵢⱼ| = 1`.
    pub fn reduced(&self) -> ReducedCost {
        let n = self.observations.len();
        let centroid = self.observations.iter().fold(Vector3::<f64>::zeros(), |acc, o| acc + o.point.map(to_f64)) / n as f64;
        let mut ata = SMatrix::<f64, 9, 9>::zeros();
        let mut atb = SMatrix::<f64, 9, 3>::zeros();
        let mut atd = SVector::<f64, 9>::zeros();
        let mut btd = Vector3::<f64>::zeros();
        let mut btb = Matrix3::<f64>::zeros();
        let mut dtd = 0.0;
        for o in &self.observations {
            let f = o.direction.map(to_f64);
            let s = skew(&f);
            let ai = s * y_block(&(o.point.map(to_f64) - centroid));
            let di = s * o.origin.map(to_f64);
            ata += ai.transpose() * ai;
            atb += ai.transpose() * s;
            atd += ai.transpose() * di;
            btd += s.transpose() * di;
            btb += s.transpose() * s;
            dtd += di.norm_squared();
        }
        let inv = btb.try_inverse().unwrap_or_else(Matrix3::zeros);
        let q = ata - atb * inv * atb.transpose();
        let c = atd - atb * inv * btd;
        let k = dtd - btd.dot(&(inv * btd));
        let q = (q + q.transpose()) * 0.5;
        let scale = q.amax().max(f64::MIN_POSITIVE);
        ReducedCost { q: q / scale, c: c / scale, k: k / scale, scale }
    }
}

/// `rᵀQr − 2cᵀr + k` as a function of the row-major rotation vector,
/// normalized so that `max |Qᵢⱼ| = 1` (`scale` undoes that).
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedCost {
    pub q: SMatrix<f64, 9, 9>,
    pub c: SVector<f64, 9>,
    pub k: f64,
    pub scale: f64,
}

impl ReducedCost {
    pub fn eval(&self, r: &Matrix3<f64>) -> f64 {
        let v = super::poly::row_major(r);
        (v.dot(&(self.q * v)) - 2.0 * self.c.dot(&v) + self.k) * self.scale
    }

    /// The same cost seen from a chart where `R = R'·P`, i.e. as a function
    /// of `R'`.
    pub fn in_chart(&self, chart: &Matrix3<f64>) -> Self {
        let mut t = SMatrix::<f64, 9, 9>::zeros();
        for b in 0..3 {
            t.fixed_view_mut::<3, 3>(3 * b, 3 * b).copy_from(&chart.transpose());
        }
        Self { q: t.transpose() * self.q * t, c: t.transpose() * self.c, k: self.k, scale: self.scale }
    }
}
