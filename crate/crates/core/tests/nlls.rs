use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rigpose::geometry::RotationMatrix;
use rigpose::nlls::{check_jacobian, minimize, LeastSquaresProblem, ParamBlock, Parameters, SolverConfig};

/// `y = a·exp(b·x) + c` sampled at fixed abscissae.
struct ExpCurve {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl ExpCurve {
    fn sampled(a: f64, b: f64, c: f64) -> Self {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y = x.iter().map(|x| a * (b * x).exp() + c).collect();
        Self { x, y }
    }
}

impl LeastSquaresProblem<f64> for ExpCurve {
    fn residuals(&self, p: &Parameters<f64>) -> DVector<f64> {
        let v = p.euclidean(0);
        DVector::from_iterator(self.x.len(), self.x.iter().zip(&self.y).map(|(x, y)| v[0] * (v[1] * x).exp() + v[2] - y))
    }

    fn jacobian(&self, p: &Parameters<f64>) -> Option<DMatrix<f64>> {
        let v = p.euclidean(0);
        let mut j = DMatrix::zeros(self.x.len(), 3);
        for (i, x) in self.x.iter().enumerate() {
            let e = (v[1] * x).exp();
            j[(i, 0)] = e;
            j[(i, 1)] = v[0] * x * e;
            j[(i, 2)] = 1.0;
        }
        Some(j)
    }
}

/// Residuals `R·pᵢ − qᵢ` over a single rotation block.
struct Alignment {
    p: Vec<Vector3<f64>>,
    q: Vec<Vector3<f64>>,
}

impl LeastSquaresProblem<f64> for Alignment {
    fn residuals(&self, params: &Parameters<f64>) -> DVector<f64> {
        let r = params.rotation(0);
        DVector::from_iterator(
            3 * self.p.len(),
            self.p.iter().zip(&self.q).flat_map(|(p, q)| (r.apply(p) - q).iter().copied().collect::<Vec<_>>()),
        )
    }
}

fn start(v: [f64; 3]) -> Parameters<f64> {
    Parameters::new(vec![ParamBlock::Euclidean(DVector::from_row_slice(&v))])
}

#[test]
fn fits_noise_free_curve_exactly() {
    let problem = ExpCurve::sampled(2.0, -1.5, 0.5);
    let (x, report) = minimize(&problem, start([1.0, -0.5, 0.0]), &SolverConfig::default()).unwrap();
    let v = x.euclidean(0);
    assert!((v[0] - 2.0).abs() < 1e-8 && (v[1] + 1.5).abs() < 1e-8 && (v[2] - 0.5).abs() < 1e-8, "{v}");
    assert!(report.final_cost < 1e-20);
    assert!(!report.finite_difference);
    // Accepted steps never increase the cost.
    assert!(report.cost_trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn analytic_jacobian_matches_finite_differences() {
    let problem = ExpCurve::sampled(2.0, -1.5, 0.5);
    assert!(check_jacobian(&problem, &start([1.3, -0.7, 0.2])).unwrap() < 1e-6);
}

#[test]
fn falls_back_to_finite_differences() {
    let angle = 0.8;
    let truth = RotationMatrix::from_axis_angle(&Vector3::new(1.0, -1.0, 2.0), angle);
    let p: Vec<Vector3<f64>> = (0..6).map(|i| Vector3::new(i as f64, (i * i) as f64 * 0.3, 1.0 - i as f64)).collect();
    let q = p.iter().map(|p| truth.apply(p)).collect();
    let problem = Alignment { p, q };
    let (x, report) =
        minimize(&problem, Parameters::new(vec![ParamBlock::Rotation(RotationMatrix::identity())]), &SolverConfig::default()).unwrap();
    assert!(report.finite_difference);
    assert!(x.rotation(0).angle_to(&truth) < 1e-8);
}

#[test]
fn noisy_alignment_matches_closed_form() {
    // The orthogonal Procrustes solution from the SVD of Σ qᵢ pᵢᵀ is the
    // exact least-squares optimum, so LM must land on it.
    let truth = RotationMatrix::from_axis_angle(&Vector3::new(0.3, 0.2, -1.0), 1.1);
    let p: Vec<Vector3<f64>> =
        (0..10).map(|i| Vector3::new((i as f64).sin() * 3.0, (i as f64 * 0.7).cos() * 2.0, i as f64 * 0.4 - 2.0)).collect();
    let q: Vec<Vector3<f64>> = p
        .iter()
        .enumerate()
        .map(|(i, p)| truth.apply(p) + Vector3::new((i as f64 * 1.3).sin(), (i as f64 * 2.1).cos(), (i as f64 * 0.9).sin()) * 0.05)
        .collect();
    let h: Matrix3<f64> = p.iter().zip(&q).map(|(p, q)| q * p.transpose()).sum();
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    s[(2, 2)] = (u * vt).determinant().signum();
    let oracle = RotationMatrix::from_matrix(u * s * vt).unwrap();
    let (x, _) =
        minimize(&Alignment { p, q }, Parameters::new(vec![ParamBlock::Rotation(RotationMatrix::identity())]), &SolverConfig::default())
            .unwrap();
    assert!(x.rotation(0).angle_to(&oracle) < 1e-9);
}

#[test]
fn non_finite_residuals_are_an_error() {
    struct Nan;
    impl LeastSquaresProblem<f64> for Nan {
        fn residuals(&self, _: &Parameters<f64>) -> DVector<f64> {
            DVector::from_element(2, f64::NAN)
        }
    }
    assert!(minimize(&Nan, start([0.0, 0.0, 0.0]), &SolverConfig::default()).is_err());
}
