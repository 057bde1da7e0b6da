//! Absolute pose of a generalized camera from ray/point correspondences.
//!
//! The translation enters the ray residuals linearly and is eliminated in
//! closed form, leaving a quadratic cost `rᵀQr − 2cᵀr + k` in the rotation
//! entries. Its stationary points on SO(3) satisfy the antisymmetry
//! conditions `RᵀM − MᵀR = 0` and `MRᵀ − RMᵀ = 0` with `M = mat(Qr − c)`;
//! written in Cayley parameters and cleared of denominators these are six
//! quartics in three unknowns. All their real roots are found, completed
//! with the optimal translation, scored on the original cost, and the best
//! one is polished with LM.
//!
//! Cayley parameters cannot reach half-turns, and nadir-looking rigs sit
//! right next to one. The solver therefore works in a chart `R = R'·P`,
//! with `P` the identity or a half-turn about a coordinate axis, picked so
//! that the expected solution is far from the singular set.

mod action;
pub mod poly;
mod sampling;
mod system;

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3};
use thiserror::Error;

use crate::camera::GeneralizedObservation;
use crate::geometry::{skew, CayleyVector, RigidTransform, RotationMatrix, UnitQuaternion};
use crate::nlls::{self, LeastSquaresProblem, ParamBlock, Parameters, SolverConfig};
use crate::scalar::{lit, to_f64, Real};

pub use action::ActionRoots;
pub use system::{ReducedCost, StackedSystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpnpError {
    #[error("need at least {required} correspondences, got {got}")]
    TooFewPoints { got: usize, required: usize },
    #[error("world points are collinear or coincident")]
    DegenerateGeometry,
    #[error("ray directions are all parallel; translation is unobservable")]
    RankDeficientB,
    #[error("polynomial system has no real roots")]
    NoRealRoots,
    #[error("polynomial solver failed: {0}")]
    SolverFailure(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

/// Which root finder to use for the polynomial system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Macaulay null space and action-matrix eigenvectors.
    #[default]
    ActionMatrix,
    /// Newton from a grid of starts in four charts.
    Sampling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpnpConfig {
    pub backend: Backend,
    /// Polish the best candidate with LM on the ray residuals.
    pub refine: bool,
    /// Retry with the sampling backend when the action matrix breaks down.
    pub fallback: bool,
}

impl Default for GpnpConfig {
    fn default() -> Self {
        Self { backend: Backend::ActionMatrix, refine: true, fallback: true }
    }
}

/// One stationary rotation completed with its optimal translation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseCandidate<T: Real> {
    pub rotation: RotationMatrix<T>,
    pub translation: Vector3<T>,
    /// Summed squared ray residual.
    pub cost: T,
    /// Cayley parameters of `rotation·chartᵀ`.
    pub cayley: CayleyVector<T>,
    /// The chart the Cayley parameters are expressed in.
    pub chart: RotationMatrix<T>,
    pub positive_depths: usize,
}

impl<T: Real> PoseCandidate<T> {
    pub fn pose(&self) -> RigidTransform<T> {
        RigidTransform::new(self.rotation, self.translation)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub backend: Option<Backend>,
    /// Dimension of the Macaulay null space, per chart solved.
    pub null_dims: Vec<usize>,
    pub basis_condition: f64,
    pub real_roots: usize,
    pub charts: usize,
    /// Reciprocal condition number of `BᵀB`.
    pub translation_rcond: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpnpResult<T: Real> {
    pub best: PoseCandidate<T>,
    /// All distinct candidates, most points in front first, then cheapest.
    pub candidates: Vec<PoseCandidate<T>>,
    pub diagnostics: Diagnostics,
}

/// Builds the stacked system; see [`StackedSystem::build`].
pub fn build_system<T: Real>(observations: &[GeneralizedObservation<T>]) -> Result<StackedSystem<T>, GpnpError> {
    StackedSystem::build(observations)
}

/// Optimal translation for a fixed rotation.
pub fn solve_translation<T: Real>(sys: &StackedSystem<T>, rotation: &RotationMatrix<T>) -> Vector3<T> {
    sys.solve_translation(rotation)
}

/// The six cleared polynomials of the reduced cost (normalized so that
/// `max |Qᵢⱼ| = 1`), in the identity chart.
pub fn polynomial_system<T: Real>(sys: &StackedSystem<T>) -> [poly::Quartic; 6] {
    let red = sys.reduced();
    poly::optimality_system(&red.q, &red.c)
}

/// `(E₁₂, E₁₃, E₂₃, F₁₂, F₁₃, F₂₃)` at `q`, multiplied through by `(1+|q|²)²`.
pub fn optimality_polynomials<T: Real>(sys: &StackedSystem<T>, q: &CayleyVector<T>) -> SVector<f64, 6> {
    let polys = polynomial_system(sys);
    poly::evaluate(&polys, &q.vector().map(to_f64)).0
}

/// Scale-free stationarity residual of a candidate in its own chart: each
/// polynomial value relative to the sum of magnitudes of its terms.
pub fn stationarity<T: Real>(sys: &StackedSystem<T>, candidate: &PoseCandidate<T>) -> f64 {
    let chart = candidate.chart.matrix().map(to_f64);
    let red = sys.reduced().in_chart(&chart);
    let polys = poly::optimality_system(&red.q, &red.c);
    poly::relative_residual(&polys, &candidate.cayley.vector().map(to_f64))
}

/// Real roots (Cayley vectors, identity chart) of the optimality system.
pub fn solve_rotation<T: Real>(sys: &StackedSystem<T>, backend: Backend) -> Result<Vec<CayleyVector<T>>, GpnpError> {
    let polys = polynomial_system(sys);
    let roots = roots_in_chart(&polys, backend)?.0;
    if roots.is_empty() {
        return Err(GpnpError::NoRealRoots);
    }
    Ok(roots.iter().map(|q| CayleyVector(q.map(lit))).collect())
}

/// Polished, deduplicated real roots of one chart's system.
fn roots_in_chart(polys: &[poly::Quartic; 6], backend: Backend) -> Result<(Vec<Vector3<f64>>, Option<ActionRoots>), GpnpError> {
    let (raw, info) = match backend {
        Backend::ActionMatrix => {
            let found = action::solve(polys)?;
            (found.roots.clone(), Some(found))
        }
        Backend::Sampling => (sampling::solve(polys), None),
    };
    let mut roots: Vec<Vector3<f64>> = Vec::new();
    for q in raw {
        let Some(q) = sampling::newton(polys, q, 20) else { continue };
        if poly::relative_residual(polys, &q) >= 1e-6 {
            continue;
        }
        if !roots.iter().any(|r| (r - q).norm() < 1e-8 * (1.0 + q.norm())) {
            roots.push(q);
        }
    }
    Ok((roots, info))
}

/// Half-turn about a coordinate axis (`None` is the identity).
fn half_turn(axis: Option<usize>) -> Matrix3<f64> {
    match axis {
        None => Matrix3::identity(),
        Some(a) => {
            let mut m = Matrix3::from_diagonal_element(-1.0);
            m[(a, a)] = 1.0;
            m
        }
    }
}

/// The chart in which `rotation` is farthest from a half-turn: the
/// quaternion component of largest magnitude becomes the scalar part.
fn chart_for(rotation: &Matrix3<f64>) -> Option<usize> {
    let q = UnitQuaternion::from_rotation(&RotationMatrix::from_matrix_unchecked(*rotation)).to_array();
    let (i, _) = q.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap();
    if i == 0 {
        None
    } else {
        Some(i - 1)
    }
}

/// A cheap rotation guess from the unconstrained minimizers of the reduced
/// cost, used only to choose the chart.
fn rough_rotation(red: &ReducedCost) -> Matrix3<f64> {
    let mat = |v: &SVector<f64, 9>| Matrix3::from_fn(|i, j| v[3 * i + j]);
    let project = |m: Matrix3<f64>| {
        let m = if m.determinant() < 0.0 { -m } else { m };
        RotationMatrix::nearest(&m).into_inner()
    };
    let mut guesses = Vec::with_capacity(2);
    let eig = red.q.symmetric_eigen();
    let imin = eig.eigenvalues.imin();
    guesses.push(project(mat(&eig.eigenvectors.column(imin).into_owned())));
    if let Some(inv) = red.q.try_inverse() {
        let r = inv * red.c;
        if r.iter().all(|x| x.is_finite()) {
            guesses.push(project(mat(&r)));
        }
    }
    guesses.into_iter().min_by(|a, b| red.eval(a).total_cmp(&red.eval(b))).unwrap()
}

/// Solves for the pose of a generalized camera.
pub fn solve_pose<T: Real>(observations: &[GeneralizedObservation<T>], config: &GpnpConfig) -> Result<GpnpResult<T>, GpnpError> {
    if observations.len() < 3 {
        return Err(GpnpError::TooFewPoints { got: observations.len(), required: 3 });
    }
    check_world_points(observations)?;
    let sys = StackedSystem::build(observations)?;
    solve_system(&sys, config)
}

fn check_world_points<T: Real>(observations: &[GeneralizedObservation<T>]) -> Result<(), GpnpError> {
    let n = observations.len() as f64;
    let pts: Vec<Vector3<f64>> = observations.iter().map(|o| o.point.map(to_f64)).collect();
    let mean = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let scatter = pts.iter().fold(Matrix3::zeros(), |a, p| a + (p - mean) * (p - mean).transpose());
    let mut ev = scatter.symmetric_eigenvalues();
    ev.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(GpnpError::DegenerateGeometry);
    }
    Ok(())
}

/// Solves from an already built system.
pub fn solve_system<T: Real>(sys: &StackedSystem<T>, config: &GpnpConfig) -> Result<GpnpResult<T>, GpnpError> {
    let red = sys.reduced();
    let mut diagnostics = Diagnostics::default();
    let bt_b = sys.b.transpose() * &sys.b;
    let ev = bt_b.map(to_f64).symmetric_eigenvalues();
    diagnostics.translation_rcond = ev.min() / ev.max();

    let mut roots: Vec<(Vector3<f64>, Option<usize>)> = Vec::new();
    let mut backend = config.backend;
    let mut charts_done: Vec<Option<usize>> = Vec::new();
    let mut next_chart = Some(chart_for(&rough_rotation(&red)));

    while let Some(chart) = next_chart.take() {
        if charts_done.contains(&chart) {
            break;
        }
        charts_done.push(chart);
        let local = red.in_chart(&half_turn(chart));
        let polys = poly::optimality_system(&local.q, &local.c);
        let found = match roots_in_chart(&polys, backend) {
            Ok((r, info)) if !r.is_empty() => Ok((r, info)),
            Ok(_) => Err(GpnpError::NoRealRoots),
            Err(e) => Err(e),
        };
        let (found, info) = match found {
            Ok(v) => v,
            Err(e) if config.fallback && backend == Backend::ActionMatrix => {
                let _ = e;
                backend = Backend::Sampling;
                charts_done.pop();
                next_chart = Some(chart);
                continue;
            }
            Err(e) => {
                if roots.is_empty() {
                    return Err(e);
                }
                break;
            }
        };
        if let Some(info) = info {
            diagnostics.null_dims.push(info.null_dim);
            diagnostics.basis_condition = info.basis_condition;
        }
        roots.extend(found.into_iter().map(|q| (q, chart)));

        // If the best root sits close to a half-turn of this chart, look
        // again from the chart that centres it.
        let best = roots
            .iter()
            .map(|(q, c)| CayleyVector(*q).to_rotation().into_inner() * half_turn(*c))
            .min_by(|a, b| red.eval(a).total_cmp(&red.eval(b)))
            .unwrap();
        let preferred = chart_for(&best);
        if preferred != chart {
            let w = UnitQuaternion::from_rotation(&RotationMatrix::from_matrix_unchecked(best * half_turn(chart).transpose())).w;
            if w.abs() < 0.5 {
                next_chart = Some(preferred);
            }
        }
        // The sampling backend is not guaranteed to be complete, so it
        // always covers every chart.
        if backend == Backend::Sampling && next_chart.is_none() {
            next_chart = [None, Some(0), Some(1), Some(2)].into_iter().find(|c| !charts_done.contains(c));
        }
    }
    diagnostics.backend = Some(backend);
    diagnostics.charts = charts_done.len();
    diagnostics.real_roots = roots.len();

    let mut candidates: Vec<PoseCandidate<T>> = roots
        .iter()
        .map(|(q, chart)| {
            let p = half_turn(*chart);
            let r = (CayleyVector(*q).to_rotation().into_inner() * p).map(lit::<T>);
            make_candidate(sys, RotationMatrix::nearest(&r))
        })
        .collect();
    sort_candidates(&mut candidates);
    dedupe(&mut candidates);

    if config.refine {
        let refined = refine_candidate(sys, &candidates[0]).map_err(|e| GpnpError::NumericalFailure(e.to_string()))?;
        candidates[0] = refined;
        sort_candidates(&mut candidates);
        dedupe(&mut candidates);
    }
    Ok(GpnpResult { best: candidates[0].clone(), candidates, diagnostics })
}

fn make_candidate<T: Real>(sys: &StackedSystem<T>, rotation: RotationMatrix<T>) -> PoseCandidate<T> {
    let translation = sys.solve_translation(&rotation);
    let pose = RigidTransform::new(rotation, translation);
    let p = half_turn(chart_for(&rotation.matrix().map(to_f64)));
    let chart = RotationMatrix::from_matrix_unchecked(p.map(lit::<T>));
    let local = RotationMatrix::from_matrix_unchecked(rotation.matrix() * chart.matrix().transpose());
    // In its own chart the rotation has |w| ≥ 1/2, so this cannot fail.
    let cayley = CayleyVector::from_rotation(&local).unwrap_or_else(|_| CayleyVector::zero());
    PoseCandidate { rotation, translation, cost: sys.cost(&pose), cayley, chart, positive_depths: sys.positive_depths(&pose) }
}

/// Candidates with more points in front of their rays come first; among
/// equals, cheapest first.
fn sort_candidates<T: Real>(c: &mut [PoseCandidate<T>]) {
    c.sort_by(|a, b| b.positive_depths.cmp(&a.positive_depths).then(to_f64(a.cost).total_cmp(&to_f64(b.cost))));
}

fn dedupe<T: Real>(c: &mut Vec<PoseCandidate<T>>) {
    let mut out: Vec<PoseCandidate<T>> = Vec::with_capacity(c.len());
    for cand in c.drain(..) {
        if !out.iter().any(|o| to_f64(o.rotation.angle_to(&cand.rotation)) < 1e-8) {
            out.push(cand);
        }
    }
    *c = out;
}

/// Ray residuals with the translation eliminated, `G·(A·r − D)`, as a
/// function of the rotation alone.
struct ProjectedResiduals<'a, T: Real> {
    sys: &'a StackedSystem<T>,
}

impl<T: Real> LeastSquaresProblem<T> for ProjectedResiduals<'_, T> {
    fn residuals(&self, p: &Parameters<T>) -> DVector<T> {
        let r = DVector::from_column_slice(&p.rotation(0).to_row_major());
        self.sys.apply_g(&(&self.sys.a * r - &self.sys.d))
    }

    fn jacobian(&self, p: &Parameters<T>) -> Option<DMatrix<T>> {
        let rot = p.rotation(0);
        let obs = self.sys.observations();
        let mut raw = DMatrix::zeros(3 * obs.len(), 3);
        for (i, o) in obs.iter().enumerate() {
            let block = -(skew(&o.direction) * skew(&rot.apply(&o.point)));
            raw.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&block);
        }
        let mut out = DMatrix::zeros(raw.nrows(), 3);
        for j in 0..3 {
            out.set_column(j, &self.sys.apply_g(&raw.column(j).into_owned()));
        }
        Some(out)
    }
}

/// LM on the rotation with the translation kept at its optimum.
pub fn refine_candidate<T: Real>(sys: &StackedSystem<T>, initial: &PoseCandidate<T>) -> Result<PoseCandidate<T>, nlls::NlsError> {
    let problem = ProjectedResiduals { sys };
    let start = Parameters::new(vec![ParamBlock::Rotation(initial.rotation)]);
    let (x, _) = nlls::minimize(&problem, start, &SolverConfig::default())?;
    let candidate = make_candidate(sys, *x.rotation(0));
    Ok(if candidate.cost <= initial.cost { candidate } else { initial.clone() })
}

/// Polishes a pose on the ray residuals; the cost never increases.
pub fn refine_pose<T: Real>(
    observations: &[GeneralizedObservation<T>],
    initial: &RigidTransform<T>,
) -> Result<PoseCandidate<T>, GpnpError> {
    let sys = StackedSystem::build(observations)?;
    // The optimal translation for the starting rotation is never worse than
    // the one supplied.
    let start = make_candidate(&sys, initial.rotation);
    refine_candidate(&sys, &start).map_err(|e| GpnpError::NumericalFailure(e.to_string()))
}
