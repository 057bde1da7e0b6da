//! Levenberg–Marquardt for small dense least-squares problems.
//!
//! Parameters are a list of blocks. Euclidean blocks are updated additively;
//! rotation blocks take a 3-vector increment `δ` applied on the left,
//! `R ← exp([δ]×)·R`, so a rotation never passes through a chart
//! singularity. Jacobians are always expressed with respect to these tangent
//! increments.
//!
//! Damping follows the textbook scheme: `λ₀ = 1e-3 · max diag(JᵀJ)`, divided
//! by ten on an accepted step and multiplied by ten on a rejected one. The
//! Jacobian columns are scaled to unit norm (MINPACK style) before damping so
//! that parameters with very different units (focal lengths in pixels next to
//! rotation increments in radians) are damped evenly.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::geometry::RotationMatrix;
use crate::scalar::{lit, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlsError {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("jacobian has shape {got:?}, expected {expected:?}")]
    JacobianShape { got: (usize, usize), expected: (usize, usize) },
}

/// One block of the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamBlock<T: Real> {
    Euclidean(DVector<T>),
    Rotation(RotationMatrix<T>),
}

impl<T: Real> ParamBlock<T> {
    pub fn tangent_dim(&self) -> usize {
        match self {
            ParamBlock::Euclidean(v) => v.len(),
            ParamBlock::Rotation(_) => 3,
        }
    }
}

/// Ordered parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T: Real> {
    pub blocks: Vec<ParamBlock<T>>,
}

impl<T: Real> Parameters<T> {
    pub fn new(blocks: Vec<ParamBlock<T>>) -> Self {
        Self { blocks }
    }

    pub fn tangent_dim(&self) -> usize {
        self.blocks.iter().map(ParamBlock::tangent_dim).sum()
    }

    /// Offset of each block in the tangent vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut acc = 0;
        for b in &self.blocks {
            out.push(acc);
            acc += b.tangent_dim();
        }
        out
    }

    pub fn euclidean(&self, block: usize) -> &DVector<T> {
        match &self.blocks[block] {
            ParamBlock::Euclidean(v) => v,
            ParamBlock::Rotation(_) => panic!("block {block} is a rotation"),
        }
    }

    pub fn rotation(&self, block: usize) -> &RotationMatrix<T> {
        match &self.blocks[block] {
            ParamBlock::Rotation(r) => r,
            ParamBlock::Euclidean(_) => panic!("block {block} is Euclidean"),
        }
    }

    /// Applies a tangent increment.
    pub fn retract(&self, delta: &DVector<T>) -> Self {
        let mut off = 0;
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                ParamBlock::Euclidean(v) => {
                    let n = v.len();
                    let out = v + delta.rows(off, n);
                    off += n;
                    ParamBlock::Euclidean(out)
                }
                ParamBlock::Rotation(r) => {
                    let w = Vector3::new(delta[off], delta[off + 1], delta[off + 2]);
                    off += 3;
                    ParamBlock::Rotation((RotationMatrix::exp(&w) * *r).renormalized())
                }
            })
            .collect();
        Self { blocks }
    }

    /// Norm of the Euclidean part, used for the relative step test.
    fn euclidean_norm(&self) -> T {
        let mut acc = T::zero();
        for b in &self.blocks {
            if let ParamBlock::Euclidean(v) = b {
                acc += v.norm_squared();
            }
        }
        acc.sqrt()
    }

    /// Per-coordinate magnitude used to size finite-difference steps.
    fn tangent_magnitudes(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.tangent_dim());
        for b in &self.blocks {
            match b {
                ParamBlock::Euclidean(v) => out.extend(v.iter().map(|x| x.abs())),
                ParamBlock::Rotation(_) => out.extend([T::zero(); 3]),
            }
        }
        out
    }
}

/// A residual function over [`Parameters`], optionally with an analytic
/// Jacobian (rows: residuals, columns: tangent coordinates).
pub trait LeastSquaresProblem<T: Real> {
    fn residuals(&self, params: &Parameters<T>) -> DVector<T>;

    fn jacobian(&self, _params: &Parameters<T>) -> Option<DMatrix<T>> {
        None
    }
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Gradient,
    Step,
    Cost,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { gradient_tolerance: 1e-10, step_tolerance: 1e-12, cost_tolerance: 1e-12, max_iterations: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T: Real> {
    pub initial_cost: T,
    /// Sum of squared residuals at the returned parameters.
    pub final_cost: T,
    /// Number of LM iterations (accepted or rejected).
    pub iterations: usize,
    pub convergence: Convergence,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_trace: Vec<T>,
    /// The Jacobian came from finite differences rather than the problem.
    pub finite_difference: bool,
}

fn all_finite<T: Real>(it: impl IntoIterator<Item = T>) -> bool {
    it.into_iter().all(|x| x.is_finite())
}

/// Central-difference Jacobian with step `1e-6·(1 + |x|)` per coordinate.
pub fn numeric_jacobian<T: Real, P: LeastSquaresProblem<T> + ?Sized>(problem: &P, params: &Parameters<T>) -> DMatrix<T> {
    let n = params.tangent_dim();
    let mags = params.tangent_magnitudes();
    let m = problem.residuals(params).len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let h = lit::<T>(1e-6) * (T::one() + mags[j]);
        let mut d = DVector::zeros(n);
        d[j] = h;
        let plus = problem.residuals(&params.retract(&d));
        d[j] = -h;
        let minus = problem.residuals(&params.retract(&d));
        jac.set_column(j, &((plus - minus) / (h + h)));
    }
    jac
}

/// Largest per-column deviation between the analytic and central-difference
/// Jacobians, relative to `max(1, max |column entry|)`. Returns `None` when
/// the problem has no analytic Jacobian.
pub fn check_jacobian<T: Real, P: LeastSquaresProblem<T> + ?Sized>(problem: &P, params: &Parameters<T>) -> Option<T> {
    let analytic = problem.jacobian(params)?;
    let numeric = numeric_jacobian(problem, params);
    if analytic.shape() != numeric.shape() {
        return Some(T::max_value().unwrap_or(T::one()));
    }
    let mut worst = T::zero();
    for j in 0..numeric.ncols() {
        let scale = numeric.column(j).amax().max(T::one());
        let dev = (analytic.column(j) - numeric.column(j)).amax() / scale;
        worst = worst.max(dev);
    }
    Some(worst)
}

/// Minimizes `Σ rᵢ²` starting from `initial`.
pub fn minimize<T: Real, P: LeastSquaresProblem<T> + ?Sized>(
    problem: &P,
    initial: Parameters<T>,
    config: &SolverConfig,
) -> Result<(Parameters<T>, SolveReport<T>), NlsError> {
    let n = initial.tangent_dim();
    let mut x = initial;
    let mut r = problem.residuals(&x);
    if !all_finite(r.iter().copied()) {
        return Err(NlsError::NumericalFailure("residuals are not finite at the initial parameters".into()));
    }
    let mut cost = r.norm_squared();
    let mut report = SolveReport {
        initial_cost: cost,
        final_cost: cost,
        iterations: 0,
        convergence: Convergence::MaxIterations,
        cost_trace: vec![cost],
        finite_difference: false,
    };
    if n == 0 {
        report.convergence = Convergence::Step;
        return Ok((x, report));
    }

    let eval_jacobian = |x: &Parameters<T>, report: &mut SolveReport<T>| -> Result<DMatrix<T>, NlsError> {
        let jac = match problem.jacobian(x) {
            Some(j) => j,
            None => {
                report.finite_difference = true;
                numeric_jacobian(problem, x)
            }
        };
        let expected = (r_len(problem, x), n);
        if jac.shape() != expected {
            return Err(NlsError::JacobianShape { got: jac.shape(), expected });
        }
        if !all_finite(jac.iter().copied()) {
            return Err(NlsError::NumericalFailure("jacobian is not finite".into()));
        }
        Ok(jac)
    };

    let gtol = lit::<T>(config.gradient_tolerance);
    let xtol = lit::<T>(config.step_tolerance);
    let ftol = lit::<T>(config.cost_tolerance);
    let tiny = T::default_epsilon() * T::default_epsilon();

    let mut jac = eval_jacobian(&x, &mut report)?;
    let mut scale = DVector::<T>::from_fn(n, |j, _| jac.column(j).norm().max(tiny));
    let mut lambda: Option<T> = None;

    while report.iterations < config.max_iterations {
        // Column-scaled normal equations.
        for j in 0..n {
            scale[j] = scale[j].max(jac.column(j).norm());
        }
        let mut js = jac.clone();
        for j in 0..n {
            let s = scale[j];
            js.column_mut(j).scale_mut(T::one() / s);
        }
        let g = js.transpose() * &r;
        if g.amax() < gtol {
            report.convergence = Convergence::Gradient;
            break;
        }
        let h = js.transpose() * &js;
        let lam = *lambda.get_or_insert_with(|| lit::<T>(1e-3) * h.diagonal().max());

        report.iterations += 1;
        let mut damped = h.clone();
        for j in 0..n {
            damped[(j, j)] += lam;
        }
        let step_scaled = match damped.cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => {
                lambda = Some(lam * lit(10.0));
                continue;
            }
        };
        let step = step_scaled.component_div(&scale);
        if step.norm() <= xtol * (x.euclidean_norm() + xtol) {
            report.convergence = Convergence::Step;
            break;
        }
        let x_new = x.retract(&step);
        let r_new = problem.residuals(&x_new);
        let cost_new = r_new.norm_squared();
        if cost_new.is_finite() && cost_new < cost {
            let rel = (cost - cost_new) / cost.max(tiny);
            x = x_new;
            r = r_new;
            cost = cost_new;
            report.cost_trace.push(cost);
            lambda = Some((lam / lit(10.0)).max(tiny));
            if rel < ftol || cost == T::zero() {
                report.convergence = Convergence::Cost;
                break;
            }
            jac = eval_jacobian(&x, &mut report)?;
        } else {
            let next = lam * lit(10.0);
            if !(next < lit(1e300)) {
                report.convergence = Convergence::Step;
                break;
            }
            lambda = Some(next);
        }
    }
    report.final_cost = cost;
    Ok((x, report))
}

fn r_len<T: Real, P: LeastSquaresProblem<T> + ?Sized>(problem: &P, x: &Parameters<T>) -> usize {
    problem.residuals(x).len()
}
