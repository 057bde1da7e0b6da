//! Fallback root finder: damped Newton on the six optimality polynomials
//! from a regular grid of Cayley starts. Slower than the action matrix and
//! with no completeness guarantee, but free of any elimination template.

use nalgebra::Vector3;

use super::poly::{evaluate, Quartic};

/// Grid points per axis and half-width of the Cayley cube that is sampled.
const GRID: usize = 7;
const HALF_WIDTH: f64 = 1.8;
const MAX_STEP: f64 = 0.5;

/// Roots reached from the grid, deduplicated within `1e-8`.
pub fn solve(system: &[Quartic; 6]) -> Vec<Vector3<f64>> {
    let mut roots: Vec<Vector3<f64>> = Vec::new();
    let spacing = 2.0 * HALF_WIDTH / (GRID - 1) as f64;
    for i in 0..GRID {
        for j in 0..GRID {
            for k in 0..GRID {
                let start = Vector3::new(i as f64, j as f64, k as f64) * spacing - Vector3::repeat(HALF_WIDTH);
                if let Some(q) = newton(system, start, 40) {
                    if !roots.iter().any(|r| (r - q).norm() < 1e-8 * (1.0 + q.norm())) {
                        roots.push(q);
                    }
                }
            }
        }
    }
    roots
}

/// Levenberg-damped Gauss-Newton on the residuals; `None` if it does not
/// settle on a root.
pub fn newton(system: &[Quartic; 6], mut q: Vector3<f64>, iterations: usize) -> Option<Vector3<f64>> {
    let (mut val, mut jac) = evaluate(system, &q);
    let mut mu = 1e-6;
    for _ in 0..iterations {
        let jtj = jac.transpose() * jac;
        let g = jac.transpose() * val;
        let mut damped = jtj;
        for d in 0..3 {
            damped[(d, d)] += mu * (jtj[(d, d)] + 1e-300);
        }
        let mut step = damped.cholesky()?.solve(&(-g));
        let len = step.norm();
        if len > MAX_STEP * (1.0 + q.norm()) {
            step *= MAX_STEP * (1.0 + q.norm()) / len;
        }
        let cand = q + step;
        let (v2, j2) = evaluate(system, &cand);
        if v2.norm_squared() <= val.norm_squared() {
            q = cand;
            val = v2;
            jac = j2;
            mu = (mu * 0.1).max(1e-12);
            if step.norm() <= 1e-14 * (1.0 + q.norm()) {
                break;
            }
        } else {
            mu *= 10.0;
            if mu > 1e8 {
                break;
            }
        }
    }
    (q.iter().all(|x| x.is_finite()) && super::poly::relative_residual(system, &q) < 1e-9).then_some(q)
}
