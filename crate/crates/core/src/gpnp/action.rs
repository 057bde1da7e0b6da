//! Action-matrix solver for the six quartic optimality polynomials.
//!
//! The polynomials are multiplied by every monomial of degree `≤ 4`, giving
//! a 210 × 165 Macaulay matrix over the monomials of degree `≤ 8`. Its right
//! null space contains the monomial vectors of all solutions; for generic
//! data it has dimension 40, which is also the number of complex solutions.
//! A well-conditioned set of degree-`≤ 7` monomials is picked from the null
//! space by column pivoting, multiplication by a fixed linear form gives the
//! action matrix on that basis, and its eigenvectors give the roots.

use nalgebra::{DMatrix, DVector, Vector3};

use super::poly::{monomial_count, MonomialTable, Quartic, N4};
use super::GpnpError;

/// Multiplication by this linear form defines the action matrix. Any
/// generic choice works; it is fixed so that solves are reproducible.
const SHIFT: [f64; 3] = [0.537_667_139_546_1, 1.833_885_014_595_1, -2.258_846_861_003_6];

const RANK_TOLERANCE: f64 = 1e-8;
const IMAG_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ActionRoots {
    /// Real roots, unpolished.
    pub roots: Vec<Vector3<f64>>,
    /// Dimension of the Macaulay null space (number of complex solutions).
    pub null_dim: usize,
    /// Ratio of the smallest to the largest pivot of the chosen basis.
    pub basis_condition: f64,
}

/// Column-pivoted Householder QR that stops at the numerical rank.
/// Reflectors are stored below the diagonal of `a`, LAPACK style.
struct PivotedQr {
    a: DMatrix<f64>,
    tau: Vec<f64>,
    perm: Vec<usize>,
    diag: Vec<f64>,
}

fn pivoted_qr(mut a: DMatrix<f64>, max_rank: usize, rel_tol: f64) -> PivotedQr {
    let (m, n) = a.shape();
    let steps = max_rank.min(m).min(n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut norms: Vec<f64> = (0..n).map(|j| a.column(j).norm_squared()).collect();
    let mut reference = norms.clone();
    let mut tau = Vec::with_capacity(steps);
    let mut diag = Vec::with_capacity(steps);
    let mut first = 0.0;
    for k in 0..steps {
        let (p, &best) = norms[k..].iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).map(|(i, v)| (i + k, v)).unwrap();
        let best = best.max(0.0).sqrt();
        if k == 0 {
            first = best;
        }
        if best <= rel_tol * first || best == 0.0 {
            break;
        }
        if p != k {
            a.swap_columns(k, p);
            perm.swap(k, p);
            norms.swap(k, p);
            reference.swap(k, p);
        }
        // Householder reflector for a[k.., k]; columns are contiguous.
        let data = a.as_mut_slice();
        let (head, tail) = data.split_at_mut((k + 1) * m);
        let v = &mut head[k * m + k..(k + 1) * m];
        let x0 = v[0];
        let xnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let beta = if x0 >= 0.0 { -xnorm } else { xnorm };
        let t = (beta - x0) / beta;
        let scale = 1.0 / (x0 - beta);
        v[1..].iter_mut().for_each(|x| *x *= scale);
        v[0] = beta;
        tau.push(t);
        diag.push(beta.abs());
        let v = &v[1..];
        for (jj, col) in tail.chunks_exact_mut(m).enumerate() {
            let j = k + 1 + jj;
            let (ck, rest) = col[k..].split_first_mut().unwrap();
            let w = t * (*ck + v.iter().zip(rest.iter()).map(|(a, b)| a * b).sum::<f64>());
            *ck -= w;
            rest.iter_mut().zip(v).for_each(|(x, vi)| *x -= w * vi);
            norms[j] -= *ck * *ck;
            if norms[j] <= 1e-6 * reference[j] {
                norms[j] = rest.iter().map(|x| x * x).sum();
                reference[j] = norms[j];
            }
        }
    }
    PivotedQr { a, tau, perm, diag }
}

impl PivotedQr {
    fn rank(&self) -> usize {
        self.tau.len()
    }

    /// Columns `rank..m` of the orthogonal factor: an orthonormal basis of
    /// the complement of the column space.
    fn complement(&self) -> DMatrix<f64> {
        let m = self.a.nrows();
        let r = self.rank();
        let mut q = DMatrix::zeros(m, m - r);
        for i in 0..m - r {
            q[(r + i, i)] = 1.0;
        }
        let a = self.a.as_slice();
        for k in (0..r).rev() {
            let t = self.tau[k];
            let v = &a[k * m + k + 1..(k + 1) * m];
            for col in q.as_mut_slice().chunks_exact_mut(m) {
                let (ck, rest) = col[k..].split_first_mut().unwrap();
                let w = t * (*ck + v.iter().zip(rest.iter()).map(|(a, b)| a * b).sum::<f64>());
                *ck -= w;
                rest.iter_mut().zip(v).for_each(|(x, vi)| *x -= w * vi);
            }
        }
        q
    }
}

/// Transposed Macaulay matrix: one column per (polynomial, multiplier),
/// normalized to unit length.
fn macaulay_transposed(system: &[Quartic; 6]) -> DMatrix<f64> {
    let table = MonomialTable::get();
    let rows = table.len();
    let mut w = DMatrix::zeros(rows, 6 * N4);
    for (pi, p) in system.iter().enumerate() {
        for mult in 0..N4 {
            let col = pi * N4 + mult;
            for (l, &coef) in p.iter().enumerate() {
                if coef != 0.0 {
                    w[(table.product(l, mult), col)] += coef;
                }
            }
            let norm = w.column(col).norm();
            if norm > 0.0 {
                w.column_mut(col).scale_mut(1.0 / norm);
            }
        }
    }
    w
}

/// Eigenvector for a (near-)real eigenvalue by inverse iteration.
fn eigenvector(mat: &DMatrix<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = mat.nrows();
    let mut shifted = mat.clone();
    let mu = lambda + 1e-10 * (1.0 + lambda.abs());
    for i in 0..n {
        shifted[(i, i)] -= mu;
    }
    let lu = shifted.lu();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    for _ in 0..3 {
        v = lu.solve(&v)?;
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return None;
        }
        v /= norm;
    }
    Some(v)
}

pub fn solve(system: &[Quartic; 6]) -> Result<ActionRoots, GpnpError> {
    let table = MonomialTable::get();
    let cols = table.len();
    let low = monomial_count(7);

    let qr = pivoted_qr(macaulay_transposed(system), cols, RANK_TOLERANCE);
    let null_dim = cols - qr.rank();
    if null_dim == 0 || null_dim > low {
        return Err(GpnpError::SolverFailure(format!("Macaulay null space has dimension {null_dim}")));
    }
    let null = qr.complement();

    // Basis monomials: the best-conditioned rows of the null space among
    // degrees ≤ 7, so that every basis monomial can be multiplied by q.
    let low_rows = null.rows(0, low).transpose();
    let sel = pivoted_qr(low_rows, null_dim, 1e-13);
    if sel.rank() < null_dim {
        return Err(GpnpError::SolverFailure("no well-conditioned monomial basis".into()));
    }
    let basis: Vec<usize> = sel.perm[..null_dim].to_vec();
    let basis_condition = sel.diag[null_dim - 1] / sel.diag[0];

    let nb = DMatrix::from_fn(null_dim, null_dim, |i, j| null[(basis[i], j)]);
    let mut ns = DMatrix::zeros(null_dim, null_dim);
    for (var, &a) in SHIFT.iter().enumerate() {
        for (i, &b) in basis.iter().enumerate() {
            let row = table.shift(b, var);
            for j in 0..null_dim {
                ns[(i, j)] += a * null[(row, j)];
            }
        }
    }
    let action = nb.lu().solve(&ns).ok_or_else(|| GpnpError::SolverFailure("singular basis block".into()))?;
    if action.iter().any(|x| !x.is_finite()) {
        return Err(GpnpError::SolverFailure("non-finite action matrix".into()));
    }

    let mut roots = Vec::new();
    for ev in action.complex_eigenvalues().iter() {
        if ev.im.abs() > IMAG_TOLERANCE * (1.0 + ev.re.abs()) {
            continue;
        }
        let Some(w) = eigenvector(&action, ev.re) else { continue };
        let m = &null * w;
        // q_v = ⟨m_b, m_{b·q_v}⟩ / ⟨m_b, m_b⟩ over all monomials of degree ≤ 7.
        let den: f64 = (0..low).map(|b| m[b] * m[b]).sum();
        if !(den > 0.0) {
            continue;
        }
        let q = Vector3::from_fn(|var, _| (0..low).map(|b| m[b] * m[table.shift(b, var)]).sum::<f64>() / den);
        if q.iter().all(|x| x.is_finite()) {
            roots.push(q);
        }
    }
    Ok(ActionRoots { roots, null_dim, basis_condition })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoted_qr_recovers_null_space() {
        // Rank-2 matrix in R^{4×5}: columns spanned by two vectors.
        let u = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 1.0, 0.0, 3.0, -1.0, 1.0]);
        let v = DMatrix::from_row_slice(2, 5, &[1.0, 2.0, 0.0, -1.0, 3.0, 0.0, 1.0, 1.0, 2.0, -2.0]);
        let a = &u * &v;
        let qr = pivoted_qr(a.clone(), 4, 1e-10);
        assert_eq!(qr.rank(), 2);
        let comp = qr.complement();
        assert_eq!(comp.shape(), (4, 2));
        assert!((a.transpose() * &comp).amax() < 1e-12);
        assert!((comp.transpose() * &comp - DMatrix::identity(2, 2)).amax() < 1e-12);
    }
}
