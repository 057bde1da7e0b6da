//! Dense trivariate polynomials in the Cayley parameters, up to degree 8.
//!
//! Monomials are ordered by total degree, then by descending exponent of
//! `x`, then of `y`. With this order the monomials of degree `≤ k` occupy
//! a prefix of the table, so a degree-4 polynomial is just the first 35
//! coefficients and the Macaulay columns of degree `≤ 7` are a prefix too.

use std::sync::OnceLock;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

pub const MAX_DEGREE: usize = 8;

/// Number of monomials in three variables with total degree `≤ d`.
pub const fn monomial_count(d: usize) -> usize {
    (d + 1) * (d + 2) * (d + 3) / 6
}

pub const N2: usize = monomial_count(2);
pub const N4: usize = monomial_count(4);

pub struct MonomialTable {
    exponents: Vec<[u8; 3]>,
    index: [[[u16; MAX_DEGREE + 1]; MAX_DEGREE + 1]; MAX_DEGREE + 1],
}

impl MonomialTable {
    fn build() -> Self {
        let mut exponents = Vec::with_capacity(monomial_count(MAX_DEGREE));
        let mut index = [[[u16::MAX; MAX_DEGREE + 1]; MAX_DEGREE + 1]; MAX_DEGREE + 1];
        for total in 0..=MAX_DEGREE {
            for a in (0..=total).rev() {
                for b in (0..=total - a).rev() {
                    let c = total - a - b;
                    index[a][b][c] = exponents.len() as u16;
                    exponents.push([a as u8, b as u8, c as u8]);
                }
            }
        }
        Self { exponents, index }
    }

    pub fn get() -> &'static Self {
        static TABLE: OnceLock<MonomialTable> = OnceLock::new();
        TABLE.get_or_init(Self::build)
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self, i: usize) -> [u8; 3] {
        self.exponents[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        let e = self.exponents[i];
        (e[0] + e[1] + e[2]) as usize
    }

    /// Index of the monomial with the given exponents (total degree ≤ 8).
    pub fn index_of(&self, e: [usize; 3]) -> usize {
        self.index[e[0]][e[1]][e[2]] as usize
    }

    /// Index of the product of monomials `i` and `j`.
    pub fn product(&self, i: usize, j: usize) -> usize {
        let (a, b) = (self.exponents[i], self.exponents[j]);
        self.index_of([(a[0] + b[0]) as usize, (a[1] + b[1]) as usize, (a[2] + b[2]) as usize])
    }

    /// Index of monomial `i` multiplied by variable `var` (0, 1 or 2).
    pub fn shift(&self, i: usize, var: usize) -> usize {
        let mut e = self.exponents[i].map(usize::from);
        e[var] += 1;
        self.index_of(e)
    }
}

pub type Quadric = SVector<f64, N2>;
pub type Quartic = SVector<f64, N4>;

fn mul_quadrics(a: &Quadric, b: &Quadric) -> Quartic {
    let table = MonomialTable::get();
    let mut out = Quartic::zeros();
    for i in 0..N2 {
        if a[i] == 0.0 {
            continue;
        }
        for j in 0..N2 {
            out[table.product(i, j)] += a[i] * b[j];
        }
    }
    out
}

/// Numerator of the Cayley rotation, `R(q)·(1 + |q|²)`, entrywise as quadrics.
fn cayley_numerator() -> [[Quadric; 3]; 3] {
    let t = MonomialTable::get();
    let m = |e: [usize; 3]| t.index_of(e);
    let (one, x, y, z) = (m([0, 0, 0]), m([1, 0, 0]), m([0, 1, 0]), m([0, 0, 1]));
    let (xx, yy, zz) = (m([2, 0, 0]), m([0, 2, 0]), m([0, 0, 2]));
    let (xy, xz, yz) = (m([1, 1, 0]), m([1, 0, 1]), m([0, 1, 1]));
    let q = |terms: &[(usize, f64)]| {
        let mut p = Quadric::zeros();
        for &(i, c) in terms {
            p[i] += c;
        }
        p
    };
    [
        [q(&[(one, 1.0), (xx, 1.0), (yy, -1.0), (zz, -1.0)]), q(&[(xy, 2.0), (z, -2.0)]), q(&[(y, 2.0), (xz, 2.0)])],
        [q(&[(xy, 2.0), (z, 2.0)]), q(&[(one, 1.0), (xx, -1.0), (yy, 1.0), (zz, -1.0)]), q(&[(yz, 2.0), (x, -2.0)])],
        [q(&[(xz, 2.0), (y, -2.0)]), q(&[(x, 2.0), (yz, 2.0)]), q(&[(one, 1.0), (xx, -1.0), (yy, -1.0), (zz, 1.0)])],
    ]
}

/// The six cleared optimality polynomials `(E₁₂, E₁₃, E₂₃, F₁₂, F₁₃, F₂₃)`
/// of the reduced cost `rᵀQr − 2cᵀr + k`, each of degree 4.
///
/// With `R = R̃/s`, `s = 1 + |q|²`, the residual matrix is
/// `𝓜 = mat(Qr − c) = M̃/s` where `M̃ = mat(Q·vec(R̃) − s·c)`, hence
/// `E·s² = R̃ᵀM̃ − M̃ᵀR̃` and `F·s² = M̃R̃ᵀ − R̃M̃ᵀ`.
pub fn optimality_system(q: &SMatrix<f64, 9, 9>, c: &SVector<f64, 9>) -> [Quartic; 6] {
    let rt = cayley_numerator();
    let t = MonomialTable::get();
    let mut s = Quadric::zeros();
    s[t.index_of([0, 0, 0])] = 1.0;
    s[t.index_of([2, 0, 0])] = 1.0;
    s[t.index_of([0, 2, 0])] = 1.0;
    s[t.index_of([0, 0, 2])] = 1.0;

    let flat: Vec<&Quadric> = rt.iter().flatten().collect();
    let mut mt = [[Quadric::zeros(); 3]; 3];
    for k in 0..9 {
        let mut acc = s * (-c[k]);
        for (l, p) in flat.iter().enumerate() {
            acc += *p * q[(k, l)];
        }
        mt[k / 3][k % 3] = acc;
    }

    // (XᵀY)_{ij} = Σ_k X_{ki} Y_{kj};  (XYᵀ)_{ij} = Σ_k X_{ik} Y_{jk}
    let at_b = |x: &[[Quadric; 3]; 3], y: &[[Quadric; 3]; 3], i: usize, j: usize| {
        (0..3).fold(Quartic::zeros(), |acc, k| acc + mul_quadrics(&x[k][i], &y[k][j]))
    };
    let a_bt = |x: &[[Quadric; 3]; 3], y: &[[Quadric; 3]; 3], i: usize, j: usize| {
        (0..3).fold(Quartic::zeros(), |acc, k| acc + mul_quadrics(&x[i][k], &y[j][k]))
    };
    let e = |i, j| at_b(&rt, &mt, i, j) - at_b(&mt, &rt, i, j);
    let f = |i, j| a_bt(&mt, &rt, i, j) - a_bt(&rt, &mt, i, j);
    [e(0, 1), e(0, 2), e(1, 2), f(0, 1), f(0, 2), f(1, 2)]
}

/// Values of all monomials of degree `≤ 4` at `q`.
pub fn monomials4(q: &Vector3<f64>) -> Quartic {
    let t = MonomialTable::get();
    let mut out = Quartic::zeros();
    let mut px = [1.0; 5];
    let mut py = [1.0; 5];
    let mut pz = [1.0; 5];
    for k in 1..5 {
        px[k] = px[k - 1] * q.x;
        py[k] = py[k - 1] * q.y;
        pz[k] = pz[k - 1] * q.z;
    }
    for i in 0..N4 {
        let e = t.exponents(i);
        out[i] = px[e[0] as usize] * py[e[1] as usize] * pz[e[2] as usize];
    }
    out
}

/// Gradient of all degree-`≤ 4` monomials at `q`, one column per variable.
pub fn monomials4_gradient(q: &Vector3<f64>) -> SMatrix<f64, N4, 3> {
    let t = MonomialTable::get();
    let mut out = SMatrix::<f64, N4, 3>::zeros();
    let pw = |v: f64, k: u8| v.powi(k as i32);
    for i in 0..N4 {
        let e = t.exponents(i);
        if e[0] > 0 {
            out[(i, 0)] = e[0] as f64 * pw(q.x, e[0] - 1) * pw(q.y, e[1]) * pw(q.z, e[2]);
        }
        if e[1] > 0 {
            out[(i, 1)] = e[1] as f64 * pw(q.x, e[0]) * pw(q.y, e[1] - 1) * pw(q.z, e[2]);
        }
        if e[2] > 0 {
            out[(i, 2)] = e[2] as f64 * pw(q.x, e[0]) * pw(q.y, e[1]) * pw(q.z, e[2] - 1);
        }
    }
    out
}

/// The six polynomials evaluated at `q`, with their 6×3 Jacobian.
pub fn evaluate(system: &[Quartic; 6], q: &Vector3<f64>) -> (SVector<f64, 6>, SMatrix<f64, 6, 3>) {
    let m = monomials4(q);
    let g = monomials4_gradient(q);
    let mut val = SVector::<f64, 6>::zeros();
    let mut jac = SMatrix::<f64, 6, 3>::zeros();
    for (i, p) in system.iter().enumerate() {
        val[i] = p.dot(&m);
        jac.set_row(i, &(p.transpose() * g));
    }
    (val, jac)
}

/// Scale-free residual: `max_i |pᵢ(q)| / Σ_j |c_ij·m_j(q)|`, i.e. each value
/// relative to the magnitude of the terms it is summed from.
pub fn relative_residual(system: &[Quartic; 6], q: &Vector3<f64>) -> f64 {
    let m = monomials4(q);
    system
        .iter()
        .map(|p| {
            let v = p.dot(&m).abs();
            let mag = p.iter().zip(m.iter()).map(|(a, b)| (a * b).abs()).sum::<f64>();
            if mag > 0.0 {
                v / mag
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// `vec` of a row-major 3×3 matrix.
pub fn row_major(m: &Matrix3<f64>) -> SVector<f64, 9> {
    SVector::<f64, 9>::from_fn(|k, _| m[(k / 3, k % 3)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout() {
        let t = MonomialTable::get();
        assert_eq!(t.len(), 165);
        assert_eq!(t.index_of([0, 0, 0]), 0);
        assert_eq!(t.index_of([1, 0, 0]), 1);
        assert_eq!(t.index_of([0, 0, 1]), 3);
        for i in 0..t.len() {
            let e = t.exponents(i).map(usize::from);
            assert_eq!(t.index_of(e), i);
            assert!(t.degree(i) <= 8);
            if i > 0 {
                assert!(t.degree(i) >= t.degree(i - 1));
            }
        }
        assert_eq!(monomial_count(7), 120);
        assert_eq!(t.degree(monomial_count(7) - 1), 7);
    }

    #[test]
    fn numerator_matches_cayley_formula() {
        let q = Vector3::new(0.3, -0.7, 1.1);
        let num = cayley_numerator();
        let m = monomials4(&q);
        let s = 1.0 + q.norm_squared();
        let r = crate::geometry::CayleyVector(q).to_rotation();
        for (i, row) in num.iter().enumerate() {
            for (j, entry) in row.iter().enumerate() {
                let v: f64 = entry.iter().zip(m.iter()).map(|(a, b)| a * b).sum();
                assert!((v / s - r.matrix()[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sys = optimality_system(
            &SMatrix::<f64, 9, 9>::from_fn(|i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { 4.0 } else { 0.0 }),
            &SVector::<f64, 9>::from_fn(|i, _| i as f64 * 0.1 - 0.3),
        );
        let q = Vector3::new(0.2, -0.4, 0.9);
        let (_, jac) = evaluate(&sys, &q);
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = 1e-6;
            let (p, _) = evaluate(&sys, &(q + d));
            let (m, _) = evaluate(&sys, &(q - d));
            let fd = (p - m) / 2e-6;
            assert!((fd - jac.column(k)).amax() < 1e-6 * (1.0 + fd.amax()));
        }
    }
}
