//! Small dense/sparse helpers shared by the spectral, control and dynamics code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Conjugate-linear inner product `a† b`.
#[inline]
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    C64::new(re, im)
}

#[inline]
pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Largest elementwise modulus of `a - b`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn is_real(m: &CMatrix) -> bool {
    m.iter().all(|z| z.im == 0.0)
}

/// Rotate `v` so its largest-magnitude component is real and positive.
pub fn fix_phase(v: &mut [C64]) {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, z) in v.iter().enumerate() {
        // strict comparison plus a relative margin keeps the pick stable under round-off
        let a = z.norm();
        if a > best_abs * (1.0 + 1e-9) {
            best = i;
            best_abs = a;
        }
    }
    if best_abs <= 0.0 {
        return;
    }
    let phase = v[best].conj() / best_abs;
    for z in v.iter_mut() {
        *z *= phase;
    }
    v[best].im = 0.0;
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues and
/// phase-fixed eigenvector columns.
pub fn hermitian_eigh(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let (values, vectors) = raw_eigh(m)?;
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let worst = (0..values.len())
        .map(|l| (m * vectors.column(l) - vectors.column(l) * C64::new(values[l], 0.0)).norm())
        .fold(0.0, f64::max);
    // nalgebra's QR occasionally returns residuals of 1e-8 or worse. Real
    // matrices then go through Jacobi; complex ones get a second QR pass on
    // the nearly diagonal V†MV.
    if worst > REFINE_THRESHOLD * scale && is_real(m) {
        let (values, vectors) = jacobi_eigh(m.map(|z| z.re))?;
        return Ok(sort_and_fix(values, vectors.map(|x| C64::new(x, 0.0))));
    }
    if worst > REFINE_THRESHOLD * scale {
        let inner = vectors.adjoint() * m * &vectors;
        let inner = (&inner + inner.adjoint()) * C64::new(0.5, 0.0);
        let (values, rotation) = raw_eigh(&inner)?;
        return Ok(sort_and_fix(values, &vectors * rotation));
    }
    Ok(sort_and_fix(values, vectors))
}

const REFINE_THRESHOLD: f64 = 1e-12;

fn raw_eigh(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let (values, vectors): (Vec<f64>, CMatrix) = if is_real(m) {
        let real = m.map(|z| z.re);
        let eig = SymmetricEigen::try_new(real, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::SolverFailure("symmetric QR did not converge".into()))?;
        (
            eig.eigenvalues.iter().copied().collect(),
            eig.eigenvectors.map(|x| C64::new(x, 0.0)),
        )
    } else {
        let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
            .ok_or_else(|| Error::SolverFailure("hermitian QR did not converge".into()))?;
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure("non-finite eigenvalue".into()));
    }
    Ok((values, vectors))
}

/// Cyclic Jacobi rotations for a real symmetric matrix.
fn jacobi_eigh(mut a: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let mut v = DMatrix::<f64>::identity(n, n);
    let fro = a.norm();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n).flat_map(|p| (p + 1..n).map(move |q| (p, q))).map(|(p, q)| a[(p, q)].powi(2)).sum();
        if off.sqrt() <= 1e-17 * fro {
            return Ok(((0..n).map(|i| a[(i, i)]).collect(), v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + theta.hypot(1.0))
                };
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * kp - s * kq;
                    a[(k, q)] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * pk - s * qk;
                    a[(q, k)] = s * pk + c * qk;
                }
                for k in 0..n {
                    let (kp, kq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * kp - s * kq;
                    v[(k, q)] = s * kp + c * kq;
                }
            }
        }
    }
    Err(Error::SolverFailure("jacobi sweeps did not converge".into()))
}

const JACOBI_MAX_SWEEPS: usize = 100;

fn sort_and_fix(values: Vec<f64>, vectors: CMatrix) -> (Vec<f64>, CMatrix) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted_values = order.iter().map(|&i| values[i]).collect();
    let mut sorted = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: Vec<C64> = vectors.column(src).iter().copied().collect();
        let nrm = norm_sqr(&col).sqrt();
        col.iter_mut().for_each(|z| *z /= nrm);
        fix_phase(&mut col);
        sorted.column_mut(dst).copy_from_slice(&col);
    }
    (sorted_values, sorted)
}

/// Nonzero entries of a dense matrix, stored as `(row, col)` triplets.
///
/// The chain Hamiltonians are banded and usually real, so applying them
/// through this form is an order of magnitude cheaper than a dense product.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOp {
    dim: usize,
    index: Vec<(u32, u32)>,
    values: Values,
}

#[derive(Debug, Clone, PartialEq)]
enum Values {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

impl SparseOp {
    pub fn from_dense(m: &CMatrix) -> Self {
        let dim = m.nrows();
        let mut index = Vec::new();
        let mut vals = Vec::new();
        for r in 0..dim {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != ZERO {
                    index.push((r as u32, c as u32));
                    vals.push(v);
                }
            }
        }
        let values = if vals.iter().all(|z| z.im == 0.0) {
            Values::Real(vals.iter().map(|z| z.re).collect())
        } else {
            Values::Complex(vals)
        };
        SparseOp { dim, index, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.index.len()
    }

    /// `out = M x`
    #[inline]
    pub fn apply(&self, x: &[C64], out: &mut [C64]) {
        out[..self.dim].fill(ZERO);
        self.apply_add(1.0, x, out);
    }

    /// `out += s * M x`
    #[inline]
    pub fn apply_add(&self, s: f64, x: &[C64], out: &mut [C64]) {
        match &self.values {
            Values::Real(v) => {
                for (&(r, c), &a) in self.index.iter().zip(v) {
                    out[r as usize] += x[c as usize] * (a * s);
                }
            }
            Values::Complex(v) => {
                for (&(r, c), &a) in self.index.iter().zip(v) {
                    out[r as usize] += x[c as usize] * (a * s);
                }
            }
        }
    }
}
