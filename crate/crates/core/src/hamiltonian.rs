//! Quadratic Hamiltonians and the quasiparticle mode vector they act on.
//!
//! A quadratic Hamiltonian over `N` sites is fixed by two `N×N` matrices:
//! `A` (hopping and on-site terms, Hermitian) and `B` (pairing terms,
//! antisymmetric for fermions and symmetric for bosons). A mode vector stores
//! the conjugated coefficients `(C₁*,…,C_N*, D₁*,…,D_N*)` of a quasiparticle
//! operator `Σ C_j a_j + D_j a_j†`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs_diff, norm_sqr, CMatrix, CVector, C64};

/// Elementwise tolerance for the Hermiticity / (anti)symmetry checks.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Tolerance used when a mode vector is required to satisfy its norm invariant.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistics {
    Fermi,
    Bose,
}

impl Statistics {
    /// `-1` for fermions, `+1` for bosons.
    pub fn sign(self) -> f64 {
        match self {
            Statistics::Fermi => -1.0,
            Statistics::Bose => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticHamiltonian {
    a: CMatrix,
    b: CMatrix,
    stat: Statistics,
}

impl QuadraticHamiltonian {
    /// Validates `A = A†` and `B = sign · Bᵀ` and stores the matrices unchanged.
    pub fn new(a: CMatrix, b: CMatrix, stat: Statistics) -> Result<Self> {
        validate_quadratic(a, b, stat)
    }

    pub fn sites(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &CMatrix {
        &self.a
    }

    pub fn b(&self) -> &CMatrix {
        &self.b
    }

    pub fn statistics(&self) -> Statistics {
        self.stat
    }

    pub fn has_pairing(&self) -> bool {
        self.b.iter().any(|z| *z != C64::new(0.0, 0.0))
    }

    /// `self + s · other`; both must share size and statistics.
    pub fn add_scaled(&self, other: &QuadraticHamiltonian, s: f64) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(QuadraticHamiltonian {
            a: &self.a + other.a.scale(s),
            b: &self.b + other.b.scale(s),
            stat: self.stat,
        })
    }

    pub fn check_compatible(&self, other: &QuadraticHamiltonian) -> Result<()> {
        if other.sites() != self.sites() {
            return Err(Error::DimensionMismatch {
                expected: self.sites(),
                found: other.sites(),
            });
        }
        if other.stat != self.stat {
            return Err(Error::InvalidParameter(
                "hamiltonians mix fermi and bose statistics".into(),
            ));
        }
        Ok(())
    }

    /// Same matrices reinterpreted under other statistics (only valid when
    /// `B` satisfies both symmetries, e.g. `B = 0`).
    pub fn with_statistics(&self, stat: Statistics) -> Result<Self> {
        validate_quadratic(self.a.clone(), self.b.clone(), stat)
    }

    /// Real part of the on-site energy `A_jj` at a 1-based site.
    pub fn onsite(&self, site: usize) -> Result<f64> {
        check_site(site, self.sites())?;
        Ok(self.a[(site - 1, site - 1)].re)
    }
}

pub(crate) fn check_site(site: usize, n: usize) -> Result<()> {
    if site == 0 || site > n {
        Err(Error::IndexOutOfRange { index: site, len: n })
    } else {
        Ok(())
    }
}

/// Build a [`QuadraticHamiltonian`] after checking shape and symmetry.
pub fn validate_quadratic(a: CMatrix, b: CMatrix, stat: Statistics) -> Result<QuadraticHamiltonian> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.ncols(),
        });
    }
    if b.nrows() != n || b.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if b.nrows() != n { b.nrows() } else { b.ncols() },
        });
    }
    if n < 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: n });
    }
    let herm = max_abs_diff(&a, &a.adjoint());
    if herm > SYMMETRY_TOLERANCE {
        return Err(Error::SymmetryViolation {
            what: "A is not Hermitian",
            residual: herm,
        });
    }
    let sym = max_abs_diff(&b, &b.transpose().scale(stat.sign()));
    if sym > SYMMETRY_TOLERANCE {
        return Err(Error::SymmetryViolation {
            what: match stat {
                Statistics::Fermi => "B is not antisymmetric",
                Statistics::Bose => "B is not symmetric",
            },
            residual: sym,
        });
    }
    Ok(QuadraticHamiltonian { a, b, stat })
}

/// Conjugated quasiparticle coefficients `q = (C*, D*)` of length `2N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeVector {
    q: CVector,
    stat: Statistics,
}

impl ModeVector {
    pub fn new(q: CVector, stat: Statistics) -> Result<Self> {
        if q.len() < 4 || q.len() % 2 != 0 {
            return Err(Error::DimensionMismatch {
                expected: 2 * (q.len() / 2).max(2),
                found: q.len(),
            });
        }
        Ok(ModeVector { q, stat })
    }

    /// Build from the operator coefficients `C_j` (of `a_j`) and `D_j` (of `a_j†`).
    pub fn from_coefficients(c: &[C64], d: &[C64], stat: Statistics) -> Result<Self> {
        if c.len() != d.len() {
            return Err(Error::DimensionMismatch {
                expected: c.len(),
                found: d.len(),
            });
        }
        let q = CVector::from_iterator(
            2 * c.len(),
            c.iter().chain(d.iter()).map(|z| z.conj()),
        );
        ModeVector::new(q, stat)
    }

    pub(crate) fn from_raw(q: CVector, stat: Statistics) -> Self {
        ModeVector { q, stat }
    }

    pub fn as_vector(&self) -> &CVector {
        &self.q
    }

    pub fn as_slice(&self) -> &[C64] {
        self.q.as_slice()
    }

    pub fn into_vector(self) -> CVector {
        self.q
    }

    pub fn statistics(&self) -> Statistics {
        self.stat
    }

    pub fn sites(&self) -> usize {
        self.q.len() / 2
    }

    /// Coefficient `C_j` of `a_j` (1-based site).
    pub fn c(&self, site: usize) -> C64 {
        self.q[site - 1].conj()
    }

    /// Coefficient `D_j` of `a_j†` (1-based site).
    pub fn d(&self, site: usize) -> C64 {
        self.q[self.sites() + site - 1].conj()
    }

    pub fn norm(&self) -> f64 {
        mode_norm(self)
    }

    /// Error unless the statistics norm equals one within `tol`.
    pub fn check_invariant(&self, tol: f64) -> Result<()> {
        let norm = self.norm();
        if (norm - 1.0).abs() > tol {
            Err(Error::NormViolation { norm })
        } else {
            Ok(())
        }
    }

    /// Multiply by a global phase `e^{iφ}`.
    pub fn rotated(&self, phi: f64) -> Self {
        let p = C64::from_polar(1.0, phi);
        ModeVector {
            q: self.q.map(|z| z * p),
            stat: self.stat,
        }
    }
}

/// `Σ(|C|²+|D|²)` for fermions, `|Σ(|C|²−|D|²)|` for bosons.
pub fn mode_norm(q: &ModeVector) -> f64 {
    let n = q.sites();
    let (upper, lower) = q.as_slice().split_at(n);
    match q.stat {
        Statistics::Fermi => norm_sqr(upper) + norm_sqr(lower),
        Statistics::Bose => (norm_sqr(upper) - norm_sqr(lower)).abs(),
    }
}
