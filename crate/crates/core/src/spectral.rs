//! Dynamics matrices, their eigenmodes, edge-mode labelling and eigenvector
//! continuation in the implicit-control parameter.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{QuadraticHamiltonian, Statistics};
use crate::linalg::{dot, hermitian_eigh, norm_sqr, CMatrix, CVector, C64, ZERO};

/// Residual bound for `‖ℋU − εU‖`, scaled by the matrix magnitude.
const RESIDUAL_TOLERANCE: f64 = 1e-9;
/// Fraction of weight in the outer quarters required of an edge candidate.
const LOCALIZATION_THRESHOLD: f64 = 0.6;
/// Distance from the gap center, as a fraction of the gap width.
const MIDGAP_FRACTION: f64 = 0.2;
/// Splitting below which the Majorana pair is ordered by weight instead of energy.
const DEGENERACY_SPLITTING: f64 = 1e-10;

/// `[[A, B], [−B*, −A*]]` for fermions, `[[A, −B], [B*, −A*]]` for bosons.
pub fn bdg_dynamics_matrix(h: &QuadraticHamiltonian) -> CMatrix {
    let n = h.sites();
    let s = match h.statistics() {
        Statistics::Fermi => 1.0,
        Statistics::Bose => -1.0,
    };
    let mut m = CMatrix::zeros(2 * n, 2 * n);
    let (a, b) = (h.a(), h.b());
    for r in 0..n {
        for c in 0..n {
            m[(r, c)] = a[(r, c)];
            m[(r, n + c)] = b[(r, c)] * s;
            m[(n + r, c)] = -b[(r, c)].conj() * s;
            m[(n + r, n + c)] = -a[(r, c)].conj();
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Columns are the eigenvectors `U^l = (X^l, Y^l)`.
    pub eigenvectors: CMatrix,
    pub statistics: Statistics,
    pub sites: usize,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Eigenvector for a 1-based mode index.
    pub fn mode(&self, index: usize) -> Result<CVector> {
        if index == 0 || index > self.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        Ok(self.eigenvectors.column(index - 1).into_owned())
    }

    pub fn eigenvalue(&self, index: usize) -> Result<f64> {
        if index == 0 || index > self.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        Ok(self.eigenvalues[index - 1])
    }

    /// Per-site weight `|X_j|² + |Y_j|²` of a 1-based mode.
    pub fn site_weights(&self, index: usize) -> Result<Vec<f64>> {
        let u = self.mode(index)?;
        Ok(site_weights(u.as_slice()))
    }
}

pub fn site_weights(u: &[C64]) -> Vec<f64> {
    let n = u.len() / 2;
    (0..n).map(|j| u[j].norm_sqr() + u[n + j].norm_sqr()).collect()
}

/// Index ranges (0-based, half-open) that are diagonalized independently.
fn sectors(stat: Statistics, sites: usize) -> Vec<(usize, usize)> {
    match stat {
        Statistics::Fermi => vec![(0, 2 * sites)],
        Statistics::Bose => vec![(0, sites), (sites, 2 * sites)],
    }
}

/// Full eigen-decomposition of the dynamics matrix.
///
/// Fermionic spectra are sorted ascending. The bosonic matrix with `B = 0` is
/// block diagonal; its eigenpairs are listed block by block (the `A` block
/// first), each block ascending, so that mode indices name a sector.
pub fn eigenmodes(h: &QuadraticHamiltonian) -> Result<SpectralDecomposition> {
    let n = h.sites();
    let m = bdg_dynamics_matrix(h);
    let (values, vectors) = match h.statistics() {
        Statistics::Fermi => hermitian_eigh(&m)?,
        Statistics::Bose => {
            if h.has_pairing() {
                return Err(Error::UnsupportedDecomposition(
                    "bosonic modes are only defined for B = 0",
                ));
            }
            block_eigh(&m, n)?
        }
    };
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    for (l, &e) in values.iter().enumerate() {
        let u = vectors.column(l);
        let r = (&m * u - u * C64::new(e, 0.0)).norm();
        if !(r <= RESIDUAL_TOLERANCE * scale) {
            return Err(Error::SolverFailure(format!(
                "eigenpair {} has residual {r:.3e}",
                l + 1
            )));
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues: values,
        eigenvectors: vectors,
        statistics: h.statistics(),
        sites: n,
    })
}

fn block_eigh(m: &CMatrix, n: usize) -> Result<(Vec<f64>, CMatrix)> {
    let mut values = Vec::with_capacity(2 * n);
    let mut vectors = CMatrix::zeros(2 * n, 2 * n);
    for (lo, hi) in sectors(Statistics::Bose, n) {
        let block = m.view((lo, lo), (hi - lo, hi - lo)).into_owned();
        let (v, u) = hermitian_eigh(&block)?;
        for (k, e) in v.into_iter().enumerate() {
            values.push(e);
            vectors
                .view_mut((lo, lo + k), (hi - lo, 1))
                .copy_from(&u.column(k));
        }
    }
    Ok((values, vectors))
}

/// 1-based indices of the left and right edge modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EdgeLabels {
    pub left: Option<usize>,
    pub right: Option<usize>,
}

impl EdgeLabels {
    pub fn get(&self, label: &str) -> Option<usize> {
        match label {
            "left" => self.left,
            "right" => self.right,
            _ => None,
        }
    }
}

/// Weight of `u` on the outer `⌈N/4⌉` sites at both ends.
pub fn edge_localization(u: &[C64]) -> f64 {
    let w = site_weights(u);
    let n = w.len();
    let q = n.div_ceil(4);
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let outer: f64 = w[..q].iter().sum::<f64>() + w[n - q..].iter().sum::<f64>();
    outer.min(total) / total
}

fn first_half_weight(u: &[C64]) -> f64 {
    let w = site_weights(u);
    let total: f64 = w.iter().sum();
    w[..w.len() / 2].iter().sum::<f64>() / total
}

/// Find the mid-gap boundary-localized modes and label them.
pub fn identify_edge_modes(spec: &SpectralDecomposition, h: &QuadraticHamiltonian) -> Result<EdgeLabels> {
    if h.sites() != spec.sites || h.statistics() != spec.statistics {
        return Err(Error::DimensionMismatch {
            expected: spec.sites,
            found: h.sites(),
        });
    }
    let loc: Vec<f64> = (0..spec.len())
        .map(|l| edge_localization(spec.eigenvectors.column(l).as_slice()))
        .collect();

    let mut found: Vec<usize> = Vec::new();
    for (lo, hi) in sectors(spec.statistics, spec.sites) {
        let candidates: Vec<usize> = (lo..hi).filter(|&l| loc[l] >= LOCALIZATION_THRESHOLD).collect();
        let mut bulk: Vec<f64> = (lo..hi)
            .filter(|l| !candidates.contains(l))
            .map(|l| spec.eigenvalues[l])
            .collect();
        bulk.sort_by(f64::total_cmp);
        if bulk.len() < 3 {
            continue;
        }
        let gaps: Vec<f64> = bulk.windows(2).map(|w| w[1] - w[0]).collect();
        let mut sorted_gaps = gaps.clone();
        sorted_gaps.sort_by(f64::total_cmp);
        let median = sorted_gaps[sorted_gaps.len() / 2];
        let (widest, width) = gaps
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc });
        // a real gap is much wider than the level spacing inside the bands
        if width < 3.0 * median {
            continue;
        }
        let (g_lo, g_hi) = (bulk[widest], bulk[widest + 1]);
        let center = 0.5 * (g_lo + g_hi);
        for l in candidates {
            let e = spec.eigenvalues[l];
            if e > g_lo && e < g_hi && (e - center).abs() < MIDGAP_FRACTION * width {
                found.push(l);
            }
        }
    }
    if found.is_empty() {
        return Err(Error::NoMidGapMode);
    }
    // keep the two most localized, then restore index order
    found.sort_by(|&x, &y| loc[y].total_cmp(&loc[x]).then(x.cmp(&y)));
    found.truncate(2);
    found.sort_unstable();

    let col = |l: usize| spec.eigenvectors.column(l).iter().copied().collect::<Vec<C64>>();
    let labels = match found.as_slice() {
        [only] => {
            if first_half_weight(&col(*only)) >= 0.5 {
                EdgeLabels { left: Some(only + 1), right: None }
            } else {
                EdgeLabels { left: None, right: Some(only + 1) }
            }
        }
        [a, b] => {
            let (mut left, mut right) = (*a, *b);
            if spec.statistics == Statistics::Fermi
                && (spec.eigenvalues[*b] - spec.eigenvalues[*a]).abs() < DEGENERACY_SPLITTING
                && first_half_weight(&col(*b)) > first_half_weight(&col(*a))
            {
                std::mem::swap(&mut left, &mut right);
            }
            EdgeLabels {
                left: Some(left + 1),
                right: Some(right + 1),
            }
        }
        _ => unreachable!(),
    };
    Ok(labels)
}

/// Eigenpair of the dynamics matrix of `h0 + η h1` continuously connected to `reference`.
///
/// The returned vector has its overlap with `reference` made real and positive.
pub fn tracked_eigenvector(
    h0: &QuadraticHamiltonian,
    h1: &QuadraticHamiltonian,
    eta: f64,
    reference: &CVector,
) -> Result<(CVector, f64)> {
    h0.check_compatible(h1)?;
    let m0 = bdg_dynamics_matrix(h0);
    let m1 = bdg_dynamics_matrix(h1);
    if reference.len() != m0.nrows() {
        return Err(Error::DimensionMismatch {
            expected: m0.nrows(),
            found: reference.len(),
        });
    }
    tracked_eigenvector_dense(&(m0 + m1 * C64::new(eta, 0.0)), h0.statistics(), reference)
}

pub(crate) fn tracked_eigenvector_dense(m: &CMatrix, stat: Statistics, reference: &CVector) -> Result<(CVector, f64)> {
    let dim = m.nrows();
    let n = dim / 2;
    let (values, vectors) = match stat {
        Statistics::Fermi => hermitian_eigh(m)?,
        Statistics::Bose => {
            let off = m.view((0, n), (n, n)).iter().chain(m.view((n, 0), (n, n)).iter()).any(|z| *z != ZERO);
            if off {
                return Err(Error::UnsupportedDecomposition(
                    "bosonic modes are only defined for B = 0",
                ));
            }
            block_eigh(m, n)?
        }
    };
    let mut best = (0usize, -1.0f64, ZERO);
    for l in 0..dim {
        let ov = dot(vectors.column(l).as_slice(), reference.as_slice());
        if ov.norm() > best.1 {
            best = (l, ov.norm(), ov);
        }
    }
    let ref_norm = norm_sqr(reference.as_slice()).sqrt();
    let overlap = best.1 / ref_norm;
    if overlap < 0.5 {
        return Err(Error::TrackingLost { overlap });
    }
    // make W†ref real positive
    let phase = best.2 / best.1;
    let w = vectors.column(best.0).map(|z| z * phase);
    Ok((w, values[best.0]))
}
