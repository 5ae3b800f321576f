//! Concrete chain Hamiltonians and boundary control generators.
//!
//! All site indices in this module are 1-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{check_site, validate_quadratic, QuadraticHamiltonian, Statistics};
use crate::linalg::{CMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KitaevParams {
    pub sites: usize,
    pub hopping: f64,
    pub pairing: f64,
    pub chemical_potential: f64,
}

impl KitaevParams {
    pub fn new(sites: usize, hopping: f64, pairing: f64, chemical_potential: f64) -> Result<Self> {
        let p = KitaevParams {
            sites,
            hopping,
            pairing,
            chemical_potential,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 2 {
            return Err(Error::InvalidParameter(format!(
                "kitaev chain needs at least 2 sites, got {}",
                self.sites
            )));
        }
        for (name, v) in [
            ("hopping", self.hopping),
            ("pairing", self.pairing),
            ("chemical_potential", self.chemical_potential),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SshParams {
    pub sites: usize,
    pub hopping: f64,
    pub dimerization: f64,
    pub chemical_potential: f64,
}

impl SshParams {
    pub fn new(sites: usize, hopping: f64, dimerization: f64, chemical_potential: f64) -> Result<Self> {
        let p = SshParams {
            sites,
            hopping,
            dimerization,
            chemical_potential,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 2 {
            return Err(Error::InvalidParameter(format!(
                "ssh chain needs at least 2 sites, got {}",
                self.sites
            )));
        }
        if !(0.0..=1.0).contains(&self.dimerization) {
            return Err(Error::InvalidParameter(format!(
                "dimerization must lie in [0, 1], got {}",
                self.dimerization
            )));
        }
        if !self.hopping.is_finite() || !self.chemical_potential.is_finite() {
            return Err(Error::InvalidParameter("ssh parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Either of the two reference chains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChainModel {
    Kitaev(KitaevParams),
    Ssh(SshParams),
}

impl ChainModel {
    pub fn sites(&self) -> usize {
        match self {
            ChainModel::Kitaev(p) => p.sites,
            ChainModel::Ssh(p) => p.sites,
        }
    }

    pub fn statistics(&self) -> Statistics {
        match self {
            ChainModel::Kitaev(_) => Statistics::Fermi,
            ChainModel::Ssh(_) => Statistics::Bose,
        }
    }

    pub fn chemical_potential(&self) -> f64 {
        match self {
            ChainModel::Kitaev(p) => p.chemical_potential,
            ChainModel::Ssh(p) => p.chemical_potential,
        }
    }

    pub fn build(&self) -> Result<QuadraticHamiltonian> {
        match self {
            ChainModel::Kitaev(p) => build_kitaev(p),
            ChainModel::Ssh(p) => build_ssh(p),
        }
    }
}

/// Kitaev chain with per-site chemical potential and per-bond hopping/pairing.
///
/// `bonds[j]` couples sites `j+1` and `j+2`.
pub(crate) fn kitaev_from_arrays(onsite: &[f64], hopping: &[f64], pairing: &[f64]) -> Result<QuadraticHamiltonian> {
    let n = onsite.len();
    debug_assert!(hopping.len() + 1 == n && pairing.len() + 1 == n);
    let mut a = CMatrix::zeros(n, n);
    let mut b = CMatrix::zeros(n, n);
    for (j, &mu) in onsite.iter().enumerate() {
        a[(j, j)] = C64::new(mu, 0.0);
    }
    for j in 0..n - 1 {
        a[(j, j + 1)] = C64::new(-hopping[j], 0.0);
        a[(j + 1, j)] = C64::new(-hopping[j], 0.0);
        // B_{n,j} = 2Δ(δ_{n,j-1} - δ_{n,j+1}): positive just above the diagonal
        b[(j, j + 1)] = C64::new(2.0 * pairing[j], 0.0);
        b[(j + 1, j)] = C64::new(-2.0 * pairing[j], 0.0);
    }
    validate_quadratic(a, b, Statistics::Fermi)
}

pub fn build_kitaev(p: &KitaevParams) -> Result<QuadraticHamiltonian> {
    p.validate()?;
    let n = p.sites;
    kitaev_from_arrays(
        &vec![p.chemical_potential; n],
        &vec![p.hopping; n - 1],
        &vec![p.pairing; n - 1],
    )
}

pub fn build_ssh(p: &SshParams) -> Result<QuadraticHamiltonian> {
    p.validate()?;
    let n = p.sites;
    let mut a = CMatrix::zeros(n, n);
    for j in 0..n {
        a[(j, j)] = C64::new(p.chemical_potential, 0.0);
    }
    for bond in 1..n {
        let sign = if bond % 2 == 0 { 1.0 } else { -1.0 };
        let t = -p.hopping * (1.0 + p.dimerization * sign);
        a[(bond - 1, bond)] = C64::new(t, 0.0);
        a[(bond, bond - 1)] = C64::new(t, 0.0);
    }
    validate_quadratic(a, CMatrix::zeros(n, n), Statistics::Bose)
}

/// Number operator `a_s† a_s` at a 1-based site.
pub fn boundary_number_control(sites: usize, site: usize, stat: Statistics) -> Result<QuadraticHamiltonian> {
    check_site(site, sites)?;
    onsite_generator(sites, &[(site, 1.0)], stat)
}

/// Diagonal generator with the given `(site, weight)` entries.
pub fn onsite_generator(sites: usize, entries: &[(usize, f64)], stat: Statistics) -> Result<QuadraticHamiltonian> {
    let mut a = CMatrix::zeros(sites, sites);
    for &(site, w) in entries {
        check_site(site, sites)?;
        a[(site - 1, site - 1)] += C64::new(w, 0.0);
    }
    validate_quadratic(a, CMatrix::zeros(sites, sites), stat)
}

pub fn kitaev_phase_is_topological(p: &KitaevParams) -> bool {
    2.0 * p.hopping.abs() > p.chemical_potential.abs() && p.pairing != 0.0
}
