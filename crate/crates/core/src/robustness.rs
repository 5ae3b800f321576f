//! Perturbation protocols and Monte Carlo fidelity sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlLaw;
use crate::dynamics::{check_orthonormal, evolve, BulkNoise, ControlledSystem, Diagnostics, EvolveOptions};
use crate::error::{Error, Result};
use crate::hamiltonian::{check_site, ModeVector, QuadraticHamiltonian, NORM_TOLERANCE};
use crate::linalg::{dot, CVector, C64, ZERO};
use crate::models::{kitaev_from_arrays, onsite_generator, KitaevParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryParameter {
    #[serde(rename = "J")]
    Hopping,
    #[serde(rename = "Delta")]
    Pairing,
    #[serde(rename = "mu")]
    ChemicalPotential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSpec {
    /// `â′ = √(1−ε)â + √ε â_j`; a missing site is drawn uniformly from `2..=N` per run.
    InitialMode { strength: f64, site: Option<usize> },
    /// Every emitted field multiplied by `1 + δ`.
    ControlScale { delta: f64 },
    /// Boundary controls also shift the neighbouring chemical potential by `δ·f_k·μ`.
    NeighborLeakage { delta: f64 },
    /// One Kitaev parameter scaled by `1 + δ` on the terms touching sites 1 and N.
    BoundaryParam { delta: f64, which: BoundaryParameter },
    /// `count` bulk on-site energies jitter by a factor in `range` every step.
    BulkChemicalNoise { count: usize, range: (f64, f64) },
}

impl PerturbationSpec {
    /// The swept quantity, used as the axis coordinate in sweep output.
    pub fn magnitude(&self) -> f64 {
        match self {
            PerturbationSpec::InitialMode { strength, .. } => *strength,
            PerturbationSpec::ControlScale { delta }
            | PerturbationSpec::NeighborLeakage { delta }
            | PerturbationSpec::BoundaryParam { delta, .. } => *delta,
            PerturbationSpec::BulkChemicalNoise { count, .. } => *count as f64,
        }
    }

    /// Whether repeated runs differ (and so need independent seeds).
    pub fn is_random(&self) -> bool {
        matches!(
            self,
            PerturbationSpec::InitialMode { site: None, .. } | PerturbationSpec::BulkChemicalNoise { .. }
        )
    }
}

/// Mix `√(1−ε)` of `q0` with `√ε` of the pure annihilation mode at `site`.
pub fn perturb_initial_mode(q0: &ModeVector, strength: f64, site: usize) -> Result<ModeVector> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidParameter(format!(
            "initial-mode uncertainty must lie in [0, 1], got {strength}"
        )));
    }
    check_site(site, q0.sites())?;
    let mut q: CVector = q0.as_vector() * C64::new((1.0 - strength).sqrt(), 0.0);
    q[site - 1] += C64::new(strength.sqrt(), 0.0);
    let mixed = ModeVector::new(q, q0.statistics())?;
    mixed.check_invariant(NORM_TOLERANCE)?;
    Ok(mixed)
}

/// The law with every emitted field scaled by `1 + δ`.
pub fn perturb_control(law: &ControlLaw, delta: f64) -> Result<ControlLaw> {
    if !(delta > -1.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("control perturbation must exceed -1, got {delta}")));
    }
    Ok(law.clone().scaled(1.0 + delta))
}

/// Site of a single-site number-operator control, if that is what `g` is.
fn control_site(g: &QuadraticHamiltonian) -> Option<usize> {
    let n = g.sites();
    if g.has_pairing() {
        return None;
    }
    let mut site = None;
    for r in 0..n {
        for c in 0..n {
            if g.a()[(r, c)] != ZERO {
                if r != c || site.is_some() {
                    return None;
                }
                site = Some(r + 1);
            }
        }
    }
    site
}

/// Slave a neighbouring on-site term to each boundary control.
///
/// The control at site 1 leaks onto site 2 and the one at site N onto N−1.
pub fn neighbor_leakage(sys: &ControlledSystem, delta: f64) -> Result<ControlledSystem> {
    let n = sys.sites();
    if n < 4 {
        return Err(Error::ChainTooShort { sites: n, required: 4 });
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("leakage must be non-negative, got {delta}")));
    }
    let mut out = sys.clone();
    for (k, g) in sys.controls.iter().enumerate() {
        let nbr = match control_site(g) {
            Some(1) => 2,
            Some(s) if s == n => n - 1,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "control {} is not a boundary number operator",
                    k + 1
                )))
            }
        };
        let mu = sys.h0.onsite(nbr)?;
        out.leakage[k] = Some(onsite_generator(n, &[(nbr, delta * mu)], sys.h0.statistics())?);
    }
    Ok(out)
}

/// Kitaev chain with one parameter scaled by `1 + δ` at the chain ends only.
pub fn perturb_boundary_params(p: &KitaevParams, delta: f64, which: BoundaryParameter) -> Result<QuadraticHamiltonian> {
    p.validate()?;
    let n = p.sites;
    let mut onsite = vec![p.chemical_potential; n];
    let mut hopping = vec![p.hopping; n - 1];
    let mut pairing = vec![p.pairing; n - 1];
    let s = 1.0 + delta;
    match which {
        BoundaryParameter::ChemicalPotential => {
            onsite[0] *= s;
            onsite[n - 1] *= s;
        }
        BoundaryParameter::Hopping => {
            hopping[0] = p.hopping * s;
            hopping[n - 2] = p.hopping * s;
        }
        BoundaryParameter::Pairing => {
            pairing[0] = p.pairing * s;
            pairing[n - 2] = p.pairing * s;
        }
    }
    kitaev_from_arrays(&onsite, &hopping, &pairing)
}

/// Noise source for `count` randomly chosen bulk sites per step.
pub fn bulk_chemical_noise(h: &QuadraticHamiltonian, count: usize, range: (f64, f64), seed: u64) -> Result<BulkNoise> {
    let n = h.sites();
    if n < 3 || count == 0 || count > n - 2 {
        return Err(Error::InvalidParameter(format!(
            "bulk noise needs 1 <= n <= {}, got {count}",
            n.saturating_sub(2)
        )));
    }
    if !(range.0 <= range.1) || !range.0.is_finite() || !range.1.is_finite() {
        return Err(Error::InvalidParameter("noise range must be a finite interval".into()));
    }
    let onsite = (1..=n).map(|j| h.onsite(j)).collect::<Result<Vec<_>>>()?;
    Ok(BulkNoise {
        count,
        range,
        onsite,
        seed,
    })
}

/// `Σ |Q†U|²` over orthonormal targets.
pub fn fidelity(q: &ModeVector, targets: &[CVector]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::InvalidParameter("fidelity needs at least one target".into()));
    }
    check_orthonormal(targets)?;
    for t in targets {
        if t.len() != q.as_vector().len() {
            return Err(Error::DimensionMismatch {
                expected: q.as_vector().len(),
                found: t.len(),
            });
        }
    }
    Ok(targets.iter().map(|t| dot(t.as_slice(), q.as_slice()).norm_sqr()).sum())
}

/// A nominal controlled run that perturbations are applied to.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: ControlledSystem,
    /// Needed by boundary-parameter perturbations.
    pub kitaev: Option<KitaevParams>,
    pub initial: ModeVector,
    pub targets: Vec<CVector>,
    pub options: EvolveOptions,
}

/// Perturbed system and initial mode for one run.
pub fn apply_perturbation(scn: &Scenario, spec: &PerturbationSpec, seed: u64) -> Result<(ControlledSystem, ModeVector)> {
    let mut sys = scn.system.clone();
    let mut q0 = scn.initial.clone();
    match spec {
        PerturbationSpec::InitialMode { strength, site } => {
            let n = sys.sites();
            let j = match site {
                Some(j) => *j,
                None => ChaCha8Rng::seed_from_u64(seed).gen_range(2..=n),
            };
            q0 = perturb_initial_mode(&q0, *strength, j)?;
        }
        PerturbationSpec::ControlScale { delta } => sys.law = perturb_control(&sys.law, *delta)?,
        PerturbationSpec::NeighborLeakage { delta } => sys = neighbor_leakage(&sys, *delta)?,
        PerturbationSpec::BoundaryParam { delta, which } => {
            let p = scn.kitaev.as_ref().ok_or_else(|| {
                Error::InvalidParameter("boundary perturbations need a kitaev model".into())
            })?;
            sys.h0 = perturb_boundary_params(p, *delta, *which)?;
        }
        PerturbationSpec::BulkChemicalNoise { count, range } => {
            sys.noise = Some(bulk_chemical_noise(&sys.h0, *count, *range, seed)?);
        }
    }
    Ok((sys, q0))
}

/// Final-state fidelity of one perturbed run, with its integrator diagnostics.
pub fn run_single(scn: &Scenario, spec: &PerturbationSpec, seed: u64) -> Result<(f64, Diagnostics)> {
    let (sys, q0) = apply_perturbation(scn, spec, seed)?;
    let mut opts = scn.options.clone();
    opts.keep_states = false;
    opts.record_every = usize::MAX;
    let traj = evolve(&sys, &q0, &opts, &[])?;
    Ok((fidelity(&traj.final_state, &scn.targets)?, traj.diagnostics))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of run `run` at axis point `axis`:
/// `splitmix64(splitmix64(splitmix64(master) ^ axis) ^ run)`.
pub fn run_seed(master: u64, axis: usize, run: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ axis as u64) ^ run as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub axis: Vec<f64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub std: Vec<f64>,
    pub runs_per_point: usize,
    pub failures: Vec<usize>,
    /// Largest norm drift over the successful runs at each point.
    pub max_norm_deviation: Vec<f64>,
    /// Per-run fidelities (`NaN` for failed runs), `[axis][run]`.
    pub fidelities: Vec<Vec<f64>>,
}

/// Run `runs_per_point` trajectories at every axis point on `workers` threads.
///
/// Perturbations without randomness give identical runs, so they are
/// integrated once and replicated.
pub fn run_sweep(
    base: &Scenario,
    axis: &[PerturbationSpec],
    runs_per_point: usize,
    workers: usize,
    master_seed: u64,
) -> Result<SweepResult> {
    if runs_per_point == 0 {
        return Err(Error::InvalidParameter("runs_per_point must be at least 1".into()));
    }
    if axis.is_empty() {
        return Err(Error::InvalidParameter("sweep axis is empty".into()));
    }
    let jobs: Vec<(usize, usize)> = axis
        .iter()
        .enumerate()
        .flat_map(|(a, spec)| {
            let runs = if spec.is_random() { runs_per_point } else { 1 };
            (0..runs).map(move |r| (a, r))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<(f64, Diagnostics)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(a, r)| run_single(base, &axis[a], run_seed(master_seed, a, r)))
            .collect()
    });

    let mut fidelities = vec![Vec::with_capacity(runs_per_point); axis.len()];
    let mut drift = vec![0.0f64; axis.len()];
    for (&(a, _), res) in jobs.iter().zip(&results) {
        fidelities[a].push(res.as_ref().map(|r| r.0).unwrap_or(f64::NAN));
        if let Ok((_, d)) = res {
            drift[a] = drift[a].max(d.max_norm_deviation);
        }
    }
    for (a, spec) in axis.iter().enumerate() {
        if !spec.is_random() {
            let f = fidelities[a][0];
            fidelities[a] = vec![f; runs_per_point];
        }
    }
    let mut out = SweepResult {
        axis: axis.iter().map(PerturbationSpec::magnitude).collect(),
        mean: Vec::new(),
        min: Vec::new(),
        max: Vec::new(),
        std: Vec::new(),
        runs_per_point,
        failures: Vec::new(),
        max_norm_deviation: drift,
        fidelities,
    };
    for row in &out.fidelities {
        let ok: Vec<f64> = row.iter().copied().filter(|f| !f.is_nan()).collect();
        out.failures.push(row.len() - ok.len());
        if ok.is_empty() {
            for v in [&mut out.mean, &mut out.min, &mut out.max, &mut out.std] {
                v.push(f64::NAN);
            }
            continue;
        }
        let m = ok.iter().sum::<f64>() / ok.len() as f64;
        let var = ok.iter().map(|f| (f - m) * (f - m)).sum::<f64>() / ok.len() as f64;
        out.mean.push(m);
        out.min.push(ok.iter().copied().fold(f64::INFINITY, f64::min));
        out.max.push(ok.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        out.std.push(var.sqrt());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Statistics;
    use crate::models::{boundary_number_control, build_kitaev};
    use crate::spectral::eigenmodes;

    fn params(n: usize) -> KitaevParams {
        KitaevParams::new(n, 2.0, 1.0, 2.0).unwrap()
    }

    fn scenario(n: usize, t_end: f64) -> Scenario {
        let p = params(n);
        let h = build_kitaev(&p).unwrap();
        let spec = eigenmodes(&h).unwrap();
        let law = ControlLaw::p_matrix(&spec, n + 1, vec![10.0, 10.0]).unwrap();
        let c = vec![
            boundary_number_control(n, 1, Statistics::Fermi).unwrap(),
            boundary_number_control(n, n, Statistics::Fermi).unwrap(),
        ];
        let x = C64::new(1.0 / (n as f64).sqrt(), 0.0);
        let q0 = ModeVector::from_coefficients(&vec![x; n], &vec![ZERO; n], Statistics::Fermi).unwrap();
        Scenario {
            system: ControlledSystem::new(h, c, law).unwrap(),
            kitaev: Some(p),
            initial: q0,
            targets: vec![spec.mode(n + 1).unwrap()],
            options: EvolveOptions::new(0.01, t_end),
        }
    }

    fn a1(n: usize) -> ModeVector {
        let mut c = vec![ZERO; n];
        c[0] = C64::new(1.0, 0.0);
        ModeVector::from_coefficients(&c, &vec![ZERO; n], Statistics::Fermi).unwrap()
    }

    #[test]
    fn initial_mode_mixture() {
        let q = a1(6);
        assert_eq!(perturb_initial_mode(&q, 0.0, 3).unwrap(), q);
        let pure = perturb_initial_mode(&q, 1.0, 3).unwrap();
        assert!((pure.c(3) - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(pure.c(1).norm() < 1e-15);
        let mixed = perturb_initial_mode(&q, 0.02, 4).unwrap();
        assert!((mixed.norm() - 1.0).abs() < 1e-12);
        assert!(matches!(perturb_initial_mode(&q, 0.3, 1), Err(Error::NormViolation { .. })));
        assert!(perturb_initial_mode(&q, 1.5, 2).is_err());
    }

    #[test]
    fn control_scale() {
        let s = scenario(6, 1.0);
        assert_eq!(perturb_control(&s.system.law, 0.0).unwrap(), s.system.law);
        assert_eq!(perturb_control(&s.system.law, 0.1).unwrap().field_scale, 1.1);
        assert!(perturb_control(&s.system.law, -1.0).is_err());
    }

    #[test]
    fn leakage_generators() {
        let s = scenario(30, 1.0);
        let leaky = neighbor_leakage(&s.system, 0.5).unwrap();
        let l1 = leaky.leakage[0].as_ref().unwrap();
        let l2 = leaky.leakage[1].as_ref().unwrap();
        assert_eq!(l1.a()[(1, 1)].re, 1.0);
        assert_eq!(l2.a()[(28, 28)].re, 1.0);
        assert_eq!(l1.a().iter().filter(|z| z.norm() != 0.0).count(), 1);
        let short = scenario(3, 1.0);
        assert_eq!(
            neighbor_leakage(&short.system, 0.1).unwrap_err(),
            Error::ChainTooShort { sites: 3, required: 4 }
        );
    }

    #[test]
    fn zero_leakage_is_identity_on_dynamics() {
        let s = scenario(8, 5.0);
        let leaky = neighbor_leakage(&s.system, 0.0).unwrap();
        let a = evolve(&s.system, &s.initial, &s.options, &[]).unwrap();
        let b = evolve(&leaky, &s.initial, &s.options, &[]).unwrap();
        assert!((a.final_state.as_vector() - b.final_state.as_vector()).norm() < 1e-12);
    }

    #[test]
    fn boundary_parameters() {
        let p = params(30);
        assert_eq!(perturb_boundary_params(&p, 0.0, BoundaryParameter::Hopping).unwrap(), build_kitaev(&p).unwrap());
        let h = perturb_boundary_params(&p, 0.05, BoundaryParameter::ChemicalPotential).unwrap();
        assert!((h.a()[(0, 0)].re - 2.1).abs() < 1e-15);
        assert!((h.a()[(29, 29)].re - 2.1).abs() < 1e-15);
        assert_eq!(h.a()[(1, 1)].re, 2.0);
        let h = perturb_boundary_params(&p, -0.1, BoundaryParameter::Pairing).unwrap();
        assert!((h.b()[(0, 1)].re - 1.8).abs() < 1e-15);
        assert!((h.b()[(28, 29)].re - 1.8).abs() < 1e-15);
        assert_eq!(h.b()[(1, 2)].re, 2.0);
    }

    #[test]
    fn noise_validation() {
        let h = build_kitaev(&params(10)).unwrap();
        assert!(bulk_chemical_noise(&h, 0, (-0.02, 0.02), 1).is_err());
        assert!(bulk_chemical_noise(&h, 9, (-0.02, 0.02), 1).is_err());
        let nz = bulk_chemical_noise(&h, 8, (-0.02, 0.02), 1).unwrap();
        assert_eq!(nz.onsite, vec![2.0; 10]);
    }

    #[test]
    fn fidelity_against_full_basis_is_norm() {
        let h = build_kitaev(&params(8)).unwrap();
        let spec = eigenmodes(&h).unwrap();
        let all: Vec<CVector> = (1..=16).map(|l| spec.mode(l).unwrap()).collect();
        let s = scenario(8, 1.0);
        assert!((fidelity(&s.initial, &all).unwrap() - 1.0).abs() < 1e-12);
        assert!(fidelity(&s.initial, &[]).is_err());
    }

    #[test]
    fn sweep_is_deterministic_and_matches_single_run() {
        let s = scenario(10, 3.0);
        let axis = vec![
            PerturbationSpec::ControlScale { delta: 0.0 },
            PerturbationSpec::BulkChemicalNoise {
                count: 3,
                range: (-0.02, 0.02),
            },
        ];
        let a = run_sweep(&s, &axis, 3, 2, 42).unwrap();
        let b = run_sweep(&s, &axis, 3, 1, 42).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let (clean, _) = run_single(&s, &axis[0], 0).unwrap();
        assert_eq!(a.mean[0], clean);
        assert_eq!(a.std[0], 0.0);
        assert_eq!(a.failures, vec![0, 0]);
        assert_eq!(a.axis, vec![0.0, 3.0]);
        let c = run_sweep(&s, &axis, 3, 1, 43).unwrap();
        assert_ne!(a.fidelities[1], c.fidelities[1]);
    }

    #[test]
    fn failed_runs_are_counted() {
        let s = scenario(10, 1.0);
        // non-orthogonal mixture with the initial mode is rejected per run
        let mut base = s.clone();
        base.initial = a1(10);
        let axis = vec![PerturbationSpec::InitialMode {
            strength: 0.5,
            site: Some(1),
        }];
        let r = run_sweep(&base, &axis, 2, 1, 1).unwrap();
        assert_eq!(r.failures, vec![2]);
        assert!(r.mean[0].is_nan());
    }

    #[test]
    fn seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for a in 0..20 {
            for r in 0..30 {
                assert!(seen.insert(run_seed(7, a, r)));
            }
        }
    }
}
