//! Turn a [`RunConfig`] into spectra, trajectories and sweep results.

use crate::config::{Horizon, InitialModeConfig, LawConfig, RunConfig, SweepAxis, TargetRef};
use crate::control::ControlLaw;
use crate::dynamics::{evolve, ControlledSystem, EvolveOptions, Observable, Trajectory};
use crate::error::{Error, Result};
use crate::hamiltonian::{mode_norm, ModeVector, QuadraticHamiltonian, Statistics};
use crate::linalg::{CVector, C64, ZERO};
use crate::models::{boundary_number_control, ChainModel};
use crate::robustness::{apply_perturbation, run_seed, run_sweep, Scenario, SweepResult};
use crate::spectral::{edge_localization, eigenmodes, identify_edge_modes, EdgeLabels, SpectralDecomposition};

/// Explicit coefficient lists may miss the statistics norm by this much
/// before being renormalized.
pub const COEFFICIENT_NORM_TOLERANCE: f64 = 1e-6;

/// A built model with its spectrum and (when they exist) edge labels.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub model: ChainModel,
    pub h0: QuadraticHamiltonian,
    pub spectrum: SpectralDecomposition,
    pub labels: Option<EdgeLabels>,
}

impl ModelContext {
    pub fn new(model: &ChainModel) -> Result<Self> {
        let h0 = model.build()?;
        let spectrum = eigenmodes(&h0)?;
        let labels = match identify_edge_modes(&spectrum, &h0) {
            Ok(l) => Some(l),
            Err(Error::NoMidGapMode) => None,
            Err(e) => return Err(e),
        };
        Ok(ModelContext {
            model: *model,
            h0,
            spectrum,
            labels,
        })
    }

    /// 1-based spectral index of a target reference.
    pub fn resolve(&self, t: &TargetRef) -> Result<usize> {
        match t {
            TargetRef::Index(i) => {
                if *i == 0 || *i > self.spectrum.len() {
                    return Err(Error::IndexOutOfRange {
                        index: *i,
                        len: self.spectrum.len(),
                    });
                }
                Ok(*i)
            }
            TargetRef::Label(l) => {
                let labels = self.labels.ok_or(Error::NoMidGapMode)?;
                match l.as_str() {
                    "left" | "right" => labels.get(l).ok_or(Error::NoMidGapMode),
                    _ => Err(Error::schema("target", format!("unknown edge label `{l}`"))),
                }
            }
        }
    }

    pub fn vector(&self, t: &TargetRef) -> Result<CVector> {
        self.spectrum.mode(self.resolve(t)?)
    }

    /// Edge-localization weight of every eigenvector.
    pub fn localization(&self) -> Vec<f64> {
        (0..self.spectrum.len())
            .map(|l| edge_localization(self.spectrum.eigenvectors.column(l).as_slice()))
            .collect()
    }
}

/// Initial mode from a preset or explicit coefficients.
pub fn initial_mode(cfg: &InitialModeConfig, sites: usize, stat: Statistics) -> Result<ModeVector> {
    let n = sites as f64;
    let (c, d): (Vec<C64>, Vec<C64>) = match cfg {
        InitialModeConfig::UniformBoth => {
            let x = C64::new((1.0 / (2.0 * n)).sqrt(), 0.0);
            (vec![x; sites], vec![x; sites])
        }
        InitialModeConfig::UniformCreation => (vec![ZERO; sites], vec![C64::new(n.sqrt().recip(), 0.0); sites]),
        InitialModeConfig::UniformAnnihilation => (vec![C64::new(n.sqrt().recip(), 0.0); sites], vec![ZERO; sites]),
        InitialModeConfig::SingleSite { site, c, d } => {
            if *site == 0 || *site > sites {
                return Err(Error::schema("initial_mode.site", format!("site must lie in 1..={sites}")));
            }
            let mut cs = vec![ZERO; sites];
            let mut ds = vec![ZERO; sites];
            cs[site - 1] = c.to_c64();
            ds[site - 1] = d.to_c64();
            (cs, ds)
        }
        InitialModeConfig::Explicit { c, d } => {
            for (name, v) in [("c", c), ("d", d)] {
                if v.len() != sites {
                    return Err(Error::schema(
                        format!("initial_mode.{name}"),
                        format!("expected {sites} coefficients, found {}", v.len()),
                    ));
                }
            }
            (c.iter().map(|z| z.to_c64()).collect(), d.iter().map(|z| z.to_c64()).collect())
        }
    };
    let raw = ModeVector::from_coefficients(&c, &d, stat)?;
    let norm = mode_norm(&raw);
    if (norm - 1.0).abs() > COEFFICIENT_NORM_TOLERANCE {
        return Err(Error::NormViolation { norm });
    }
    let q = raw.as_vector() / C64::new(norm.sqrt(), 0.0);
    ModeVector::new(q, stat)
}

/// Boundary number-operator controls for the configured sites.
pub fn controls(law: &LawConfig, h0: &QuadraticHamiltonian) -> Result<Vec<QuadraticHamiltonian>> {
    let n = h0.sites();
    law.control_sites(n)
        .into_iter()
        .map(|s| boundary_number_control(n, s, h0.statistics()))
        .collect()
}

pub fn control_law(law: &LawConfig, ctx: &ModelContext) -> Result<ControlLaw> {
    let wrap = |l: ControlLaw, sw: &Option<crate::config::SquareWaveConfig>| match sw {
        Some(sw) => l.with_square_wave(sw.amplitudes.clone(), sw.min_dwell),
        None => l,
    };
    Ok(match law {
        LawConfig::PMatrix {
            gains,
            target,
            square_wave,
            ..
        } => wrap(
            ControlLaw::p_matrix(&ctx.spectrum, ctx.resolve(target)?, gains.clone())?,
            square_wave,
        ),
        LawConfig::Overlap {
            gains,
            target,
            square_wave,
            ..
        } => wrap(ControlLaw::overlap(ctx.vector(target)?, gains.clone()), square_wave),
        LawConfig::DualTarget {
            gains,
            keep,
            suppress,
            square_wave,
            ..
        } => wrap(
            ControlLaw::dual_target(ctx.vector(keep)?, ctx.vector(suppress)?, gains.clone()),
            square_wave,
        ),
        LawConfig::Implicit {
            gain,
            target,
            theta_slope,
            ..
        } => ControlLaw::implicit(ctx.vector(target)?, *theta_slope, *gain),
    })
}

/// Everything needed to integrate one configured run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub ctx: ModelContext,
    pub scenario: Scenario,
    /// Spectral indices of the fidelity targets.
    pub fidelity_indices: Vec<usize>,
}

/// Build the controlled system, apply configured perturbations and resolve
/// fidelity targets.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let ctx = ModelContext::new(&cfg.model)?;
    let law_cfg = cfg.law()?;
    let integ = cfg.integrator()?;
    let law = control_law(law_cfg, &ctx)?;
    let system = ControlledSystem::new(ctx.h0.clone(), controls(law_cfg, &ctx.h0)?, law)?;
    let initial = initial_mode(cfg.initial_mode()?, ctx.h0.sites(), ctx.h0.statistics())?;
    let refs = cfg.fidelity.clone().unwrap_or_else(|| vec![law_cfg.primary_target().clone()]);
    let fidelity_indices = refs.iter().map(|t| ctx.resolve(t)).collect::<Result<Vec<_>>>()?;
    let targets = fidelity_indices
        .iter()
        .map(|&i| ctx.spectrum.mode(i))
        .collect::<Result<Vec<_>>>()?;
    let kitaev = match cfg.model {
        ChainModel::Kitaev(p) => Some(p),
        ChainModel::Ssh(_) => None,
    };
    let mut scenario = Scenario {
        system,
        kitaev,
        initial,
        targets,
        options: EvolveOptions::new(integ.dt, integ.t_end).record_every(integ.record_every),
    };
    for (i, p) in cfg.perturbations.iter().enumerate() {
        let (sys, q0) = apply_perturbation(&scenario, p, run_seed(cfg.seed, 0, i))?;
        scenario.system = sys;
        scenario.initial = q0;
    }
    Ok(Prepared {
        ctx,
        scenario,
        fidelity_indices,
    })
}

#[derive(Debug, Clone)]
pub struct EvolveReport {
    pub prepared: Prepared,
    pub trajectory: Trajectory,
    /// Fidelity at every recorded time.
    pub fidelity: Vec<f64>,
    pub stop_fidelity: Option<f64>,
    pub stop_met: bool,
}

impl EvolveReport {
    pub fn final_fidelity(&self) -> f64 {
        *self.fidelity.last().unwrap_or(&f64::NAN)
    }
}

pub fn run_evolve(cfg: &RunConfig) -> Result<EvolveReport> {
    let prepared = prepare(cfg)?;
    let integ = cfg.integrator()?;
    let mut opts = prepared.scenario.options.clone().without_states();
    if let Some(thr) = integ.stop_fidelity {
        opts = opts.stop_at(prepared.scenario.targets.clone(), thr);
    }
    let mut observables = Vec::new();
    if let Some(EdgeLabels {
        left: Some(l),
        right: Some(r),
    }) = prepared.ctx.labels
    {
        observables.push(Observable::new("O_l", prepared.ctx.spectrum.mode(l)?));
        observables.push(Observable::new("O_r", prepared.ctx.spectrum.mode(r)?));
    }
    let first_fid = observables.len();
    for (i, t) in prepared.scenario.targets.iter().enumerate() {
        observables.push(Observable::new(format!("fidelity_{}", i + 1), t.clone()));
    }
    let trajectory = evolve(&prepared.scenario.system, &prepared.scenario.initial, &opts, &observables)?;
    let fidelity: Vec<f64> = trajectory
        .occupations
        .iter()
        .map(|row| row[first_fid..].iter().sum())
        .collect();
    let stop_met = integ
        .stop_fidelity
        .is_some_and(|thr| trajectory.stopped_early || fidelity.last().is_some_and(|f| *f >= thr));
    Ok(EvolveReport {
        prepared,
        trajectory,
        fidelity,
        stop_fidelity: integ.stop_fidelity,
        stop_met,
    })
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub name: String,
    pub perturbation: SweepAxis,
    /// Integration time of every run.
    pub horizon: f64,
    /// For clean-stop horizons: whether the unperturbed run reached the stop
    /// fidelity before `t_end`.
    pub clean_stop_reached: Option<bool>,
    pub result: SweepResult,
}

#[derive(Debug, Clone)]
pub struct SweepSet {
    pub sweeps: Vec<SweepReport>,
}

/// Worker count: config or override, else the machine's parallelism.
pub fn workers(cfg: &RunConfig) -> usize {
    cfg.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Time at which the unperturbed run first reaches `threshold`, or `t_end`.
pub fn clean_stop_time(scenario: &Scenario, threshold: f64) -> Result<(f64, bool)> {
    let mut opts = scenario.options.clone().without_states();
    opts.record_every = usize::MAX;
    opts = opts.stop_at(scenario.targets.clone(), threshold);
    let traj = evolve(&scenario.system, &scenario.initial, &opts, &[])?;
    Ok((traj.final_time(), traj.stopped_early))
}

pub fn run_sweeps(cfg: &RunConfig) -> Result<SweepSet> {
    let integ = cfg.integrator()?;
    // prepared runs and clean stop times, keyed by initial-mode override
    let mut bases: Vec<(Option<InitialModeConfig>, Prepared, Option<(f64, bool)>)> = Vec::new();
    let mut sweeps = Vec::new();
    for (i, s) in cfg.sweeps.iter().enumerate() {
        let axis = s.axis(&format!("sweeps[{i}]"))?;
        let slot = match bases.iter().position(|b| b.0 == s.initial_mode) {
            Some(k) => k,
            None => {
                let mut c = cfg.clone();
                if let Some(m) = &s.initial_mode {
                    c.initial_mode = Some(m.clone());
                }
                bases.push((s.initial_mode.clone(), prepare(&c)?, None));
                bases.len() - 1
            }
        };
        let horizon = match &s.horizon {
            Horizon::Time(t) => *t,
            Horizon::Named(_) => {
                let base = &mut bases[slot];
                if base.2.is_none() {
                    let thr = integ
                        .stop_fidelity
                        .ok_or_else(|| Error::schema("integrator.stop_fidelity", "required by clean_stop"))?;
                    base.2 = Some(clean_stop_time(&base.1.scenario, thr)?);
                }
                base.2.unwrap().0
            }
        };
        let mut scenario = bases[slot].1.scenario.clone();
        scenario.options.t_end = horizon;
        let seed = run_seed(cfg.seed, i, usize::MAX);
        let result = run_sweep(&scenario, &axis, s.runs_per_point, workers(cfg), seed)?;
        sweeps.push(SweepReport {
            name: s.name.clone(),
            perturbation: s.perturbation,
            horizon,
            clean_stop_reached: bases[slot].2.map(|c| c.1),
            result,
        });
    }
    Ok(SweepSet { sweeps })
}
