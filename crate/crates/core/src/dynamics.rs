//! Fixed-step RK4 integration of `−iQ̇ = (ℋ_0 + Σ_k f_k ℋ_k)Q` under feedback.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{ControlLaw, LawEngine};
use crate::error::{Error, Result};
use crate::hamiltonian::{mode_norm, ModeVector, QuadraticHamiltonian, Statistics, NORM_TOLERANCE};
use crate::linalg::{dot, norm_sqr, CVector, SparseOp, C64, I, ZERO};
use crate::spectral::bdg_dynamics_matrix;

/// Norm deviation at which a trajectory is abandoned.
pub const NORM_DRIFT_LIMIT: f64 = 1e-6;
/// Pairwise overlap allowed between vectors declared orthonormal.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-8;

/// On-site noise redrawn at every integrator step: `count` distinct bulk
/// sites get `μ_j → (1 + ε)μ_j` with `ε` uniform in `range`.
#[derive(Debug, Clone, PartialEq)]
pub struct BulkNoise {
    pub count: usize,
    pub range: (f64, f64),
    /// Unperturbed on-site energies `μ_j`, one per site.
    pub onsite: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ControlledSystem {
    pub h0: QuadraticHamiltonian,
    /// Generators `ℋ_k` seen by the control law.
    pub controls: Vec<QuadraticHamiltonian>,
    /// Extra generator driven by the same amplitude as control `k`, invisible
    /// to the law (cross-talk onto neighbouring sites).
    pub leakage: Vec<Option<QuadraticHamiltonian>>,
    pub law: ControlLaw,
    pub noise: Option<BulkNoise>,
}

impl ControlledSystem {
    pub fn new(h0: QuadraticHamiltonian, controls: Vec<QuadraticHamiltonian>, law: ControlLaw) -> Result<Self> {
        for c in &controls {
            h0.check_compatible(c)?;
        }
        law.validate(2 * h0.sites())?;
        if law.controls() != controls.len() {
            return Err(Error::InvalidLaw(format!(
                "law has {} gains but the system has {} controls",
                law.controls(),
                controls.len()
            )));
        }
        let leakage = vec![None; controls.len()];
        Ok(ControlledSystem {
            h0,
            controls,
            leakage,
            law,
            noise: None,
        })
    }

    pub fn sites(&self) -> usize {
        self.h0.sites()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopRule {
    pub targets: Vec<CVector>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Record every m-th step (the first and last states are always kept).
    pub record_every: usize,
    pub stop: Option<StopRule>,
    /// Keep full state vectors in the trajectory.
    pub keep_states: bool,
}

impl EvolveOptions {
    pub fn new(dt: f64, t_end: f64) -> Self {
        EvolveOptions {
            dt,
            t_end,
            record_every: 1,
            stop: None,
            keep_states: true,
        }
    }

    pub fn record_every(mut self, m: usize) -> Self {
        self.record_every = m;
        self
    }

    pub fn stop_at(mut self, targets: Vec<CVector>, threshold: f64) -> Self {
        self.stop = Some(StopRule { targets, threshold });
        self
    }

    pub fn without_states(mut self) -> Self {
        self.keep_states = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub name: String,
    pub vector: CVector,
}

impl Observable {
    pub fn new(name: impl Into<String>, vector: CVector) -> Self {
        Observable {
            name: name.into(),
            vector,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    /// Largest `|norm(t) − norm(0)|` over every step.
    pub max_norm_deviation: f64,
    /// Largest `(V(t+dt) − V(t)) / max(1, |V(t)|)` over every step.
    pub max_lyapunov_rise: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Empty when the run was asked not to keep states.
    pub states: Vec<ModeVector>,
    pub fields: Vec<Vec<f64>>,
    pub lyapunov: Vec<f64>,
    pub observable_names: Vec<String>,
    /// `occupations[r][i]` is `|Q†v_i|²` at record `r`.
    pub occupations: Vec<Vec<f64>>,
    /// Self-consistent `η` per record for the implicit law.
    pub eta: Option<Vec<f64>>,
    pub final_state: ModeVector,
    pub stopped_early: bool,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn observable(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.observable_names.iter().position(|n| n == name)?;
        Some(self.occupations.iter().map(|row| row[i]).collect())
    }

    pub fn final_occupation(&self, name: &str) -> Option<f64> {
        self.observable(name).and_then(|v| v.last().copied())
    }

    pub fn final_fields(&self) -> &[f64] {
        self.fields.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// `|Q†U|²`
pub fn occupation(q: &ModeVector, u: &CVector) -> Result<f64> {
    if q.as_vector().len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: q.as_vector().len(),
            found: u.len(),
        });
    }
    Ok(dot(u.as_slice(), q.as_slice()).norm_sqr())
}

pub(crate) fn check_orthonormal(us: &[CVector]) -> Result<()> {
    let mut worst: f64 = 0.0;
    for (i, a) in us.iter().enumerate() {
        worst = worst.max((norm_sqr(a.as_slice()) - 1.0).abs());
        for b in &us[i + 1..] {
            worst = worst.max(dot(a.as_slice(), b.as_slice()).norm());
        }
    }
    if worst > ORTHONORMAL_TOLERANCE {
        Err(Error::NonOrthonormalBasis { deviation: worst })
    } else {
        Ok(())
    }
}

/// `Σ_i |Q†U_i|²` over a set of orthonormal vectors.
pub fn subspace_occupation(q: &ModeVector, us: &[CVector]) -> Result<f64> {
    check_orthonormal(us)?;
    us.iter().map(|u| occupation(q, u)).sum()
}

struct NoiseSource {
    rng: ChaCha8Rng,
    count: usize,
    range: (f64, f64),
    onsite: Vec<f64>,
    /// `(0-based site, ΔA_jj)` active for the current step.
    active: Vec<(usize, f64)>,
}

impl NoiseSource {
    fn new(noise: &BulkNoise, sites: usize) -> Result<Self> {
        if sites < 3 || noise.count == 0 || noise.count > sites - 2 {
            return Err(Error::InvalidParameter(format!(
                "bulk noise needs 1 <= n <= {}, got {}",
                sites.saturating_sub(2),
                noise.count
            )));
        }
        if noise.onsite.len() != sites {
            return Err(Error::DimensionMismatch {
                expected: sites,
                found: noise.onsite.len(),
            });
        }
        if !(noise.range.0 <= noise.range.1) || !noise.range.0.is_finite() || !noise.range.1.is_finite() {
            return Err(Error::InvalidParameter("noise range must be a finite interval".into()));
        }
        Ok(NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
            count: noise.count,
            range: noise.range,
            onsite: noise.onsite.clone(),
            active: Vec::with_capacity(noise.count),
        })
    }

    fn redraw(&mut self) {
        let bulk = self.onsite.len() - 2;
        self.active.clear();
        for idx in sample(&mut self.rng, bulk, self.count).iter() {
            let eps = if self.range.0 == self.range.1 {
                self.range.0
            } else {
                self.rng.gen_range(self.range.0..=self.range.1)
            };
            let site = idx + 1;
            self.active.push((site, eps * self.onsite[site]));
        }
    }
}

struct Rhs {
    n: usize,
    h0: SparseOp,
    applied: Vec<SparseOp>,
    noise: Option<NoiseSource>,
    scratch: Vec<C64>,
}

impl Rhs {
    /// `out = i(ℋ_0 + Σ f_k ℋ_k + ΔA)q`
    fn eval(&mut self, q: &[C64], fields: &[f64], out: &mut [C64]) {
        self.h0.apply(q, &mut self.scratch);
        for (op, &f) in self.applied.iter().zip(fields) {
            if f != 0.0 {
                op.apply_add(f, q, &mut self.scratch);
            }
        }
        if let Some(noise) = &self.noise {
            // ΔA enters the upper block as +ΔA and the lower one as −ΔA*
            for &(j, d) in &noise.active {
                self.scratch[j] += q[j] * d;
                self.scratch[self.n + j] -= q[self.n + j] * d;
            }
        }
        for (o, s) in out.iter_mut().zip(&self.scratch) {
            *o = I * s;
        }
    }
}

fn raw_norm(q: &[C64], stat: Statistics) -> f64 {
    let (upper, lower) = q.split_at(q.len() / 2);
    match stat {
        Statistics::Fermi => norm_sqr(upper) + norm_sqr(lower),
        Statistics::Bose => (norm_sqr(upper) - norm_sqr(lower)).abs(),
    }
}

fn axpy(base: &[C64], h: f64, k: &[C64], out: &mut [C64]) {
    for ((o, b), k) in out.iter_mut().zip(base).zip(k) {
        *o = b + k * h;
    }
}

/// Integrate `sys` from `q0` with fixed-step RK4, re-evaluating the feedback
/// law at every stage.
pub fn evolve(sys: &ControlledSystem, q0: &ModeVector, opts: &EvolveOptions, observables: &[Observable]) -> Result<Trajectory> {
    let n = sys.sites();
    let dim = 2 * n;
    if q0.as_vector().len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: q0.as_vector().len(),
        });
    }
    if q0.statistics() != sys.h0.statistics() {
        return Err(Error::InvalidParameter("initial mode statistics differ from the hamiltonian".into()));
    }
    if !(opts.dt > 0.0) || !opts.dt.is_finite() {
        return Err(Error::InvalidStep(opts.dt));
    }
    if !(opts.t_end >= 0.0) || !opts.t_end.is_finite() {
        return Err(Error::InvalidParameter(format!("t_end must be non-negative, got {}", opts.t_end)));
    }
    if opts.record_every == 0 {
        return Err(Error::InvalidParameter("record_every must be at least 1".into()));
    }
    q0.check_invariant(NORM_TOLERANCE)?;
    for o in observables {
        if o.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: o.vector.len(),
            });
        }
    }
    if let Some(stop) = &opts.stop {
        check_orthonormal(&stop.targets)?;
    }

    let stat = sys.h0.statistics();
    let mut engine = LawEngine::new(&sys.law, &sys.h0, &sys.controls)?;
    let applied = sys
        .controls
        .iter()
        .zip(sys.leakage.iter().chain(std::iter::repeat(&None)))
        .map(|(c, leak)| {
            let mut m = bdg_dynamics_matrix(c);
            if let Some(l) = leak {
                sys.h0.check_compatible(l)?;
                m += bdg_dynamics_matrix(l);
            }
            Ok(SparseOp::from_dense(&m))
        })
        .collect::<Result<Vec<_>>>()?;
    let noise = sys.noise.as_ref().map(|nz| NoiseSource::new(nz, n)).transpose()?;
    let mut rhs = Rhs {
        n,
        h0: SparseOp::from_dense(&bdg_dynamics_matrix(&sys.h0)),
        applied,
        noise,
        scratch: vec![ZERO; dim],
    };

    let steps = if opts.t_end == 0.0 {
        0
    } else {
        (opts.t_end / opts.dt - 1e-9).ceil() as usize
    };
    let k = sys.controls.len();
    let norm0 = mode_norm(q0);
    let implicit = engine.eta().is_some();

    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        fields: Vec::new(),
        lyapunov: Vec::new(),
        observable_names: observables.iter().map(|o| o.name.clone()).collect(),
        occupations: Vec::new(),
        eta: implicit.then(Vec::new),
        final_state: q0.clone(),
        stopped_early: false,
        diagnostics: Diagnostics::default(),
    };
    let record = |traj: &mut Trajectory, t: f64, q: &[C64], f: &[f64], v: f64, eta: Option<f64>| {
        traj.times.push(t);
        if opts.keep_states {
            traj.states.push(ModeVector::from_raw(CVector::from_column_slice(q), stat));
        }
        traj.fields.push(f.to_vec());
        traj.lyapunov.push(v);
        traj.occupations
            .push(observables.iter().map(|o| dot(o.vector.as_slice(), q).norm_sqr()).collect());
        if let (Some(list), Some(e)) = (traj.eta.as_mut(), eta) {
            list.push(e);
        }
    };

    let mut q: Vec<C64> = q0.as_slice().to_vec();
    let mut stage = vec![ZERO; dim];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![ZERO; dim], vec![ZERO; dim], vec![ZERO; dim], vec![ZERO; dim]);
    let mut f = vec![0.0; k];
    let mut t = 0.0;
    let mut v_prev: Option<f64> = None;
    let mut last_good = 0.0;
    let mut step = 0;

    let mut v = engine.evaluate(&q, t, &mut f, true)?;
    while step < steps {
        if let Some(vp) = v_prev {
            traj.diagnostics.max_lyapunov_rise = traj.diagnostics.max_lyapunov_rise.max((v - vp) / vp.abs().max(1.0));
        }
        v_prev = Some(v);
        if step % opts.record_every == 0 {
            record(&mut traj, t, &q, &f, v, engine.eta());
        }
        let h = if step + 1 == steps { opts.t_end - t } else { opts.dt };
        if let Some(noise) = rhs.noise.as_mut() {
            noise.redraw();
        }

        rhs.eval(&q, &f, &mut k1);
        axpy(&q, 0.5 * h, &k1, &mut stage);
        engine.evaluate(&stage, t + 0.5 * h, &mut f, false)?;
        rhs.eval(&stage, &f, &mut k2);
        axpy(&q, 0.5 * h, &k2, &mut stage);
        engine.evaluate(&stage, t + 0.5 * h, &mut f, false)?;
        rhs.eval(&stage, &f, &mut k3);
        axpy(&q, h, &k3, &mut stage);
        engine.evaluate(&stage, t + h, &mut f, false)?;
        rhs.eval(&stage, &f, &mut k4);
        for i in 0..dim {
            q[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
        step += 1;
        t = if step == steps { opts.t_end } else { step as f64 * opts.dt };

        let norm = raw_norm(&q, stat);
        let dev = (norm - norm0).abs();
        if !(dev <= NORM_DRIFT_LIMIT) {
            return Err(Error::NormDrift {
                drift: dev,
                last_good_time: last_good,
            });
        }
        traj.diagnostics.max_norm_deviation = traj.diagnostics.max_norm_deviation.max(dev);
        last_good = t;

        v = engine.evaluate(&q, t, &mut f, true)?;
        if let Some(stop) = &opts.stop {
            let fid: f64 = stop.targets.iter().map(|u| dot(u.as_slice(), &q).norm_sqr()).sum();
            if fid >= stop.threshold {
                traj.stopped_early = step < steps;
                break;
            }
        }
    }
    if let Some(vp) = v_prev {
        traj.diagnostics.max_lyapunov_rise = traj.diagnostics.max_lyapunov_rise.max((v - vp) / vp.abs().max(1.0));
    }
    record(&mut traj, t, &q, &f, v, engine.eta());
    traj.diagnostics.steps = step;
    traj.final_state = ModeVector::from_raw(CVector::from_column_slice(&q), stat);
    Ok(traj)
}
