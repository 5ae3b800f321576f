//! Lyapunov feedback laws for the control amplitudes `f_k`.
//!
//! Sign convention: every law here is oriented so that `V̇ ≤ 0` along the
//! flow `Q̇ = iℋQ`. For the projector-type laws this is
//! `f_k = 2F_k·Im(Q†ℋ_k U U†Q)` per target.

use crate::error::{Error, Result};
use crate::hamiltonian::{ModeVector, QuadraticHamiltonian, Statistics};
use crate::linalg::{dot, hermitian_eigh, norm_sqr, CMatrix, CVector, C64, ZERO};
use crate::spectral::{bdg_dynamics_matrix, tracked_eigenvector_dense, SpectralDecomposition};

/// Imaginary residual above which a quadratic form is not accepted as real.
pub const REAL_FIELD_TOLERANCE: f64 = 1e-9;
/// Exit tolerance of the η fixed-point iteration.
pub const ETA_TOLERANCE: f64 = 1e-12;
pub const ETA_MAX_ITERATIONS: usize = 200;
const ETA_DAMPING: f64 = 0.5;

/// `P = −U^T U^T†`, so that `Q†PQ = −|Q†U^T|²`.
pub fn build_p_matrix(spec: &SpectralDecomposition, target_index: usize) -> Result<CMatrix> {
    let u = spec.mode(target_index)?;
    Ok(-(&u * u.adjoint()))
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// `f = −iF·Q†[P, ℋ_k]Q` evaluated densely.
pub fn p_matrix_field(q: &ModeVector, p: &CMatrix, hk: &CMatrix, gain: f64) -> Result<f64> {
    let dim = q.as_vector().len();
    check_len(dim, p.nrows())?;
    check_len(dim, hk.nrows())?;
    let comm = p * hk - hk * p;
    let form = q.as_vector().dotc(&(comm * q.as_vector()));
    let value = C64::new(0.0, -gain) * form;
    let scale = gain.abs() * norm_sqr(q.as_slice()).max(1.0);
    if value.im.abs() > REAL_FIELD_TOLERANCE * scale {
        return Err(Error::NonRealField {
            residual: value.im.abs(),
        });
    }
    Ok(value.re)
}

/// `F·Im(Q†ℋ_k Q_T Q_T†Q)`
pub fn overlap_field(q: &ModeVector, target: &CVector, hk: &CMatrix, gain: f64) -> Result<f64> {
    check_len(q.as_vector().len(), target.len())?;
    check_len(target.len(), hk.nrows())?;
    let ht = hk * target;
    Ok(gain * (dot(q.as_slice(), ht.as_slice()) * dot(target.as_slice(), q.as_slice())).im)
}

/// `F·Im(Q†ℋ_k Q_T1 Q_T1†Q − Q†ℋ_k Q_T2 Q_T2†Q)`
pub fn dual_target_field(q: &ModeVector, keep: &CVector, suppress: &CVector, hk: &CMatrix, gain: f64) -> Result<f64> {
    Ok(overlap_field(q, keep, hk, gain)? - overlap_field(q, suppress, hk, gain)?)
}

/// `+F′` for positive input, `−F′` for negative, `0` at exactly zero.
pub fn square_wave_wrap(inner: f64, amplitude: f64) -> f64 {
    if inner > 0.0 {
        amplitude
    } else if inner < 0.0 {
        -amplitude
    } else {
        0.0
    }
}

/// `η + F·Im(Q†ℋ_1 W W†Q)` for a tracked vector `W` at parameter `η`.
pub fn implicit_field(q: &ModeVector, w: &CVector, eta: f64, h1: &CMatrix, gain: f64) -> Result<f64> {
    Ok(eta + overlap_field(q, w, h1, gain)?)
}

/// Fixed point of `η = θ·(1 − |Q†W_η|²)` using the tracker's continuation state.
pub fn solve_eta(q: &ModeVector, tracker: &mut EtaTracker) -> Result<f64> {
    tracker.solve(q.as_slice())
}

#[derive(Debug, Clone, PartialEq)]
pub enum LawKind {
    /// `V = Q†PQ` with `P = Σ p_i U_i U_i†`, given as `(p_i, U_i)` pairs.
    PMatrix { projectors: Vec<(f64, CVector)> },
    /// `V = 1 − |Q†Q_T|²`
    Overlap { target: CVector },
    /// `V = 2 − |Q†Q_T1|² + |Q†Q_T2|²`
    DualTarget { keep: CVector, suppress: CVector },
    /// `V = 1 − |Q†W_η|²` with `η` solved self-consistently.
    Implicit { target: CVector, theta_slope: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquareWave {
    pub amplitudes: Vec<f64>,
    /// Minimum time between sign flips of a control. Zero samples the sign at
    /// every integrator stage; any positive value decides the sign once per
    /// accepted step and holds it for at least this long.
    pub min_dwell: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlLaw {
    pub kind: LawKind,
    pub gains: Vec<f64>,
    pub square_wave: Option<SquareWave>,
    /// Multiplies every emitted field (`1 + δ` for a control-amplitude error).
    pub field_scale: f64,
}

impl ControlLaw {
    fn with_kind(kind: LawKind, gains: Vec<f64>) -> Self {
        ControlLaw {
            kind,
            gains,
            square_wave: None,
            field_scale: 1.0,
        }
    }

    /// Single-target P-matrix law (`p_T = −1`, all other weights zero).
    pub fn p_matrix(spec: &SpectralDecomposition, target_index: usize, gains: Vec<f64>) -> Result<Self> {
        let u = spec.mode(target_index)?;
        Ok(Self::with_kind(
            LawKind::PMatrix {
                projectors: vec![(-1.0, u)],
            },
            gains,
        ))
    }

    pub fn overlap(target: CVector, gains: Vec<f64>) -> Self {
        Self::with_kind(LawKind::Overlap { target }, gains)
    }

    pub fn dual_target(keep: CVector, suppress: CVector, gains: Vec<f64>) -> Self {
        Self::with_kind(LawKind::DualTarget { keep, suppress }, gains)
    }

    pub fn implicit(target: CVector, theta_slope: f64, gain: f64) -> Self {
        Self::with_kind(LawKind::Implicit { target, theta_slope }, vec![gain])
    }

    pub fn with_square_wave(mut self, amplitudes: Vec<f64>, min_dwell: f64) -> Self {
        self.square_wave = Some(SquareWave { amplitudes, min_dwell });
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.field_scale *= factor;
        self
    }

    pub fn controls(&self) -> usize {
        self.gains.len()
    }

    /// Targets whose occupations define this law's goal.
    pub fn target_vectors(&self) -> Vec<CVector> {
        match &self.kind {
            LawKind::PMatrix { projectors } => projectors.iter().map(|(_, u)| u.clone()).collect(),
            LawKind::Overlap { target } | LawKind::Implicit { target, .. } => vec![target.clone()],
            LawKind::DualTarget { keep, suppress } => vec![keep.clone(), suppress.clone()],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.gains.is_empty() {
            return Err(Error::InvalidLaw("at least one control gain is required".into()));
        }
        if let Some(g) = self.gains.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::InvalidLaw(format!("gains must be positive, got {g}")));
        }
        if !(self.field_scale.is_finite() && self.field_scale > 0.0) {
            return Err(Error::InvalidLaw(format!(
                "field scale must be positive, got {}",
                self.field_scale
            )));
        }
        if let Some(sw) = &self.square_wave {
            if sw.amplitudes.len() != self.gains.len() {
                return Err(Error::InvalidLaw("one square-wave amplitude per control is required".into()));
            }
            if sw.amplitudes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                return Err(Error::InvalidLaw("square-wave amplitudes must be positive".into()));
            }
            if !(sw.min_dwell >= 0.0) {
                return Err(Error::InvalidLaw("min_dwell must be non-negative".into()));
            }
        }
        for v in self.target_vectors() {
            check_len(dim, v.len())?;
        }
        match &self.kind {
            LawKind::DualTarget { keep, suppress } if (keep - suppress).norm() == 0.0 => {
                Err(Error::InvalidLaw("dual-target law needs two distinct targets".into()))
            }
            LawKind::Implicit { theta_slope, .. } if !(theta_slope.is_finite() && *theta_slope > 0.0) => {
                Err(Error::InvalidLaw("theta slope must be positive".into()))
            }
            LawKind::Implicit { .. } if self.gains.len() != 1 => {
                Err(Error::InvalidLaw("implicit law drives exactly one control".into()))
            }
            LawKind::PMatrix { projectors } if projectors.is_empty() => {
                Err(Error::InvalidLaw("P-matrix law needs at least one projector".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Continuation state of the implicit law: current `η` and tracked `W_η`.
///
/// Each trajectory owns its tracker.
#[derive(Debug, Clone)]
pub struct EtaTracker {
    theta_slope: f64,
    eta: f64,
    target: CVector,
    mode: TrackerMode,
    /// `W†Q` and `Q†ℋ_1W` at the last solved `η`.
    overlap: C64,
    h1_overlap: C64,
}

#[derive(Debug, Clone)]
enum TrackerMode {
    /// `ℋ_0 + ηℋ_1` restricted to one block where `ℋ_1` is a single diagonal entry.
    RankOne(RankOne),
    Dense {
        m0: CMatrix,
        m1: CMatrix,
        stat: Statistics,
        w: CVector,
    },
}

#[derive(Debug, Clone)]
struct RankOne {
    /// Offset of the block inside the 2N vector and its size.
    offset: usize,
    size: usize,
    /// Perturbed row within the block and its weight `ρ`.
    row: usize,
    rho: f64,
    /// Non-deflated eigenpairs of the block: eigenvalue gaps to the target `δ_i`,
    /// the components `z_i = u_i†e_row` and the eigenvectors.
    delta: Vec<f64>,
    z: Vec<C64>,
    basis: Vec<Vec<C64>>,
    /// Index of the target among the non-deflated pairs, or `None` when the
    /// target does not feel the perturbation.
    target: Option<usize>,
    target_value: f64,
    /// Block part of the target, used when it is deflated.
    target_block: Vec<C64>,
    /// Last root offset `λ − d_T`, reused as a warm start.
    tau: f64,
    /// Scratch for `u_i†Q`.
    proj: Vec<C64>,
}

impl EtaTracker {
    /// Tracker for `ℋ_0 + ηℋ_1` started at `W_0 = target`; uses the rank-one
    /// secular equation whenever the generator allows it.
    pub fn new(h0: &QuadraticHamiltonian, h1: &QuadraticHamiltonian, target: &CVector, theta_slope: f64) -> Result<Self> {
        h0.check_compatible(h1)?;
        check_len(2 * h0.sites(), target.len())?;
        let mode = match RankOne::build(h0, h1, target)? {
            Some(r) => TrackerMode::RankOne(r),
            None => Self::dense_mode(h0, h1, target),
        };
        Ok(Self::with_mode(mode, target, theta_slope))
    }

    /// Tracker that always re-diagonalizes the full dynamics matrix.
    pub fn dense(h0: &QuadraticHamiltonian, h1: &QuadraticHamiltonian, target: &CVector, theta_slope: f64) -> Result<Self> {
        h0.check_compatible(h1)?;
        check_len(2 * h0.sites(), target.len())?;
        Ok(Self::with_mode(Self::dense_mode(h0, h1, target), target, theta_slope))
    }

    fn dense_mode(h0: &QuadraticHamiltonian, h1: &QuadraticHamiltonian, target: &CVector) -> TrackerMode {
        TrackerMode::Dense {
            m0: bdg_dynamics_matrix(h0),
            m1: bdg_dynamics_matrix(h1),
            stat: h0.statistics(),
            w: target.clone(),
        }
    }

    fn with_mode(mode: TrackerMode, target: &CVector, theta_slope: f64) -> Self {
        EtaTracker {
            theta_slope,
            eta: 0.0,
            target: target.clone(),
            mode,
            overlap: ZERO,
            h1_overlap: ZERO,
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn uses_rank_one(&self) -> bool {
        matches!(self.mode, TrackerMode::RankOne(_))
    }

    /// `W†Q` at the last solved `η`.
    pub fn overlap(&self) -> C64 {
        self.overlap
    }

    /// `V = 1 − |Q†W_η|²` at the last solve.
    pub fn lyapunov(&self) -> f64 {
        1.0 - self.overlap.norm_sqr()
    }

    /// `Im(Q†ℋ_1 W W†Q)` at the last solve.
    pub fn feedback(&self) -> f64 {
        (self.h1_overlap * self.overlap).im
    }

    /// Tracked eigenpair at the current `η`, phase fixed so `W†U^T` is real positive.
    pub fn eigenpair(&self) -> Result<(CVector, f64)> {
        let (w, lam) = match &self.mode {
            TrackerMode::Dense { m0, m1, stat, w } => {
                tracked_eigenvector_dense(&(m0 + m1 * C64::new(self.eta, 0.0)), *stat, w)?
            }
            TrackerMode::RankOne(r) => {
                let (y, lam) = r.coefficients(self.eta);
                (r.vector(&y, self.target.len()), lam)
            }
        };
        let ov = dot(w.as_slice(), self.target.as_slice());
        let phase = if ov.norm() > 0.0 { ov.conj() / ov.norm() } else { C64::new(1.0, 0.0) };
        Ok((w.map(|z| z * phase.conj()), lam))
    }

    /// Evaluate `θ·(1 − |Q†W_η|²)` and cache the overlaps at `η`.
    fn map(&mut self, q: &[C64], eta: f64) -> Result<f64> {
        match &mut self.mode {
            TrackerMode::Dense { m0, m1, stat, w } => {
                let (nw, _) = tracked_eigenvector_dense(&(&*m0 + &*m1 * C64::new(eta, 0.0)), *stat, w)?;
                let h1w = &*m1 * &nw;
                self.overlap = dot(nw.as_slice(), q);
                self.h1_overlap = dot(q, h1w.as_slice());
                *w = nw;
            }
            TrackerMode::RankOne(r) => {
                let (ov, h1ov) = r.overlaps(eta, q);
                self.overlap = ov;
                self.h1_overlap = h1ov;
            }
        }
        Ok(self.theta_slope * (1.0 - self.overlap.norm_sqr()))
    }

    /// Damped fixed-point iteration, accelerated by Aitken extrapolation and
    /// seeded from the previous `η`.
    pub fn solve(&mut self, q: &[C64]) -> Result<f64> {
        check_len(self.target.len(), q.len())?;
        if let TrackerMode::RankOne(r) = &mut self.mode {
            r.project(q);
        }
        let mut x = self.eta;
        let mut evaluations = 0;
        let damped = |this: &mut Self, x: f64, evaluations: &mut usize| -> Result<f64> {
            *evaluations += 1;
            let phi = this.map(q, x)?;
            Ok((1.0 - ETA_DAMPING) * x + ETA_DAMPING * phi)
        };
        while evaluations < ETA_MAX_ITERATIONS {
            let x1 = damped(self, x, &mut evaluations)?;
            if (x1 - x).abs() < ETA_TOLERANCE {
                // the cached overlaps belong to x
                self.eta = x;
                return Ok(x);
            }
            let x2 = damped(self, x1, &mut evaluations)?;
            if (x2 - x1).abs() < ETA_TOLERANCE {
                self.eta = x1;
                return Ok(x1);
            }
            let denom = x2 - 2.0 * x1 + x;
            let accel = x - (x1 - x) * (x1 - x) / denom;
            x = if denom != 0.0 && accel.is_finite() { accel } else { x2 };
        }
        Err(Error::NoConvergence {
            iterations: ETA_MAX_ITERATIONS,
        })
    }
}

impl RankOne {
    /// Returns `None` when `ℋ_1` is not a single diagonal entry inside a
    /// decoupled block that contains the target.
    fn build(h0: &QuadraticHamiltonian, h1: &QuadraticHamiltonian, target: &CVector) -> Result<Option<Self>> {
        if h0.statistics() != Statistics::Bose || h0.has_pairing() || h1.has_pairing() {
            return Ok(None);
        }
        let n = h0.sites();
        let nonzero: Vec<(usize, usize)> = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .filter(|&(r, c)| h1.a()[(r, c)] != ZERO)
            .collect();
        let site = match nonzero.as_slice() {
            [(r, c)] if r == c => *r,
            _ => return Ok(None),
        };
        let upper = norm_sqr(&target.as_slice()[..n]);
        let lower = norm_sqr(&target.as_slice()[n..]);
        let m0 = bdg_dynamics_matrix(h0);
        let m1 = bdg_dynamics_matrix(h1);
        let offset = if lower == 0.0 {
            0
        } else if upper == 0.0 {
            n
        } else {
            return Ok(None);
        };
        let block = m0.view((offset, offset), (n, n)).into_owned();
        let rho = m1[(offset + site, offset + site)].re;
        let (values, vectors) = hermitian_eigh(&block)?;
        let t_block = &target.as_slice()[offset..offset + n];
        let (t_idx, t_ov) = (0..n)
            .map(|l| (l, dot(vectors.column(l).as_slice(), t_block).norm()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if t_ov < 1.0 - 1e-8 {
            return Ok(None);
        }
        let d_t = values[t_idx];
        let scale = values.iter().map(|v| v.abs()).fold(1.0, f64::max);
        let mut delta = Vec::new();
        let mut z = Vec::new();
        let mut basis = Vec::new();
        let mut target_pos = None;
        for l in 0..n {
            let zl = vectors[(site, l)].conj();
            if zl.norm() < 1e-14 {
                continue;
            }
            if l == t_idx {
                target_pos = Some(delta.len());
            }
            delta.push(values[l] - d_t);
            z.push(zl);
            basis.push(vectors.column(l).iter().copied().collect());
        }
        // coincident poles would need a rotation-based deflation
        let mut sorted = delta.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[1] - w[0] < 1e-9 * scale) {
            return Ok(None);
        }
        let size = n;
        let proj = vec![ZERO; delta.len()];
        Ok(Some(RankOne {
            offset,
            size,
            row: site,
            rho,
            delta,
            z,
            basis,
            target: target_pos,
            target_value: d_t,
            target_block: t_block.to_vec(),
            tau: 0.0,
            proj,
        }))
    }

    fn project(&mut self, q: &[C64]) {
        let block = &q[self.offset..self.offset + self.size];
        for (p, u) in self.proj.iter_mut().zip(&self.basis) {
            *p = dot(u, block);
        }
    }

    /// Root offset `τ = λ − d_T` of `1 + σ Σ|z_i|²/(δ_i − τ) = 0` on the target's branch.
    fn root(&mut self, sigma: f64) -> f64 {
        if self.target.is_none() || sigma == 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = if sigma < 0.0 {
            let below = self.delta.iter().copied().filter(|&d| d < 0.0).fold(f64::MIN, f64::max);
            (below.max(sigma), 0.0)
        } else {
            let above = self.delta.iter().copied().filter(|&d| d > 0.0).fold(f64::MAX, f64::min);
            (0.0, above.min(sigma))
        };
        let g = |tau: f64| -> (f64, f64) {
            let mut val = 1.0;
            let mut der = 0.0;
            for (d, z) in self.delta.iter().zip(&self.z) {
                let w = z.norm_sqr();
                let r = 1.0 / (d - tau);
                val += sigma * w * r;
                der += sigma * w * r * r;
            }
            (val, der)
        };
        // g is monotone between the poles: increasing for σ > 0, decreasing for σ < 0
        let increasing = sigma > 0.0;
        let mut tau = if self.tau > lo && self.tau < hi { self.tau } else { 0.5 * (lo + hi) };
        for _ in 0..200 {
            let (val, der) = g(tau);
            if val == 0.0 {
                break;
            }
            if (val > 0.0) == increasing {
                hi = tau;
            } else {
                lo = tau;
            }
            let newton = tau - val / der;
            let next = if newton > lo && newton < hi && der.is_finite() {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let done = (next - tau).abs() <= 4.0 * f64::EPSILON * tau.abs().max(f64::MIN_POSITIVE)
                || hi - lo <= 4.0 * f64::EPSILON * tau.abs().max(f64::MIN_POSITIVE);
            tau = next;
            if done {
                break;
            }
        }
        self.tau = tau;
        tau
    }

    /// Eigenbasis coefficients of the normalized tracked vector and its eigenvalue.
    fn coefficients(&self, eta: f64) -> (Vec<C64>, f64) {
        let mut copy = self.clone();
        let tau = copy.root(eta * self.rho);
        (copy.coeffs_at(tau), self.target_value + tau)
    }

    fn coeffs_at(&self, tau: f64) -> Vec<C64> {
        match self.target {
            None => return Vec::new(),
            Some(t) if tau == 0.0 => {
                let mut y = vec![ZERO; self.delta.len()];
                y[t] = C64::new(1.0, 0.0);
                return y;
            }
            Some(_) => {}
        }
        let mut y: Vec<C64> = self.delta.iter().zip(&self.z).map(|(d, z)| z / (d - tau)).collect();
        let nrm = norm_sqr(&y).sqrt();
        y.iter_mut().for_each(|c| *c /= nrm);
        y
    }

    fn vector(&self, y: &[C64], dim: usize) -> CVector {
        let mut w = CVector::zeros(dim);
        if self.target.is_none() {
            // the target does not feel the generator: W = U^T for every η
            for (k, t) in self.target_block.iter().enumerate() {
                w[self.offset + k] = *t;
            }
            return w;
        }
        for (c, u) in y.iter().zip(&self.basis) {
            for (k, uk) in u.iter().enumerate() {
                w[self.offset + k] += c * uk;
            }
        }
        w
    }

    /// `(W†Q, Q†ℋ_1W)` at parameter `η`, using the projections from [`RankOne::project`].
    fn overlaps(&mut self, eta: f64, q: &[C64]) -> (C64, C64) {
        let q_row = q[self.offset + self.row];
        if self.target.is_none() {
            let block = &q[self.offset..self.offset + self.size];
            let w_row = self.target_block[self.row];
            return (dot(&self.target_block, block), q_row.conj() * self.rho * w_row);
        }
        let tau = self.root(eta * self.rho);
        let y = self.coeffs_at(tau);
        let mut ov = ZERO;
        let mut w_row = ZERO;
        for ((c, p), z) in y.iter().zip(&self.proj).zip(&self.z) {
            ov += c.conj() * p;
            // u_i[row] = conj(z_i)
            w_row += c * z.conj();
        }
        (ov, q_row.conj() * self.rho * w_row)
    }
}

/// `q†x` for a sparse `x`.
#[inline]
fn sparse_dot(q: &[C64], x: &[(usize, C64)]) -> C64 {
    x.iter().fold(ZERO, |acc, (i, v)| acc + q[*i].conj() * v)
}

/// Per-trajectory evaluator of a [`ControlLaw`], with targets pre-multiplied by
/// the generators.
#[derive(Debug, Clone)]
pub(crate) struct LawEngine {
    law: ControlLaw,
    /// Nonzero entries of `ℋ_k·target_i`, indexed `[k][i]`.
    hk_targets: Vec<Vec<Vec<(usize, C64)>>>,
    targets: Vec<CVector>,
    weights: Vec<f64>,
    tracker: Option<EtaTracker>,
    dwell: Vec<(f64, f64)>,
    overlaps: Vec<C64>,
}

impl LawEngine {
    pub(crate) fn new(law: &ControlLaw, h0: &QuadraticHamiltonian, controls: &[QuadraticHamiltonian]) -> Result<Self> {
        let dim = 2 * h0.sites();
        law.validate(dim)?;
        if controls.len() != law.controls() {
            return Err(Error::InvalidLaw(format!(
                "law has {} gains but the system has {} controls",
                law.controls(),
                controls.len()
            )));
        }
        let mats: Vec<CMatrix> = controls.iter().map(bdg_dynamics_matrix).collect();
        let (targets, weights): (Vec<CVector>, Vec<f64>) = match &law.kind {
            LawKind::PMatrix { projectors } => projectors.iter().map(|(p, u)| (u.clone(), *p)).unzip(),
            LawKind::Overlap { target } | LawKind::Implicit { target, .. } => (vec![target.clone()], vec![1.0]),
            LawKind::DualTarget { keep, suppress } => (vec![keep.clone(), suppress.clone()], vec![1.0, -1.0]),
        };
        let hk_targets = mats
            .iter()
            .map(|m| {
                targets
                    .iter()
                    .map(|t| (m * t).iter().copied().enumerate().filter(|(_, z)| *z != ZERO).collect())
                    .collect()
            })
            .collect();
        let tracker = match &law.kind {
            LawKind::Implicit { target, theta_slope } => Some(EtaTracker::new(h0, &controls[0], target, *theta_slope)?),
            _ => None,
        };
        Ok(LawEngine {
            law: law.clone(),
            hk_targets,
            weights,
            tracker,
            dwell: vec![(f64::NEG_INFINITY, 0.0); controls.len()],
            overlaps: vec![ZERO; targets.len()],
            targets,
        })
    }

    pub(crate) fn eta(&self) -> Option<f64> {
        self.tracker.as_ref().map(|t| t.eta())
    }

    /// Fill `fields` for state `q` at time `t` and return the Lyapunov value.
    /// `commit` marks an accepted step start, where square-wave dwell state may change.
    pub(crate) fn evaluate(&mut self, q: &[C64], t: f64, fields: &mut [f64], commit: bool) -> Result<f64> {
        for (o, u) in self.overlaps.iter_mut().zip(&self.targets) {
            *o = dot(u.as_slice(), q);
        }
        let overlaps = &self.overlaps;
        let v = match &self.law.kind {
            LawKind::PMatrix { .. } => {
                for (k, f) in fields.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (i, p) in self.weights.iter().enumerate() {
                        acc += p * (sparse_dot(q, &self.hk_targets[k][i]) * overlaps[i]).im;
                    }
                    *f = -2.0 * self.law.gains[k] * acc;
                }
                self.weights.iter().zip(overlaps.iter()).map(|(p, o)| p * o.norm_sqr()).sum()
            }
            LawKind::Overlap { .. } | LawKind::DualTarget { .. } => {
                for (k, f) in fields.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (i, s) in self.weights.iter().enumerate() {
                        acc += s * (sparse_dot(q, &self.hk_targets[k][i]) * overlaps[i]).im;
                    }
                    *f = self.law.gains[k] * acc;
                }
                match self.law.kind {
                    LawKind::Overlap { .. } => 1.0 - overlaps[0].norm_sqr(),
                    _ => 2.0 - overlaps[0].norm_sqr() + overlaps[1].norm_sqr(),
                }
            }
            LawKind::Implicit { .. } => {
                let tracker = self.tracker.as_mut().expect("implicit law owns a tracker");
                let eta = tracker.solve(q)?;
                fields[0] = eta + self.law.gains[0] * tracker.feedback();
                tracker.lyapunov()
            }
        };
        if let Some(sw) = &self.law.square_wave {
            for (k, f) in fields.iter_mut().enumerate() {
                let want = square_wave_wrap(*f, sw.amplitudes[k]);
                if sw.min_dwell > 0.0 {
                    // signs change only at accepted step starts and are held through the step
                    let (since, held) = &mut self.dwell[k];
                    if commit && want != *held && (*held == 0.0 || t - *since >= sw.min_dwell) {
                        *since = t;
                        *held = want;
                    }
                    *f = *held;
                } else {
                    *f = want;
                }
            }
        }
        if self.law.field_scale != 1.0 {
            fields.iter_mut().for_each(|f| *f *= self.law.field_scale);
        }
        Ok(v)
    }
}
