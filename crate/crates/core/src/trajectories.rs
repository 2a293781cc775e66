//! Quantum-jump unravelling of the adiabatic master equation.
//!
//! Between jumps the unnormalized state follows `dψ̃/dt = −i H_eff ψ̃` with
//! `H_eff = H + H_LS − (i/2) Σ γ L†L`; a jump fires once `‖ψ̃‖²` falls
//! below a uniform threshold `r`. The state is integrated in the
//! computational basis; the non-Hermitian generator is rebuilt from the
//! instantaneous eigenframe at every evaluation.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ame::{feedback_operator, frames_along, pulse_unitary, uniform_grid, FeedbackKind, FeedbackSpec, PulseBasis};
use crate::error::{Error, Result};
use crate::linalg::{op_norm, CMat, CVec, C64, I};
use crate::ode::{Dopri5, Tolerances};
use crate::spectral::{Frame, LindbladSet, OpenSystem, SpectralFrame};
use crate::stats::{bootstrap_interval, mean, standard_error, stream_rng, BOOTSTRAP_STREAM};

/// `H_eff` in the eigenbasis of `frame`.
pub fn h_eff(frame: &Frame, lamb: bool) -> CMat {
    let d = frame.spectral.dim();
    let mut h = CMat::zeros(d, d);
    for (a, &e) in frame.spectral.energies.iter().enumerate() {
        h[(a, a)] = C64::new(e, 0.0);
    }
    if lamb {
        h += &frame.h_ls;
    }
    h - &frame.decay * (I * 0.5)
}

pub fn h_eff_computational(frame: &Frame, lamb: bool) -> CMat {
    frame.spectral.to_computational(&h_eff(frame, lamb))
}

/// Total jump rate `λ = Σ_i ‖A_i ψ‖²` and the per-operator parts for a
/// normalized eigenbasis state.
pub fn jump_rate(psi_e: &[C64], lindblads: &LindbladSet) -> (f64, Vec<f64>) {
    let mut scratch = vec![C64::new(0.0, 0.0); psi_e.len()];
    let dp: Vec<f64> = lindblads
        .ops
        .iter()
        .enumerate()
        .map(|(k, op)| lindblads.weight(k) * op.norm_sqr_on(psi_e, &mut scratch))
        .collect();
    (dp.iter().sum(), dp)
}

/// Non-jump part of the normalized stochastic equation with the global
/// phase removed: `−i(H' − ⟨H'⟩)ψ − ½(G − ⟨G⟩)ψ`, `H' = H + H_LS`.
pub fn drift(frame: &Frame, psi_e: &CVec, lamb: bool) -> CVec {
    let d = psi_e.len();
    let mut h = CMat::zeros(d, d);
    for (a, &e) in frame.spectral.energies.iter().enumerate() {
        h[(a, a)] = C64::new(e, 0.0);
    }
    if lamb {
        h += &frame.h_ls;
    }
    let hp = &h * psi_e;
    let gp = &frame.decay * psi_e;
    let eh = psi_e.dotc(&hp);
    let eg = psi_e.dotc(&gp);
    (hp - psi_e * eh) * (-I) - (gp - psi_e * eg) * C64::new(0.5, 0.0)
}

fn normalized(v: &CVec) -> CVec {
    v / C64::new(v.norm(), 0.0)
}

fn rate_of(frame: &Frame, psi: &CVec) -> f64 {
    let pe = frame.spectral.vectors.adjoint() * psi;
    jump_rate(pe.as_slice(), &frame.lindblads).0
}

/// Step-size ceiling `min(2‖H_eff‖/‖Ḣ_eff‖, 1/‖H_eff‖, |λ/(λ² − λ̇)|)` at
/// `t` for the normalized state `psi` (computational basis). Derivatives
/// are central differences with half-width `delta`; λ̇ follows the state
/// along the no-jump flow.
pub fn dt_bound(sys: &OpenSystem, t: f64, psi: &CVec, delta: f64) -> Result<f64> {
    let total = sys.model.duration();
    let lamb = sys.options.lamb_shift;
    let ta = (t - delta).max(0.0);
    let tb = (t + delta).min(total);
    let fm = sys.frame(t, None)?;
    let fa = sys.frame(ta, None)?;
    let fb = sys.frame(tb, None)?;
    let hm = h_eff_computational(&fm, lamb);
    let hn = op_norm(&hm);
    let mut bound = f64::INFINITY;
    if tb > ta {
        let dh = op_norm(&(h_eff_computational(&fb, lamb) - h_eff_computational(&fa, lamb))) / (tb - ta);
        if dh > 0.0 {
            bound = bound.min(2.0 * hn / dh);
        }
    }
    if hn > 0.0 {
        bound = bound.min(1.0 / hn);
    }
    let lam = rate_of(&fm, psi);
    if lam > 0.0 && tb > ta {
        let hpsi = &hm * psi;
        let pa = normalized(&(psi + &hpsi * (I * (t - ta))));
        let pb = normalized(&(psi - &hpsi * (I * (tb - t))));
        let ldot = (rate_of(&fb, &pb) - rate_of(&fa, &pa)) / (tb - ta);
        let denom = lam * lam - ldot;
        if denom != 0.0 {
            bound = bound.min((lam / denom).abs());
        }
    }
    Ok(bound)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryConfig {
    pub tol: Tolerances,
    pub output_points: usize,
    /// Instantaneous levels whose populations are recorded.
    pub levels: usize,
    /// Computational basis states counted as success.
    pub targets: Vec<usize>,
    /// Keep normalized states on the grid (needed for the mean density matrix).
    pub keep_states: bool,
    /// Jump time located to this fraction of the enclosing step.
    pub bisection_rtol: f64,
    /// Half-width of the finite differences in [`dt_bound`] (ns).
    pub fd_delta: f64,
    pub enforce_bound: bool,
    /// Record `(t_mid, h, bound, ‖ψ̃‖² change)` for every accepted step.
    pub audit: bool,
    pub bootstrap: usize,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            output_points: 101,
            levels: 2,
            targets: Vec::new(),
            keep_states: false,
            bisection_rtol: 1e-4,
            fd_delta: 1e-4,
            enforce_bound: true,
            audit: false,
            bootstrap: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PendingOp {
    /// Fixed operator in the computational basis.
    Matrix(CMat),
    /// Pulse evaluated at the moment it is applied.
    Pulse(PulseBasis),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pending {
    pub due: f64,
    pub op: PendingOp,
}

#[derive(Debug, Clone)]
pub struct TrajectoryState {
    /// Unnormalized state in the computational basis.
    pub psi: CVec,
    pub t: f64,
    pub rng: ChaCha8Rng,
    /// Corrections ordered by due time (ties keep enqueue order).
    pub queue: VecDeque<Pending>,
}

impl TrajectoryState {
    pub fn new(psi: CVec, t: f64, rng: ChaCha8Rng) -> Self {
        Self { psi: normalized(&psi), t, rng, queue: VecDeque::new() }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.psi.norm_squared()
    }

    pub fn enqueue(&mut self, p: Pending) {
        let at = self.queue.iter().position(|q| q.due > p.due).unwrap_or(self.queue.len());
        self.queue.insert(at, p);
    }

    /// Uniform threshold in (0, 1].
    pub fn draw_threshold(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub t: f64,
    /// Index into the Lindblad set active at `t`.
    pub op: usize,
    /// Bath channel of that operator.
    pub channel: usize,
    pub omega: f64,
    /// Most populated instantaneous level before and after.
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepAudit {
    pub t_mid: f64,
    pub h: f64,
    pub bound: f64,
    /// `‖ψ̃‖²` at the end minus at the start of the step.
    pub norm_change: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Jump(f64),
    Reached,
}

/// Integrates the no-jump equation from `st` until `‖ψ̃‖² ≤ r` or `t_max`.
/// `on_step(dp, t_end)` is called after each accepted step with the end of
/// the interval that is actually kept (the jump time on the last step).
pub fn evolve_until_jump(
    sys: &OpenSystem,
    st: &mut TrajectoryState,
    r: f64,
    t_max: f64,
    cfg: &TrajectoryConfig,
    audit: &mut Vec<StepAudit>,
    on_step: &mut dyn FnMut(&Dopri5, f64),
) -> Result<Outcome> {
    let d = st.psi.len();
    let lamb = sys.options.lamb_shift;
    let eps = 1e-12 * t_max.abs().max(1.0);
    if st.t >= t_max - eps {
        return Ok(Outcome::Reached);
    }
    let mut cache: Option<Frame> = None;
    let mut rhs = |t: f64, y: &[C64], dy: &mut [C64]| -> Result<()> {
        let f = sys.frame_cached(t, &mut cache)?;
        let v = &f.spectral.vectors;
        let ye = v.ad_mul(&CVec::from_column_slice(y));
        let mut oe = -(&f.decay * &ye) * C64::new(0.5, 0.0);
        if lamb {
            oe -= (&f.h_ls * &ye) * I;
        }
        for a in 0..d {
            oe[a] -= I * f.spectral.energies[a] * ye[a];
        }
        dy.copy_from_slice((v * oe).as_slice());
        Ok(())
    };
    let mut dp = Dopri5::new(&mut rhs, st.t, st.psi.as_slice().to_vec(), cfg.tol)?;
    let mut buf = vec![C64::new(0.0, 0.0); d];
    let norm = |y: &[C64]| y.iter().map(|z| z.norm_sqr()).sum::<f64>();
    while dp.t < t_max - eps {
        let remaining = t_max - dp.t;
        let mut h = dp.h.min(remaining);
        if remaining - h < eps {
            h = remaining;
        }
        let mut bound = f64::INFINITY;
        if cfg.enforce_bound {
            let psi = normalized(&CVec::from_column_slice(&dp.y));
            for _ in 0..8 {
                bound = dt_bound(sys, dp.t + 0.5 * h, &psi, cfg.fd_delta)?;
                if h <= bound {
                    break;
                }
                h = 0.9 * bound;
            }
            h = h.min(bound);
        }
        let n0 = norm(&dp.y);
        if !dp.try_step(&mut rhs, h)? {
            continue;
        }
        let n1 = norm(&dp.y);
        if cfg.audit {
            audit.push(StepAudit { t_mid: dp.t_prev + 0.5 * h, h, bound, norm_change: n1 - n0 });
        }
        if n1 <= r {
            let (mut lo, mut hi) = (dp.t_prev, dp.t);
            let width = cfg.bisection_rtol * (hi - lo);
            while hi - lo > width {
                let mid = 0.5 * (lo + hi);
                dp.dense(mid, &mut buf);
                if norm(&buf) <= r {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            dp.dense(hi, &mut buf);
            on_step(&dp, hi);
            st.psi = CVec::from_column_slice(&buf);
            st.t = hi;
            return Ok(Outcome::Jump(hi));
        }
        on_step(&dp, dp.t);
    }
    st.psi = CVec::from_column_slice(&dp.y);
    st.t = dp.t;
    Ok(Outcome::Reached)
}

/// Chooses operator `i` with probability `dp_i/λ` and replaces the
/// eigenbasis state by `A_i ψ/‖A_i ψ‖`. Returns the chosen index.
pub fn select_and_apply_jump<R: Rng>(psi_e: &mut CVec, lindblads: &LindbladSet, rng: &mut R) -> Result<usize> {
    let n = psi_e.norm();
    if n == 0.0 {
        return Err(Error::Logic("jump on a zero state".into()));
    }
    let unit = &*psi_e / C64::new(n, 0.0);
    let (lam, dp) = jump_rate(unit.as_slice(), lindblads);
    if !(lam > 0.0) {
        return Err(Error::Logic("jump fired with every channel weight zero".into()));
    }
    let u = rng.random::<f64>() * lam;
    let mut acc = 0.0;
    let mut pick = dp.iter().rposition(|&w| w > 0.0).unwrap();
    for (k, &w) in dp.iter().enumerate() {
        acc += w;
        if u < acc && w > 0.0 {
            pick = k;
            break;
        }
    }
    let mut out = vec![C64::new(0.0, 0.0); psi_e.len()];
    lindblads.ops[pick].apply(unit.as_slice(), &mut out);
    let post = CVec::from_vec(out);
    *psi_e = normalized(&post);
    Ok(pick)
}

fn dominant_level(psi_e: &CVec) -> usize {
    psi_e
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
        .map_or(0, |(k, _)| k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub index: u64,
    pub times: Vec<f64>,
    /// Populations of the lowest `levels` instantaneous levels, per time.
    pub populations: Vec<Vec<f64>>,
    pub success: Vec<f64>,
    pub states: Option<Vec<CVec>>,
    pub jumps: Vec<JumpEvent>,
    pub feedback_applied: usize,
    pub audit: Vec<StepAudit>,
}

impl TrajectoryRecord {
    pub fn ground(&self) -> Vec<f64> {
        self.populations.iter().map(|p| p[0]).collect()
    }
}

fn apply_pending(sys: &OpenSystem, st: &mut TrajectoryState, p: &Pending) -> Result<bool> {
    let u = match &p.op {
        PendingOp::Matrix(m) => m.clone(),
        PendingOp::Pulse(b) => {
            let f = sys.frame(st.t, None)?;
            f.spectral.to_computational(&pulse_unitary(sys, &f.spectral, *b))
        }
    };
    let out = u * &st.psi;
    let n = out.norm();
    if n < 1e-12 * st.psi.norm() {
        // The correction annihilates the current state; leave it untouched.
        return Ok(false);
    }
    st.psi = out / C64::new(n, 0.0);
    Ok(true)
}

/// One trajectory of the unravelling. `frames` are the eigenframes on the
/// output grid (see [`frames_along`]).
pub fn run_trajectory(
    sys: &OpenSystem,
    psi0: &CVec,
    master: u64,
    index: u64,
    cfg: &TrajectoryConfig,
    fb: Option<&FeedbackSpec>,
    frames: &[SpectralFrame],
) -> Result<TrajectoryRecord> {
    if let Some(f) = fb {
        f.validate()?;
    }
    let total = sys.model.duration();
    let times = uniform_grid(0.0, total, cfg.output_points);
    if frames.len() != times.len() {
        return Err(Error::Invalid(format!("expected {} grid frames, got {}", times.len(), frames.len())));
    }
    let levels = cfg.levels.min(sys.dim()).max(1);
    let mut rec = TrajectoryRecord {
        index,
        times: times.clone(),
        populations: Vec::with_capacity(times.len()),
        success: Vec::with_capacity(times.len()),
        states: cfg.keep_states.then(Vec::new),
        jumps: Vec::new(),
        feedback_applied: 0,
        audit: Vec::new(),
    };
    let eps = 1e-12 * total.max(1.0);
    let mut gi = 0usize;
    let sample = |rec: &mut TrajectoryRecord, gi: usize, y: &[C64]| {
        let psi = normalized(&CVec::from_column_slice(y));
        let pe = frames[gi].vectors.ad_mul(&psi);
        rec.populations.push((0..levels).map(|a| pe[a].norm_sqr()).collect());
        rec.success.push(cfg.targets.iter().map(|&i| psi[i].norm_sqr()).sum());
        if let Some(s) = rec.states.as_mut() {
            s.push(psi);
        }
    };
    let mut st = TrajectoryState::new(psi0.clone(), 0.0, stream_rng(master, index));
    while gi < times.len() && times[gi] <= eps {
        sample(&mut rec, gi, st.psi.as_slice());
        gi += 1;
    }
    let mut r = st.draw_threshold();
    let mut audit = Vec::new();
    while st.t < total - eps {
        let t_stop = st.queue.front().map_or(total, |p| p.due.min(total));
        let outcome = {
            let rec = &mut rec;
            let gi = &mut gi;
            let mut on_step = |dp: &Dopri5, t_end: f64| {
                let mut buf = vec![C64::new(0.0, 0.0); dp.y.len()];
                while *gi < times.len() && times[*gi] <= t_end + eps {
                    dp.dense(times[*gi], &mut buf);
                    sample(rec, *gi, &buf);
                    *gi += 1;
                }
            };
            evolve_until_jump(sys, &mut st, r, t_stop, cfg, &mut audit, &mut on_step)?
        };
        if let Outcome::Jump(tj) = outcome {
            let frame = sys.frame(tj, None)?;
            let v = &frame.spectral.vectors;
            let mut pe = normalized(&v.ad_mul(&st.psi));
            let from = dominant_level(&pe);
            let k = select_and_apply_jump(&mut pe, &frame.lindblads, &mut st.rng)?;
            let op = &frame.lindblads.ops[k];
            rec.jumps.push(JumpEvent { t: tj, op: k, channel: op.channel, omega: op.omega, from, to: dominant_level(&pe) });
            st.psi = v * &pe;
            if let Some(f) = fb {
                if op.omega < -sys.options.omega_tol {
                    let pending = match f.kind {
                        FeedbackKind::LindbladCooling => {
                            PendingOp::Matrix(frame.spectral.to_computational(&feedback_operator(sys, &frame, k, f.kind)))
                        }
                        FeedbackKind::HamiltonianPulse(b) => PendingOp::Pulse(b),
                    };
                    st.enqueue(Pending { due: tj + f.delay, op: pending });
                }
            }
            r = st.draw_threshold();
        }
        while st.queue.front().is_some_and(|p| p.due <= st.t + eps) {
            let p = st.queue.pop_front().unwrap();
            st.psi = normalized(&st.psi);
            if apply_pending(sys, &mut st, &p)? {
                rec.feedback_applied += 1;
            }
            r = st.draw_threshold();
        }
    }
    while gi < times.len() {
        sample(&mut rec, gi, st.psi.as_slice());
        gi += 1;
    }
    rec.audit = audit;
    Ok(rec)
}

/// Mean, standard error and bootstrap interval of one observable per time.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub mean: Vec<f64>,
    pub se: Vec<Option<f64>>,
    pub interval: Vec<Option<(f64, f64)>>,
    /// `samples[t][k]`: value of trajectory `k` at time `t`.
    pub samples: Vec<Vec<f64>>,
}

impl Series {
    fn from_samples(samples: Vec<Vec<f64>>, resamples: usize, rng: &mut ChaCha8Rng) -> Self {
        let mean = samples.iter().map(|s| mean(s)).collect();
        let se = samples.iter().map(|s| standard_error(s)).collect();
        let interval = samples.iter().map(|s| bootstrap_interval(s, resamples, rng)).collect();
        Self { mean, se, interval, samples }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStatistics {
    pub times: Vec<f64>,
    pub trajectories: usize,
    pub ground: Series,
    pub success: Series,
    /// Mean population of each recorded level per time.
    pub populations: Vec<Vec<f64>>,
    /// Trajectory-averaged density matrix per time (with `keep_states`).
    pub mean_state: Option<Vec<CMat>>,
    /// Relaxations minus excitations per output interval, summed over trajectories.
    pub net_jumps: Vec<i64>,
    pub relaxations: usize,
    pub excitations: usize,
    pub dephasing: usize,
    pub feedback_applied: usize,
}

const CHUNK: usize = 256;

/// Runs `k` trajectories on `workers` threads. Trajectory `i` draws from
/// stream `i` of `master`, so the result does not depend on `workers`.
pub fn ensemble(
    sys: &OpenSystem,
    psi0: &CVec,
    k: usize,
    master: u64,
    workers: usize,
    cfg: &TrajectoryConfig,
    fb: Option<&FeedbackSpec>,
) -> Result<EnsembleStatistics> {
    if k == 0 {
        return Err(Error::Invalid("ensemble needs at least one trajectory".into()));
    }
    let times = uniform_grid(0.0, sys.model.duration(), cfg.output_points);
    let frames = frames_along(sys, &times)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let nt = times.len();
    let d = sys.dim();
    let levels = cfg.levels.min(d).max(1);
    let tol = sys.options.omega_tol;
    let mut ground = vec![Vec::with_capacity(k); nt];
    let mut success = vec![Vec::with_capacity(k); nt];
    let mut pops = vec![vec![0.0; levels]; nt];
    let mut mean_state = cfg.keep_states.then(|| vec![CMat::zeros(d, d); nt]);
    let mut net = vec![0i64; nt.saturating_sub(1).max(1)];
    let (mut relax, mut excite, mut dephase, mut applied) = (0, 0, 0, 0);
    let mut failed = Vec::new();
    let mut first = None;
    let dt = if nt > 1 { times[1] - times[0] } else { f64::INFINITY };
    for start in (0..k).step_by(CHUNK) {
        let end = (start + CHUNK).min(k);
        let batch: Vec<Result<TrajectoryRecord>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|i| run_trajectory(sys, psi0, master, i as u64, cfg, fb, &frames))
                .collect()
        });
        for (i, res) in (start..end).zip(batch) {
            let rec = match res {
                Ok(r) => r,
                Err(e) => {
                    failed.push(i as u64);
                    first.get_or_insert_with(|| e.to_string());
                    continue;
                }
            };
            for t in 0..nt {
                ground[t].push(rec.populations[t][0]);
                success[t].push(rec.success[t]);
                for (a, p) in rec.populations[t].iter().enumerate() {
                    pops[t][a] += p;
                }
            }
            if let (Some(acc), Some(states)) = (mean_state.as_mut(), rec.states.as_ref()) {
                for (m, psi) in acc.iter_mut().zip(states) {
                    *m += psi * psi.adjoint();
                }
            }
            for j in &rec.jumps {
                let bin = ((j.t / dt) as usize).min(net.len() - 1);
                if j.omega > tol {
                    relax += 1;
                    net[bin] += 1;
                } else if j.omega < -tol {
                    excite += 1;
                    net[bin] -= 1;
                } else {
                    dephase += 1;
                }
            }
            applied += rec.feedback_applied;
        }
    }
    if !failed.is_empty() {
        return Err(Error::Ensemble { failed, first: first.unwrap_or_default() });
    }
    let kf = k as f64;
    for row in pops.iter_mut() {
        row.iter_mut().for_each(|p| *p /= kf);
    }
    if let Some(acc) = mean_state.as_mut() {
        acc.iter_mut().for_each(|m| *m /= C64::new(kf, 0.0));
    }
    let mut rng = stream_rng(master, BOOTSTRAP_STREAM);
    Ok(EnsembleStatistics {
        times,
        trajectories: k,
        ground: Series::from_samples(ground, cfg.bootstrap, &mut rng),
        success: Series::from_samples(success, cfg.bootstrap, &mut rng),
        populations: pops,
        mean_state,
        net_jumps: net,
        relaxations: relax,
        excitations: excite,
        dephasing: dephase,
        feedback_applied: applied,
    })
}
