//! Direct propagation of the adiabatic master equation
//!
//! `dρ/dt = −i[H + H_LS, ρ] + Σ γ(ω)(L ρ L† − ½{L†L, ρ})`
//!
//! with Lindblad operators rebuilt in the instantaneous eigenbasis at every
//! right-hand-side evaluation. The integrator carries ρ in the computational
//! basis; each evaluation rotates it into the current eigenbasis, applies the
//! generator there (where the jump operators are sparse) and rotates back.

use crate::error::{Error, Result};
use crate::linalg::{eigh, expm_hermitian, min_eigenvalue, op_norm, trace, CMat, CVec, C64, I};
use crate::model::Axis;
use crate::ode::{Dopri5, Tolerances};
use crate::spectral::{decompose, Frame, OpenSystem, SpectralFrame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    Computational,
    /// Instantaneous eigenbasis of the frame at the given time.
    Eigen(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    pub rho: CMat,
    pub basis: Basis,
    pub t: f64,
}

impl DensityState {
    pub fn computational(rho: CMat, t: f64) -> Self {
        Self { rho, basis: Basis::Computational, t }
    }

    pub fn pure(psi: &CVec, t: f64) -> Self {
        Self::computational(psi * psi.adjoint(), t)
    }

    pub fn in_computational(&self, frame: &SpectralFrame) -> CMat {
        match self.basis {
            Basis::Computational => self.rho.clone(),
            Basis::Eigen(_) => frame.to_computational(&self.rho),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Pure(CVec),
    Mixed(CMat),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseBasis {
    /// σ^x between the two lowest instantaneous levels.
    Energy,
    /// π/2 rotation generated by Σσ^x in the computational basis.
    SigmaX,
    /// π/2 rotation generated by Σσ^z in the computational basis.
    SigmaZ,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeedbackKind {
    /// Apply `A†_{−ω}` of the detected excitation (a cooling channel).
    LindbladCooling,
    /// Apply the unitary `exp(−i(π/2)X)` for the chosen generator `X`.
    HamiltonianPulse(PulseBasis),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackSpec {
    pub kind: FeedbackKind,
    /// Delay τ_d between detection and correction (ns).
    pub delay: f64,
}

impl FeedbackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            return Err(Error::Invalid(format!("feedback delay must be >= 0, got {}", self.delay)));
        }
        Ok(())
    }
}

/// Pulse unitary in the eigenbasis of `frame`.
pub fn pulse_unitary(sys: &OpenSystem, frame: &SpectralFrame, basis: PulseBasis) -> CMat {
    let d = frame.dim();
    let half_pi = std::f64::consts::FRAC_PI_2;
    match basis {
        PulseBasis::Energy => {
            let mut u = CMat::identity(d, d);
            if d >= 2 {
                u[(0, 0)] = C64::new(0.0, 0.0);
                u[(1, 1)] = C64::new(0.0, 0.0);
                u[(0, 1)] = -I;
                u[(1, 0)] = -I;
            }
            u
        }
        PulseBasis::SigmaX | PulseBasis::SigmaZ => {
            let axis = if basis == PulseBasis::SigmaX { Axis::X } else { Axis::Z };
            let gen = sys.model.terms.collective(axis);
            frame.to_eigenbasis(&expm_hermitian(&gen, half_pi))
        }
    }
}

/// Correction applied after a jump through op `k`, in the eigenbasis.
/// Lindblad cooling uses `L†/‖L‖`, which keeps the map trace preserving
/// for rank-one excitations.
pub fn feedback_operator(sys: &OpenSystem, frame: &Frame, k: usize, kind: FeedbackKind) -> CMat {
    match kind {
        FeedbackKind::LindbladCooling => {
            let l = frame.lindblads.ops[k].dense(frame.lindblads.dim);
            let norm = op_norm(&l);
            if norm > 0.0 {
                l.adjoint() / C64::new(norm, 0.0)
            } else {
                CMat::identity(frame.lindblads.dim, frame.lindblads.dim)
            }
        }
        FeedbackKind::HamiltonianPulse(b) => pulse_unitary(sys, &frame.spectral, b),
    }
}

/// Generator applied to an eigenbasis density matrix. `post[k]`, when set,
/// conjugates the jump term of op `k`.
pub fn generator_eigen(rho: &CMat, frame: &Frame, lamb: bool, post: Option<&[Option<CMat>]>) -> CMat {
    let d = rho.nrows();
    let e = &frame.spectral.energies;
    let mut out = CMat::zeros(d, d);
    for b in 0..d {
        for a in 0..d {
            out[(a, b)] = -I * (e[a] - e[b]) * rho[(a, b)];
        }
    }
    if lamb {
        let h = &frame.h_ls;
        out -= (h * rho - rho * h) * I;
    }
    let g = &frame.decay;
    out -= (g * rho + rho * g) * C64::new(0.5, 0.0);
    for (k, op) in frame.lindblads.ops.iter().enumerate() {
        let w = frame.lindblads.weight(k);
        if w == 0.0 {
            continue;
        }
        match post.and_then(|p| p[k].as_ref()) {
            None => {
                for &(a, b, v) in &op.entries {
                    for &(a2, b2, v2) in &op.entries {
                        out[(a, a2)] += v * rho[(b, b2)] * v2.conj() * w;
                    }
                }
            }
            Some(f) => {
                let mut m = CMat::zeros(d, d);
                for &(a, b, v) in &op.entries {
                    for &(a2, b2, v2) in &op.entries {
                        m[(a, a2)] += v * rho[(b, b2)] * v2.conj() * w;
                    }
                }
                out += f * m * f.adjoint();
            }
        }
    }
    out
}

/// `dρ/dt` in the computational basis.
pub fn ame_rhs(rho: &CMat, frame: &Frame, lamb: bool) -> CMat {
    let v = &frame.spectral.vectors;
    let rho_e = v.adjoint() * rho * v;
    v * generator_eigen(&rho_e, frame, lamb, None) * v.adjoint()
}

/// Per-op corrections for the Markovian feedback equation: only excitation
/// channels (ω < −ω_tol) are conjugated.
pub fn feedback_maps(sys: &OpenSystem, frame: &Frame, kind: FeedbackKind) -> Vec<Option<CMat>> {
    let tol = sys.options.omega_tol;
    let shared = match kind {
        FeedbackKind::HamiltonianPulse(b) => Some(pulse_unitary(sys, &frame.spectral, b)),
        FeedbackKind::LindbladCooling => None,
    };
    frame
        .lindblads
        .ops
        .iter()
        .enumerate()
        .map(|(k, op)| {
            (op.omega < -tol).then(|| shared.clone().unwrap_or_else(|| feedback_operator(sys, frame, k, kind)))
        })
        .collect()
}

/// Feedback master equation (zero delay) in the computational basis.
pub fn feedback_rhs(rho: &CMat, frame: &Frame, sys: &OpenSystem, fb: &FeedbackSpec) -> Result<CMat> {
    if fb.delay != 0.0 {
        return Err(Error::Unsupported(
            "the feedback master equation is Markovian; delayed feedback needs the trajectory engine".into(),
        ));
    }
    let maps = feedback_maps(sys, frame, fb.kind);
    let v = &frame.spectral.vectors;
    let rho_e = v.adjoint() * rho * v;
    Ok(v * generator_eigen(&rho_e, frame, sys.options.lamb_shift, Some(&maps)) * v.adjoint())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmeConfig {
    pub tol: Tolerances,
    /// Points of the uniform output grid, endpoints included.
    pub output_points: usize,
    /// Runs abort when ρ develops an eigenvalue below this.
    pub positivity_floor: f64,
}

impl Default for AmeConfig {
    fn default() -> Self {
        Self { tol: Tolerances::default(), output_points: 101, positivity_floor: -1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct AmeRun {
    pub states: Vec<DensityState>,
    /// Largest |Tr ρ − 1| seen on the output grid (not corrected).
    pub max_trace_drift: f64,
    pub min_eigenvalue: f64,
    pub steps: usize,
}

/// Failed propagation with the last state that passed every check.
#[derive(Debug, Clone)]
pub struct PropagationError {
    pub error: Error,
    pub last_good: Option<DensityState>,
}

impl std::fmt::Display for PropagationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for PropagationError {}

impl From<PropagationError> for Error {
    fn from(p: PropagationError) -> Self {
        p.error
    }
}

pub fn uniform_grid(t0: f64, t1: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![t1];
    }
    (0..points).map(|k| t0 + (t1 - t0) * k as f64 / (points - 1) as f64).collect()
}

fn flatten(m: &CMat) -> Vec<C64> {
    m.as_slice().to_vec()
}

/// Adaptive propagation of ρ over `[t0, t1]`, sampled on a uniform grid.
pub fn propagate(
    sys: &OpenSystem,
    rho0: &CMat,
    t0: f64,
    t1: f64,
    cfg: &AmeConfig,
    feedback: Option<&FeedbackSpec>,
) -> std::result::Result<AmeRun, PropagationError> {
    let fail = |error: Error, last: Option<DensityState>| PropagationError { error, last_good: last };
    if !(t1 > t0) {
        return Err(fail(Error::Invalid(format!("propagation needs t1 > t0 (got {t0}, {t1})")), None));
    }
    if let Some(fb) = feedback {
        fb.validate().map_err(|e| fail(e, None))?;
        if fb.delay != 0.0 {
            return Err(fail(
                Error::Unsupported("delayed feedback is only available in the trajectory engine".into()),
                None,
            ));
        }
    }
    let d = rho0.nrows();
    let lamb = sys.options.lamb_shift;
    let mut cache: Option<Frame> = None;
    let mut rhs = |t: f64, y: &[C64], dy: &mut [C64]| -> Result<()> {
        let frame = sys.frame_cached(t, &mut cache)?;
        let rho = CMat::from_column_slice(d, d, y);
        let out = match feedback {
            Some(fb) => feedback_rhs(&rho, frame, sys, fb)?,
            None => ame_rhs(&rho, frame, lamb),
        };
        dy.copy_from_slice(out.as_slice());
        Ok(())
    };
    let grid = uniform_grid(t0, t1, cfg.output_points);
    let mut st = Dopri5::new(&mut rhs, t0, flatten(rho0), cfg.tol).map_err(|e| fail(e, None))?;
    let mut run = AmeRun { states: Vec::with_capacity(grid.len()), max_trace_drift: 0.0, min_eigenvalue: f64::INFINITY, steps: 0 };
    let record = |run: &mut AmeRun, t: f64, data: &[C64]| -> Result<()> {
        let rho = CMat::from_column_slice(d, d, data);
        let m = min_eigenvalue(&rho);
        if m < cfg.positivity_floor {
            return Err(Error::Positivity { t, min_eig: m });
        }
        run.min_eigenvalue = run.min_eigenvalue.min(m);
        run.max_trace_drift = run.max_trace_drift.max((trace(&rho) - C64::new(1.0, 0.0)).norm());
        run.states.push(DensityState::computational(rho, t));
        Ok(())
    };
    let eps = 1e-12 * t1.abs().max(1.0);
    let mut gi = 0;
    let mut buf = vec![C64::new(0.0, 0.0); d * d];
    while gi < grid.len() && grid[gi] <= t0 + eps {
        let y0 = st.y.clone();
        record(&mut run, grid[gi], &y0).map_err(|e| fail(e, None))?;
        gi += 1;
    }
    while gi < grid.len() {
        let remaining = t1 - st.t;
        let mut h = st.h.min(remaining);
        if remaining - h < eps {
            h = remaining;
        }
        let accepted = st.try_step(&mut rhs, h).map_err(|e| fail(e, run.states.last().cloned()))?;
        if !accepted {
            continue;
        }
        run.steps += 1;
        while gi < grid.len() && grid[gi] <= st.t + eps {
            if grid[gi] >= st.t {
                buf.copy_from_slice(&st.y);
            } else {
                st.dense(grid[gi], &mut buf);
            }
            record(&mut run, grid[gi], &buf).map_err(|e| fail(e, run.states.last().cloned()))?;
            gi += 1;
        }
    }
    Ok(run)
}

/// Gibbs state `e^{−βH}/Z`, evaluated with the ground energy subtracted.
pub fn gibbs(h: &CMat, beta: f64) -> Result<DensityState> {
    if !(beta > 0.0) {
        return Err(Error::Invalid(format!("β must be positive, got {beta}")));
    }
    let (e, v) = eigh(h);
    let e0 = e[0];
    let w: Vec<f64> = e.iter().map(|&x| (-beta * (x - e0)).exp()).collect();
    let z: f64 = w.iter().sum();
    let d = e.len();
    let mut p = CMat::zeros(d, d);
    for (k, wk) in w.iter().enumerate() {
        p[(k, k)] = C64::new(wk / z, 0.0);
    }
    Ok(DensityState::computational(&v * p * v.adjoint(), 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observables {
    /// Populations of the instantaneous levels (ascending energy).
    pub populations: Vec<f64>,
    /// Diagonal in the computational basis.
    pub computational: Vec<f64>,
    /// Summed computational population of the target states.
    pub success: f64,
    /// Population outside the kept levels when truncating.
    pub leakage: f64,
}

impl Observables {
    pub fn ground(&self) -> f64 {
        self.populations[0]
    }
}

pub fn observables(state: &QuantumState, frame: &SpectralFrame, targets: &[usize]) -> Observables {
    let v = &frame.vectors;
    let (populations, computational): (Vec<f64>, Vec<f64>) = match state {
        QuantumState::Pure(psi) => {
            let pe = v.adjoint() * psi;
            (pe.iter().map(|z| z.norm_sqr()).collect(), psi.iter().map(|z| z.norm_sqr()).collect())
        }
        QuantumState::Mixed(rho) => {
            let d = rho.nrows();
            let re = v.adjoint() * rho * v;
            ((0..d).map(|a| re[(a, a)].re).collect(), (0..d).map(|a| rho[(a, a)].re).collect())
        }
    };
    let success = targets.iter().map(|&i| computational[i]).sum();
    let leakage = populations[frame.kept()..].iter().sum();
    Observables { populations, computational, success, leakage }
}

/// Eigenframes along a run's output grid with phase continuity.
pub fn frames_along(sys: &OpenSystem, times: &[f64]) -> Result<Vec<SpectralFrame>> {
    let mut out: Vec<SpectralFrame> = Vec::with_capacity(times.len());
    for &t in times {
        let h = sys.model.hamiltonian(t)?;
        let mut f = decompose(&h, out.last())?;
        f.t = t;
        f.n_keep = sys.options.n_keep;
        out.push(f);
    }
    Ok(out)
}

/// Superoperator matrix of the generator at time `t` (column-stacked ρ).
pub fn liouvillian(sys: &OpenSystem, t: f64) -> Result<CMat> {
    let frame = sys.frame(t, None)?;
    let d = sys.dim();
    let mut l = CMat::zeros(d * d, d * d);
    for j in 0..d {
        for i in 0..d {
            let mut e = CMat::zeros(d, d);
            e[(i, j)] = C64::new(1.0, 0.0);
            let out = ame_rhs(&e, &frame, sys.options.lamb_shift);
            l.set_column(j * d + i, &CVec::from_column_slice(out.as_slice()));
        }
    }
    Ok(l)
}

/// Slowest relaxation time 1/min|Re λ| over the non-stationary generator eigenvalues.
pub fn slowest_relaxation_time(sys: &OpenSystem, t: f64) -> Result<f64> {
    let l = liouvillian(sys, t)?;
    let evs = l
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::Numerical("generator eigenvalues unavailable".into()))?;
    let mut rates: Vec<f64> = evs.iter().map(|z| -z.re).collect();
    rates.sort_by(f64::total_cmp);
    let scale = rates.last().copied().unwrap_or(1.0).abs().max(1e-300);
    let slowest = rates
        .into_iter()
        .find(|&r| r > 1e-9 * scale)
        .ok_or_else(|| Error::Numerical("generator has no decaying mode".into()))?;
    Ok(1.0 / slowest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{basis_state, diag, sigma_x, sigma_z, trace_distance};
    use crate::model::{
        AnnealModel, IsingProblem, PSpinProblem, Protocol, Representation, Schedule, SystemTerms, Topology,
    };
    use crate::spectral::{BathSpec, SpectralOptions};
    use rand::{Rng, SeedableRng};

    fn chain(n: usize, protocol: Protocol, coupling: f64) -> OpenSystem {
        let terms = SystemTerms::ising(&IsingProblem::chain(n, 0.25, -1.0), 10).unwrap();
        let model = AnnealModel::new(terms, Schedule::linear(5.0, 5.0).unwrap(), protocol).unwrap();
        OpenSystem::new(model, BathSpec::ohmic(coupling, 1e3, 1.57), SpectralOptions::default()).unwrap()
    }

    fn random_density(d: usize, seed: u64) -> CMat {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = CMat::from_fn(d, d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let p = &a * a.adjoint();
        let tr = trace(&p);
        p / tr
    }

    #[test]
    fn closed_limit_is_von_neumann() {
        let sys = chain(2, Protocol::forward(10.0), 1e-30);
        let fr = sys.frame(4.0, None).unwrap();
        let rho = random_density(4, 1);
        let h = sys.model.hamiltonian(4.0).unwrap();
        let want = (&h * &rho - &rho * &h) * (-I);
        let got = ame_rhs(&rho, &fr, false);
        assert!((got - want).camax() < 1e-10);
    }

    #[test]
    fn rhs_is_traceless() {
        let sys = chain(3, Protocol::forward(10.0), 1e-2);
        let fr = sys.frame(3.0, None).unwrap();
        let out = ame_rhs(&random_density(8, 2), &fr, false);
        assert!(trace(&out).norm() < 1e-12);
    }

    #[test]
    fn gibbs_is_a_fixed_point() {
        let sys = chain(2, Protocol::fixed(0.4, 10.0), 1e-2);
        let fr = sys.frame(1.0, None).unwrap();
        let g = gibbs(&sys.model.hamiltonian(1.0).unwrap(), sys.bath.beta()).unwrap();
        assert!(ame_rhs(&g.rho, &fr, false).camax() < 1e-10);
    }

    #[test]
    fn feedback_with_identity_matches_ame() {
        let sys = chain(2, Protocol::forward(10.0), 1e-2);
        let fr = sys.frame(6.0, None).unwrap();
        let rho = random_density(4, 3);
        let v = &fr.spectral.vectors;
        let rho_e = v.adjoint() * &rho * v;
        let ids: Vec<Option<CMat>> = fr.lindblads.ops.iter().map(|_| Some(CMat::identity(4, 4))).collect();
        let a = generator_eigen(&rho_e, &fr, false, None);
        let b = generator_eigen(&rho_e, &fr, false, Some(&ids));
        assert!((a - b).camax() < 1e-14);
    }

    #[test]
    fn sigma_z_pulse_keeps_jump_populations() {
        // Conjugating by a computational-basis σ^z rotation changes only coherences.
        let m = random_density(2, 9);
        let u = expm_hermitian(&sigma_z(), std::f64::consts::FRAC_PI_2);
        let c = &u * &m * u.adjoint();
        for a in 0..2 {
            assert!((c[(a, a)] - m[(a, a)]).norm() < 1e-14);
        }
        assert!((c[(0, 1)] + m[(0, 1)]).norm() < 1e-14);
    }

    #[test]
    fn feedback_requires_zero_delay() {
        let sys = chain(1, Protocol::forward(10.0), 1e-2);
        let fr = sys.frame(1.0, None).unwrap();
        let fb = FeedbackSpec { kind: FeedbackKind::LindbladCooling, delay: 1.0 };
        assert!(matches!(feedback_rhs(&random_density(2, 1), &fr, &sys, &fb), Err(Error::Unsupported(_))));
    }

    #[test]
    fn zero_dynamics_is_identity() {
        let terms = SystemTerms::ising(&IsingProblem { n_qubits: 1, fields: vec![0.0], couplings: vec![] }, 4).unwrap();
        let model = AnnealModel::new(terms, Schedule::linear(0.0, 0.0).unwrap(), Protocol::forward(5.0)).unwrap();
        let sys = OpenSystem::new(model, BathSpec::ohmic(1e-300, 1.0, 1e-300), SpectralOptions::default()).unwrap();
        let rho = random_density(2, 4);
        let run = propagate(&sys, &rho, 0.0, 5.0, &AmeConfig { output_points: 3, ..Default::default() }, None).unwrap();
        assert!((&run.states[2].rho - &rho).camax() < 1e-15);
    }

    #[test]
    fn pure_dephasing_decay() {
        // H = (E/2)σ^z with σ^z coupling: only the ω = 0 channel acts and the
        // coherence decays as exp(−2γ(0)t) in |ρ01|·... the generator gives
        // dρ01/dt = −iEρ01 − 2γ(0)ρ01 for L = σ^z (eigenvalues ±1).
        let terms = SystemTerms::ising(&IsingProblem { n_qubits: 1, fields: vec![-1.0], couplings: vec![] }, 4).unwrap();
        let model = AnnealModel::new(terms, Schedule::linear(0.0, 3.0).unwrap(), Protocol::fixed(1.0, 20.0)).unwrap();
        let bath = BathSpec::ohmic(2e-3, 1e3, 1.57);
        let sys = OpenSystem::new(model, bath, SpectralOptions::default()).unwrap();
        let plus = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]) / C64::new(2f64.sqrt(), 0.0);
        let run = propagate(&sys, &(plus.clone() * plus.adjoint()), 0.0, 20.0, &AmeConfig { output_points: 11, ..Default::default() }, None).unwrap();
        let g0 = crate::spectral::ohmic_rate(0.0, &bath);
        for st in &run.states {
            let want = 0.5 * (-2.0 * g0 * st.t).exp();
            assert!((st.rho[(0, 1)].norm() - want).abs() < 1e-6, "t={}", st.t);
            assert!((st.rho[(0, 0)].re - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn gibbs_limits() {
        let h = diag(&[-1.0, 0.3, 2.0]);
        let hot = gibbs(&h, 1e-9).unwrap();
        assert!((hot.rho - CMat::identity(3, 3) / C64::new(3.0, 0.0)).camax() < 1e-6);
        let delta = 1.7;
        let beta = 0.8;
        let two = gibbs(&(sigma_x() * C64::new(delta / 2.0, 0.0)), beta).unwrap();
        let fr = decompose(&(sigma_x() * C64::new(delta / 2.0, 0.0)), None).unwrap();
        let ob = observables(&QuantumState::Mixed(two.rho.clone()), &fr, &[]);
        assert!((ob.populations[1] - 1.0 / (1.0 + (beta * delta).exp())).abs() < 1e-14);
        assert!((trace(&two.rho).re - 1.0).abs() < 1e-12);
        assert!(gibbs(&h, 1e6).unwrap().rho[(0, 0)].re > 0.999);
    }

    #[test]
    fn sector_gibbs_favours_ground_states() {
        let n = 4;
        let full = SystemTerms::pspin(&PSpinProblem { n_qubits: n, p: 2, representation: Representation::Full }, 8).unwrap();
        let sec = SystemTerms::pspin(&PSpinProblem { n_qubits: n, p: 2, representation: Representation::MaxSpin }, 8).unwrap();
        let beta = 1.0 / 1.57;
        for (a, b) in [(0.5, 2.0), (0.1, 3.0)] {
            let hf = &full.driver * C64::new(a, 0.0) + &full.problem * C64::new(b, 0.0);
            let hs = &sec.driver * C64::new(a, 0.0) + &sec.problem * C64::new(b, 0.0);
            let pf = gibbs(&hf, beta).unwrap();
            let ps = gibbs(&hs, beta).unwrap();
            let gf = observables(&QuantumState::Mixed(pf.rho), &decompose(&hf, None).unwrap(), &[]).populations[0];
            let gs = observables(&QuantumState::Mixed(ps.rho), &decompose(&hs, None).unwrap(), &[]).populations[0];
            assert!(gs > gf, "{gs} vs {gf}");
        }
    }

    #[test]
    fn observables_examples() {
        let h = crate::linalg::diag(&[0.0, 1.0, 2.0, 3.0]) + sigma_x().kronecker(&sigma_x()) * C64::new(0.3, 0.0);
        let fr = decompose(&h, None).unwrap();
        let g = fr.vectors.column(0).into_owned();
        assert!((observables(&QuantumState::Pure(g), &fr, &[]).populations[0] - 1.0).abs() < 1e-14);
        let mixed = CMat::identity(4, 4) / C64::new(4.0, 0.0);
        let ob = observables(&QuantumState::Mixed(mixed), &fr, &[0]);
        assert!(ob.populations.iter().all(|p| (p - 0.25).abs() < 1e-14));
        assert!((ob.success - 0.25).abs() < 1e-15);
        let rho = random_density(4, 12);
        let ob = observables(&QuantumState::Mixed(rho.clone()), &fr, &[]);
        let re = fr.vectors.adjoint() * &rho * &fr.vectors;
        for a in 0..4 {
            assert!((ob.populations[a] - re[(a, a)].re).abs() < 1e-14);
        }
        assert!((ob.populations.iter().sum::<f64>() - trace(&rho).re).abs() < 1e-12);
    }

    #[test]
    fn closed_system_conserves_energy() {
        let sys = chain(2, Protocol::fixed(0.5, 10.0), 1e-300);
        let h = sys.model.hamiltonian(0.0).unwrap();
        let rho = random_density(4, 6);
        let run = propagate(&sys, &rho, 0.0, 10.0, &AmeConfig { output_points: 5, ..Default::default() }, None).unwrap();
        let e0 = trace(&(&h * &rho)).re;
        for st in &run.states {
            assert!((trace(&(&h * &st.rho)).re - e0).abs() < 1e-7);
        }
    }

    #[test]
    fn frozen_reverse_anneal_keeps_initial_state() {
        // s_inv close to 1 with a tiny transverse field: the classical state survives.
        let terms = SystemTerms::pspin(&PSpinProblem { n_qubits: 3, p: 2, representation: Representation::Full }, 8).unwrap();
        let model = AnnealModel::new(terms, Schedule::bundled(), Protocol::ira_experimental(5.0, 0.98, 0.0)).unwrap();
        let bath = BathSpec { topology: Topology::Independent, ..BathSpec::ohmic(1e-4, 1e3, 1.57) };
        let sys = OpenSystem::new(model, bath, SpectralOptions::default()).unwrap();
        let start = basis_state(8, 1);
        let run = propagate(&sys, &(start.clone() * start.adjoint()), 0.0, sys.model.duration(), &AmeConfig { output_points: 2, ..Default::default() }, None).unwrap();
        let fin = &run.states[1].rho;
        assert!(fin[(1, 1)].re > 0.99);
    }

    #[test]
    fn fixed_point_relaxes_to_gibbs() {
        let sys = chain(2, Protocol::fixed(0.5, 1.0), 5e-2);
        let tr = slowest_relaxation_time(&sys, 0.0).unwrap();
        let h = sys.model.hamiltonian(0.0).unwrap();
        let fr = decompose(&h, None).unwrap();
        let start = fr.vectors.column(3).into_owned();
        let t1 = 10.0 * tr;
        let mut sys_long = sys.clone();
        sys_long.model.protocol.tau = t1;
        let run = propagate(&sys_long, &(start.clone() * start.adjoint()), 0.0, t1, &AmeConfig { output_points: 2, ..Default::default() }, None).unwrap();
        let g = gibbs(&h, sys.bath.beta()).unwrap();
        assert!(trace_distance(&run.states[1].rho, &g.rho) < 1e-3);
    }
}
