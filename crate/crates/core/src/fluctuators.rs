//! 1/f noise from an ensemble of classical two-state fluctuators.
//!
//! Each fluctuator adds `½ b_i χ_i(t) A` to the system Hamiltonian, where
//! `χ_i = ±1` flips at rate γ_i/2 in each direction. Switching rates are
//! log-uniform over `[γ_min, γ_max]`, which makes the summed Lorentzian
//! spectrum fall as 1/ω between the two cutoffs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{expm_hermitian, CMat, CVec, C64};
use crate::model::{AnnealModel, Axis};
use crate::stats::{linear_fit, mean, standard_error, stream_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Fluctuator {
    pub b: f64,
    /// Total switching rate; each direction flips at γ/2.
    pub gamma: f64,
    pub chi0: i8,
    pub switches: Vec<f64>,
}

impl Fluctuator {
    pub fn chi(&self, t: f64) -> i8 {
        let n = self.switches.partition_point(|&s| s <= t);
        if n % 2 == 0 {
            self.chi0
        } else {
            -self.chi0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FluctuatorCount {
    PerDecade(f64),
    Total(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluctuatorEnsembleSpec {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub count: FluctuatorCount,
    pub mean_b: f64,
    /// Relative spread Δb/⟨b⟩ of the Gaussian coupling distribution.
    pub spread: f64,
    /// Equilibrium bias: χ(0) = +1 with probability (1 + δp_eq)/2.
    pub dp_eq: f64,
}

impl FluctuatorEnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_min > 0.0 && self.gamma_max > self.gamma_min && self.gamma_max.is_finite()) {
            return Err(Error::Invalid(format!(
                "need 0 < γ_min < γ_max, got [{}, {}]",
                self.gamma_min, self.gamma_max
            )));
        }
        if !(self.mean_b > 0.0 && self.mean_b.is_finite()) {
            return Err(Error::Invalid(format!("mean coupling must be positive, got {}", self.mean_b)));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::Invalid(format!("coupling spread must be >= 0, got {}", self.spread)));
        }
        if !(0.0..=1.0).contains(&self.dp_eq) {
            return Err(Error::Invalid(format!("δp_eq must lie in [0, 1], got {}", self.dp_eq)));
        }
        match self.count {
            FluctuatorCount::PerDecade(n) if !(n > 0.0 && n.is_finite()) => {
                Err(Error::Invalid(format!("fluctuators per decade must be positive, got {n}")))
            }
            FluctuatorCount::Total(0) => Err(Error::Invalid("fluctuator count must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn decades(&self) -> f64 {
        (self.gamma_max / self.gamma_min).log10()
    }

    pub fn total(&self) -> usize {
        match self.count {
            FluctuatorCount::PerDecade(n) => (n * self.decades()).round().max(1.0) as usize,
            FluctuatorCount::Total(n) => n,
        }
    }

    pub fn per_decade(&self) -> f64 {
        self.total() as f64 / self.decades()
    }

    /// A single fluctuator with fixed coupling and rate.
    pub fn single(b: f64, gamma: f64, dp_eq: f64) -> Self {
        Self {
            gamma_min: gamma,
            gamma_max: gamma * (1.0 + 1e-12),
            count: FluctuatorCount::Total(1),
            mean_b: b,
            spread: 0.0,
            dp_eq,
        }
    }
}

pub fn sample_chi<R: Rng>(dp_eq: f64, rng: &mut R) -> i8 {
    if rng.random::<f64>() < 0.5 * (1.0 + dp_eq) {
        1
    } else {
        -1
    }
}

/// Draws couplings, rates and initial signs (no switch times yet).
pub fn sample_ensemble<R: Rng>(spec: &FluctuatorEnsembleSpec, rng: &mut R) -> Result<Vec<Fluctuator>> {
    spec.validate()?;
    let (lo, hi) = (spec.gamma_min.ln(), spec.gamma_max.ln());
    let normal = (spec.spread > 0.0)
        .then(|| Normal::new(spec.mean_b, spec.spread * spec.mean_b))
        .transpose()
        .map_err(|e| Error::Invalid(format!("coupling distribution: {e}")))?;
    Ok((0..spec.total())
        .map(|_| {
            let gamma = rng.random_range(lo..hi).exp();
            let b = match &normal {
                None => spec.mean_b,
                Some(n) => loop {
                    let b = n.sample(rng);
                    if b > 0.0 {
                        break b;
                    }
                },
            };
            Fluctuator { b, gamma, chi0: sample_chi(spec.dp_eq, rng), switches: Vec::new() }
        })
        .collect())
}

/// Switch times in `(0, t_max]` with exponential(γ/2) gaps.
pub fn switch_schedule<R: Rng>(f: &Fluctuator, t_max: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(t_max > 0.0) {
        return Err(Error::Invalid(format!("t_max must be positive, got {t_max}")));
    }
    let exp = Exp::new(0.5 * f.gamma).map_err(|e| Error::Invalid(format!("switching rate: {e}")))?;
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t > t_max {
            return Ok(out);
        }
        out.push(t);
    }
}

/// Noise operator `A`: a collective Pauli sum or any Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseOperator {
    Collective(Axis),
    Custom(CMat),
}

#[derive(Debug, Clone)]
pub enum SystemDrive {
    Static(CMat),
    Anneal(AnnealModel),
}

/// System Hamiltonian plus the operator the fluctuators couple to.
#[derive(Debug, Clone)]
pub struct NoisySystem {
    pub drive: SystemDrive,
    pub noise: CMat,
}

impl NoisySystem {
    pub fn new(drive: SystemDrive, noise: NoiseOperator) -> Result<Self> {
        let dim = match &drive {
            SystemDrive::Static(h) => h.nrows(),
            SystemDrive::Anneal(m) => m.dim(),
        };
        let noise = match noise {
            NoiseOperator::Custom(a) => a,
            NoiseOperator::Collective(axis) => match &drive {
                SystemDrive::Anneal(m) => m.terms.collective(axis),
                SystemDrive::Static(_) => {
                    let n = dim.trailing_zeros() as usize;
                    if 1usize << n != dim {
                        return Err(Error::Invalid("collective noise needs a qubit register".into()));
                    }
                    let p = match axis {
                        Axis::X => crate::linalg::sigma_x(),
                        Axis::Y => crate::linalg::sigma_y(),
                        Axis::Z => crate::linalg::sigma_z(),
                    };
                    (0..n).fold(CMat::zeros(dim, dim), |acc, q| acc + crate::linalg::site_op(&p, q, n))
                }
            },
        };
        if noise.nrows() != dim || noise.ncols() != dim {
            return Err(Error::Invalid(format!("noise operator must be {dim}x{dim}")));
        }
        if crate::linalg::hermitian_residual(&noise) > 1e-12 {
            return Err(Error::Invalid("noise operator must be Hermitian".into()));
        }
        Ok(Self { drive, noise })
    }

    pub fn dim(&self) -> usize {
        self.noise.nrows()
    }

    pub fn is_static(&self) -> bool {
        matches!(self.drive, SystemDrive::Static(_))
    }

    pub fn system_h(&self, t: f64) -> Result<CMat> {
        match &self.drive {
            SystemDrive::Static(h) => Ok(h.clone()),
            SystemDrive::Anneal(m) => m.hamiltonian(t),
        }
    }
}

/// `H_sys(t) + ½ Σ b_i χ_i(t) A`.
pub fn stochastic_h(sys: &NoisySystem, fluctuators: &[Fluctuator], t: f64) -> Result<CMat> {
    let field: f64 = fluctuators.iter().map(|f| f.b * f.chi(t) as f64).sum();
    Ok(sys.system_h(t)? + &sys.noise * C64::new(0.5 * field, 0.0))
}

/// Piecewise-exact propagation of one noise realization, sampled on `grid`.
/// The noise field is constant between switches; a time-dependent system
/// Hamiltonian is additionally split into pieces no longer than `max_substep`
/// and evaluated at each piece's midpoint.
pub fn propagate_sse(
    sys: &NoisySystem,
    psi0: &CVec,
    fluctuators: &[Fluctuator],
    grid: &[f64],
    max_substep: f64,
) -> Result<Vec<CVec>> {
    if grid.is_empty() {
        return Ok(Vec::new());
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Invalid("output grid must be ascending".into()));
    }
    let (t0, t1) = (grid[0], grid[grid.len() - 1]);
    let mut events: Vec<(f64, usize)> = fluctuators
        .iter()
        .enumerate()
        .flat_map(|(i, f)| f.switches.iter().filter(move |&&s| s > t0 && s <= t1).map(move |&s| (s, i)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut chi: Vec<f64> = fluctuators.iter().map(|f| f.chi(t0) as f64).collect();
    let mut field: f64 = fluctuators.iter().zip(&chi).map(|(f, c)| f.b * c).sum();
    let mut psi = psi0.clone();
    let mut out = Vec::with_capacity(grid.len());
    let mut t = t0;
    let mut ei = 0;
    let static_h = match &sys.drive {
        SystemDrive::Static(h) => Some(h),
        SystemDrive::Anneal(_) => None,
    };
    for &tg in grid {
        loop {
            let next_switch = events.get(ei).map_or(f64::INFINITY, |e| e.0);
            let stop = next_switch.min(tg);
            if stop > t {
                let noise = &sys.noise * C64::new(0.5 * field, 0.0);
                let pieces = if static_h.is_some() { 1 } else { ((stop - t) / max_substep).ceil().max(1.0) as usize };
                let dt = (stop - t) / pieces as f64;
                for p in 0..pieces {
                    let h = match static_h {
                        Some(h) => h + &noise,
                        None => sys.system_h(t + (p as f64 + 0.5) * dt)? + &noise,
                    };
                    psi = expm_hermitian(&h, dt) * psi;
                }
                t = stop;
            }
            if next_switch <= tg {
                let i = events[ei].1;
                field -= 2.0 * fluctuators[i].b * chi[i];
                chi[i] = -chi[i];
                ei += 1;
            } else {
                break;
            }
        }
        out.push(psi.clone());
    }
    Ok(out)
}

/// Free-induction decay `⟨m₊(t)⟩` of a qubit under a single fluctuator
/// starting in equilibrium, with `g = 2b/γ`.
pub fn fid_analytic(b: f64, gamma: f64, t: f64) -> f64 {
    let g = 2.0 * b / gamma;
    let x = 0.5 * gamma * t;
    let env = (-x).exp();
    if (g - 1.0).abs() < 1e-12 {
        return env * (1.0 + x);
    }
    if g < 1.0 {
        let mu = (1.0 - g * g).sqrt();
        env * ((mu * x).cosh() + (mu * x).sinh() / mu)
    } else {
        let nu = (g * g - 1.0).sqrt();
        env * ((nu * x).cos() + (nu * x).sin() / nu)
    }
}

/// Collective magnetization `(⟨M_x⟩, ⟨M_y⟩, ⟨M_z⟩)` with `M_a = Σ σ^a / N`;
/// for one qubit these are the Bloch components.
pub fn magnetization(psi: &CVec, n_qubits: usize) -> [f64; 3] {
    let dim = psi.len();
    let mut m = [0.0; 3];
    for idx in 0..dim {
        let p = psi[idx];
        for q in 0..n_qubits {
            let shift = n_qubits - 1 - q;
            let flipped = idx ^ (1 << shift);
            let up = (idx >> shift) & 1 == 0;
            let c = p.conj() * psi[flipped];
            m[0] += c.re;
            // σ^y|0⟩ = i|1⟩, σ^y|1⟩ = −i|0⟩.
            m[1] += if up { c.im } else { -c.im };
            m[2] += if up { p.norm_sqr() } else { -p.norm_sqr() };
        }
    }
    m.map(|x| x / n_qubits as f64)
}

/// Single-qubit density matrix `½(I + m·σ)`.
pub fn density_from_bloch(m: [f64; 3]) -> CMat {
    CMat::from_row_slice(
        2,
        2,
        &[
            C64::new(0.5 * (1.0 + m[2]), 0.0),
            C64::new(0.5 * m[0], -0.5 * m[1]),
            C64::new(0.5 * m[0], 0.5 * m[1]),
            C64::new(0.5 * (1.0 - m[2]), 0.0),
        ],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuatorRunConfig {
    pub grid: Vec<f64>,
    pub realizations: usize,
    pub master: u64,
    pub workers: usize,
    pub max_substep: f64,
    /// Redraw couplings and rates for every realization instead of once.
    pub fresh_parameters: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuatorEnsemble {
    pub times: Vec<f64>,
    /// `samples[c][t][k]`: magnetization component `c` of realization `k`.
    pub samples: [Vec<Vec<f64>>; 3],
    pub mean_state: Vec<CMat>,
    /// Largest `|‖ψ‖ − 1|` over all realizations and times.
    pub max_norm_error: f64,
}

impl FluctuatorEnsemble {
    pub fn mean(&self, c: usize) -> Vec<f64> {
        self.samples[c].iter().map(|s| mean(s)).collect()
    }

    pub fn standard_error(&self, c: usize) -> Vec<Option<f64>> {
        self.samples[c].iter().map(|s| standard_error(s)).collect()
    }

    /// `|ρ̄₀₁(t)|`.
    pub fn coherence(&self) -> Vec<f64> {
        self.mean_state.iter().map(|r| r[(0, 1)].norm()).collect()
    }

    /// `ρ̄₀₀(t)`.
    pub fn ground_population(&self) -> Vec<f64> {
        self.mean_state.iter().map(|r| r[(0, 0)].re).collect()
    }
}

/// Stream used for the shared fluctuator parameters.
pub const PARAMETER_STREAM: u64 = u64::MAX - 1;

fn realize(spec: &FluctuatorEnsembleSpec, base: &[Fluctuator], t_max: f64, fresh: bool, rng: &mut ChaCha8Rng) -> Result<Vec<Fluctuator>> {
    let mut fl = if fresh { sample_ensemble(spec, rng)? } else { base.to_vec() };
    for f in fl.iter_mut() {
        if !fresh {
            f.chi0 = sample_chi(spec.dp_eq, rng);
        }
        f.switches = switch_schedule(f, t_max, rng)?;
    }
    Ok(fl)
}

/// Independent noise realizations propagated in parallel; realization `k`
/// uses stream `k` of the master seed.
pub fn run_ensemble(sys: &NoisySystem, psi0: &CVec, spec: &FluctuatorEnsembleSpec, cfg: &FluctuatorRunConfig) -> Result<FluctuatorEnsemble> {
    spec.validate()?;
    if cfg.realizations == 0 {
        return Err(Error::Invalid("need at least one realization".into()));
    }
    if cfg.grid.is_empty() {
        return Err(Error::Invalid("empty output grid".into()));
    }
    if !(cfg.max_substep > 0.0) {
        return Err(Error::Invalid("max_substep must be positive".into()));
    }
    let d = sys.dim();
    let n_qubits = d.trailing_zeros() as usize;
    let base = sample_ensemble(spec, &mut stream_rng(cfg.master, PARAMETER_STREAM))?;
    let t_max = *cfg.grid.last().unwrap();
    let psi0 = psi0 / C64::new(psi0.norm(), 0.0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<CVec>>> = pool.install(|| {
        (0..cfg.realizations)
            .into_par_iter()
            .map(|k| {
                let mut rng = stream_rng(cfg.master, k as u64);
                let fl = realize(spec, &base, t_max.max(f64::MIN_POSITIVE), cfg.fresh_parameters, &mut rng)?;
                propagate_sse(sys, &psi0, &fl, &cfg.grid, cfg.max_substep)
            })
            .collect()
    });
    let nt = cfg.grid.len();
    let mut samples: [Vec<Vec<f64>>; 3] = std::array::from_fn(|_| vec![Vec::with_capacity(cfg.realizations); nt]);
    let mut mean_state = vec![CMat::zeros(d, d); nt];
    let mut max_norm_error: f64 = 0.0;
    let mut failed = Vec::new();
    let mut first = None;
    for (k, res) in results.into_iter().enumerate() {
        match res {
            Ok(states) => {
                for (t, psi) in states.iter().enumerate() {
                    max_norm_error = max_norm_error.max((psi.norm() - 1.0).abs());
                    let m = magnetization(psi, n_qubits.max(1));
                    for c in 0..3 {
                        samples[c][t].push(m[c]);
                    }
                    mean_state[t] += psi * psi.adjoint();
                }
            }
            Err(e) => {
                failed.push(k as u64);
                first.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if !failed.is_empty() {
        return Err(Error::Ensemble { failed, first: first.unwrap_or_default() });
    }
    let kf = C64::new(cfg.realizations as f64, 0.0);
    mean_state.iter_mut().for_each(|m| *m /= kf);
    Ok(FluctuatorEnsemble { times: cfg.grid.clone(), samples, mean_state, max_norm_error })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayModel {
    /// `y = c + a·e^{−t/T1}` (diagonal element).
    T1Diagonal,
    /// `y = a·e^{−t/T2*}` (off-diagonal magnitude).
    T2StarOffDiagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    /// Fitted time constant; `None` when the series does not decay.
    pub time: Option<f64>,
    pub amplitude: f64,
    pub offset: f64,
    pub rms: f64,
    pub degenerate: bool,
    /// Residual RMS above 5% of the amplitude.
    pub non_exponential: bool,
    /// Reduced decay factor `ln y(t)` (NaN where `y ≤ 0`).
    pub reduced: Vec<f64>,
}

fn linear_coeffs(t: &[f64], y: &[f64], tau: f64, model: DecayModel) -> (f64, f64, f64) {
    let e: Vec<f64> = t.iter().map(|&x| (-x / tau).exp()).collect();
    let (a, c) = match model {
        DecayModel::T2StarOffDiagonal => {
            let see: f64 = e.iter().map(|v| v * v).sum();
            let sey: f64 = e.iter().zip(y).map(|(a, b)| a * b).sum();
            (if see > 0.0 { sey / see } else { 0.0 }, 0.0)
        }
        DecayModel::T1Diagonal => {
            let (slope, intercept) = linear_fit(&e, y);
            if slope.is_finite() {
                (slope, intercept)
            } else {
                (0.0, mean(y))
            }
        }
    };
    let sse: f64 = e.iter().zip(y).map(|(ei, yi)| (yi - c - a * ei).powi(2)).sum();
    (a, c, sse)
}

/// Least-squares fit of the closed decay form by a scan over ln T followed
/// by golden-section refinement (the amplitude and offset are linear).
pub fn fit_decay(t: &[f64], y: &[f64], model: DecayModel) -> Result<DecayFit> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(Error::Invalid("decay fit needs at least three matched samples".into()));
    }
    let span = t[t.len() - 1] - t[0];
    if !(span > 0.0) {
        return Err(Error::Invalid("decay fit needs an increasing time axis".into()));
    }
    let reduced = y.iter().map(|&v| if v > 0.0 { v.ln() } else { f64::NAN }).collect();
    let (lo, hi) = ((span * 1e-4).ln(), (span * 1e4).ln());
    let sse = |u: f64| linear_coeffs(t, y, u.exp(), model).2;
    let n = 200;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..=n {
        let u = lo + (hi - lo) * i as f64 / n as f64;
        let s = sse(u);
        if s < best.1 {
            best = (i, s);
        }
    }
    let step = (hi - lo) / n as f64;
    let (mut a, mut b) = (lo + step * best.0.saturating_sub(1) as f64, lo + step * (best.0 + 1).min(n) as f64);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if sse(c) < sse(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let tau = (0.5 * (a + b)).exp();
    let (amp, off, s) = linear_coeffs(t, y, tau, model);
    let rms = (s / t.len() as f64).sqrt();
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let degenerate = best.0 == n || amp.abs() <= 1e-9 * scale.max(1e-300) || !(tau.is_finite());
    Ok(DecayFit {
        time: (!degenerate).then_some(tau),
        amplitude: amp,
        offset: off,
        rms,
        degenerate,
        non_exponential: !degenerate && rms > 0.05 * amp.abs(),
        reduced,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumCheck {
    pub omegas: Vec<f64>,
    pub spectrum: Vec<f64>,
    /// Least-squares slope of ln S against ln ω.
    pub slope: f64,
    /// Mean of `ω·S(ω)` over the grid.
    pub amplitude: f64,
    /// `⟨b²⟩ n_d / (2 ln 10)`.
    pub predicted_amplitude: f64,
    pub warnings: Vec<String>,
}

/// Single-fluctuator Lorentzian `b²γ / (π(ω² + γ²))`.
pub fn lorentzian(b: f64, gamma: f64, omega: f64) -> f64 {
    b * b * gamma / (std::f64::consts::PI * (omega * omega + gamma * gamma))
}

pub fn spectrum_check(spec: &FluctuatorEnsembleSpec, fluctuators: &[Fluctuator], omegas: &[f64]) -> Result<SpectrumCheck> {
    if omegas.len() < 2 || omegas.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Invalid("spectrum grid needs at least two positive frequencies".into()));
    }
    let mut warnings = Vec::new();
    if omegas.iter().any(|&w| w <= spec.gamma_min || w >= spec.gamma_max) {
        warnings.push(format!(
            "grid extends outside ({}, {}); the 1/ω law only holds between the cutoffs",
            spec.gamma_min, spec.gamma_max
        ));
    }
    let s: Vec<f64> = omegas.iter().map(|&w| fluctuators.iter().map(|f| lorentzian(f.b, f.gamma, w)).sum()).collect();
    let lx: Vec<f64> = omegas.iter().map(|w| w.ln()).collect();
    let ly: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    let (slope, _) = linear_fit(&lx, &ly);
    let amplitude = mean(&omegas.iter().zip(&s).map(|(w, v)| w * v).collect::<Vec<_>>());
    let b2 = mean(&fluctuators.iter().map(|f| f.b * f.b).collect::<Vec<_>>());
    let predicted_amplitude = b2 * spec.per_decade() / (2.0 * std::f64::consts::LN_10);
    Ok(SpectrumCheck { omegas: omegas.to_vec(), spectrum: s, slope, amplitude, predicted_amplitude, warnings })
}
