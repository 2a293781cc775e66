//! Static operator terms, annealing schedules, protocol time maps and the
//! assembled time-dependent Hamiltonian.
//!
//! Energies are angular GHz and times are ns (ħ = 1). The annealing
//! Hamiltonian for forward and reverse protocols is
//! `H(s) = (A(s)/2)·H_X + (B(s)/2)·H_Z` with `H_X = −Σσ^x`.

use crate::error::{Error, Result};
use crate::linalg::{diag, site_op, sigma_x, sigma_y, sigma_z, CMat, C64};

/// Largest register size accepted when building full-space operators.
pub const DEFAULT_QUBIT_CAP: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct IsingProblem {
    pub n_qubits: usize,
    pub fields: Vec<f64>,
    pub couplings: Vec<(usize, usize, f64)>,
}

impl IsingProblem {
    /// Open ferromagnetic chain with a single pinning field on qubit 0.
    pub fn chain(n: usize, h0: f64, j: f64) -> Self {
        let mut fields = vec![0.0; n];
        if n > 0 {
            fields[0] = h0;
        }
        let couplings = (0..n.saturating_sub(1)).map(|i| (i, i + 1, j)).collect();
        Self { n_qubits: n, fields, couplings }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_qubits;
        if n == 0 {
            return Err(Error::Invalid("ising problem needs at least one qubit".into()));
        }
        if self.fields.len() != n {
            return Err(Error::Invalid(format!(
                "expected {n} local fields, got {}",
                self.fields.len()
            )));
        }
        if self.fields.iter().any(|h| !h.is_finite()) {
            return Err(Error::Invalid("local fields must be finite".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(i, j, v) in &self.couplings {
            if i >= j || j >= n {
                return Err(Error::Invalid(format!("coupling ({i},{j}) must satisfy i < j < {n}")));
            }
            if !seen.insert((i, j)) {
                return Err(Error::Invalid(format!("duplicate coupling ({i},{j})")));
            }
            if !v.is_finite() {
                return Err(Error::Invalid(format!("coupling ({i},{j}) is not finite")));
            }
        }
        Ok(())
    }
}

/// Transverse-field Ising operator pair `(H_X, H_Z)`.
pub fn build_ising(problem: &IsingProblem, cap: usize) -> Result<(CMat, CMat)> {
    problem.validate()?;
    let n = problem.n_qubits;
    if n > cap {
        return Err(Error::Capacity { n, cap });
    }
    let dim = 1usize << n;
    let hx = transverse_driver(n);
    let mut hz = vec![0.0; dim];
    for (idx, e) in hz.iter_mut().enumerate() {
        let z = |q: usize| 1.0 - 2.0 * crate::linalg::bit(idx, q, n) as f64;
        for (q, h) in problem.fields.iter().enumerate() {
            *e -= h * z(q);
        }
        for &(i, j, v) in &problem.couplings {
            *e += v * z(i) * z(j);
        }
    }
    Ok((hx, diag(&hz)))
}

fn transverse_driver(n: usize) -> CMat {
    let dim = 1usize << n;
    let mut hx = CMat::zeros(dim, dim);
    for q in 0..n {
        hx -= site_op(&sigma_x(), q, n);
    }
    hx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// Full 2^N computational space.
    Full,
    /// Maximum-spin (Dicke) sector of dimension N+1, basis index = number of down spins.
    MaxSpin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PSpinProblem {
    pub n_qubits: usize,
    pub p: u32,
    pub representation: Representation,
}

/// Ferromagnetic p-spin operator `−(N/2)·m_z^p` with `m_z = (1/N)Σσ^z`.
pub fn build_pspin(problem: &PSpinProblem, cap: usize) -> Result<CMat> {
    let n = problem.n_qubits;
    if problem.p < 2 {
        return Err(Error::Invalid(format!("p-spin exponent must be >= 2, got {}", problem.p)));
    }
    if n == 0 {
        return Err(Error::Invalid("p-spin problem needs at least one qubit".into()));
    }
    let energy = |down: usize| {
        let m = 1.0 - 2.0 * down as f64 / n as f64;
        -(n as f64 / 2.0) * m.powi(problem.p as i32)
    };
    match problem.representation {
        Representation::MaxSpin => Ok(diag(&(0..=n).map(energy).collect::<Vec<_>>())),
        Representation::Full => {
            if n > cap {
                return Err(Error::Capacity { n, cap });
            }
            let d: Vec<f64> = (0..1usize << n).map(|idx| energy(idx.count_ones() as usize)).collect();
            Ok(diag(&d))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// One bath per qubit.
    Independent,
    /// A single bath coupled to the summed operator.
    Collective,
}

/// Static operators of an N-qubit register in a chosen representation.
#[derive(Debug, Clone)]
pub struct SystemTerms {
    pub n_qubits: usize,
    pub representation: Representation,
    /// `−Σσ^x`.
    pub driver: CMat,
    /// Problem Hamiltonian (`H_Z` or the p-spin `H_0`).
    pub problem: CMat,
}

impl SystemTerms {
    pub fn ising(problem: &IsingProblem, cap: usize) -> Result<Self> {
        let (driver, hz) = build_ising(problem, cap)?;
        Ok(Self { n_qubits: problem.n_qubits, representation: Representation::Full, driver, problem: hz })
    }

    pub fn pspin(problem: &PSpinProblem, cap: usize) -> Result<Self> {
        let h0 = build_pspin(problem, cap)?;
        let n = problem.n_qubits;
        let driver = match problem.representation {
            Representation::Full => transverse_driver(n),
            Representation::MaxSpin => -collective_sector(n, Axis::X),
        };
        Ok(Self { n_qubits: n, representation: problem.representation, driver, problem: h0 })
    }

    pub fn dim(&self) -> usize {
        self.problem.nrows()
    }

    /// System-side bath operators: one per qubit (independent) or their sum (collective).
    pub fn coupling_operators(&self, topology: Topology, axis: Axis) -> Result<Vec<CMat>> {
        let n = self.n_qubits;
        match (self.representation, topology) {
            (Representation::MaxSpin, Topology::Independent) => Err(Error::Unsupported(
                "independent coupling breaks permutation symmetry; use the full representation".into(),
            )),
            (Representation::MaxSpin, Topology::Collective) => Ok(vec![collective_sector(n, axis)]),
            (Representation::Full, _) => {
                let single = pauli(axis);
                let ops: Vec<CMat> = (0..n).map(|q| site_op(&single, q, n)).collect();
                if topology == Topology::Independent {
                    Ok(ops)
                } else {
                    let dim = self.dim();
                    Ok(vec![ops.iter().fold(CMat::zeros(dim, dim), |acc, o| acc + o)])
                }
            }
        }
    }

    /// `Σ_i op_i` along `axis` in the current representation.
    pub fn collective(&self, axis: Axis) -> CMat {
        match self.representation {
            Representation::MaxSpin => collective_sector(self.n_qubits, axis),
            Representation::Full => {
                let n = self.n_qubits;
                let dim = self.dim();
                (0..n).fold(CMat::zeros(dim, dim), |acc, q| acc + site_op(&pauli(axis), q, n))
            }
        }
    }

    /// Basis indices minimizing the (diagonal) problem Hamiltonian.
    pub fn problem_ground_states(&self) -> Vec<usize> {
        let d: Vec<f64> = (0..self.dim()).map(|i| self.problem[(i, i)].re).collect();
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = d.iter().map(|x| x.abs()).fold(1.0, f64::max);
        (0..d.len()).filter(|&i| d[i] - min <= 1e-9 * scale).collect()
    }

    /// Basis index of a classical spin pattern (`+1` up, `−1` down).
    pub fn pattern_index(&self, spins: &[i8]) -> Result<usize> {
        if spins.len() != self.n_qubits || spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Invalid(format!(
                "spin pattern must have {} entries of +1/-1",
                self.n_qubits
            )));
        }
        match self.representation {
            Representation::Full => Ok(spins.iter().fold(0, |acc, &s| (acc << 1) | usize::from(s == -1))),
            Representation::MaxSpin => {
                let down = spins.iter().filter(|&&s| s == -1).count();
                if down != 0 && down != self.n_qubits {
                    return Err(Error::Unsupported(
                        "a non-uniform pattern is not a maximum-spin state; use the full representation".into(),
                    ));
                }
                Ok(down)
            }
        }
    }
}

fn pauli(axis: Axis) -> CMat {
    match axis {
        Axis::X => sigma_x(),
        Axis::Y => sigma_y(),
        Axis::Z => sigma_z(),
    }
}

/// Collective Pauli sum restricted to the maximum-spin sector (basis: w down spins).
fn collective_sector(n: usize, axis: Axis) -> CMat {
    let mut m = CMat::zeros(n + 1, n + 1);
    for w in 0..=n {
        match axis {
            Axis::Z => m[(w, w)] = C64::new(n as f64 - 2.0 * w as f64, 0.0),
            Axis::X | Axis::Y => {
                if w < n {
                    let amp = (((w + 1) * (n - w)) as f64).sqrt();
                    // ⟨w+1| S_- |w⟩ lowers the spin; Σσ^x = S_+ + S_-, Σσ^y = −i S_+ + i S_-.
                    let (lower, raise) = match axis {
                        Axis::X => (C64::new(amp, 0.0), C64::new(amp, 0.0)),
                        _ => (C64::new(0.0, amp), C64::new(0.0, -amp)),
                    };
                    m[(w + 1, w)] = lower;
                    m[(w, w + 1)] = raise;
                }
            }
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Linear,
}

/// Tabulated annealing envelopes `A(s)`, `B(s)` (GHz).
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    knots: Vec<(f64, f64, f64)>,
    pub interpolation: Interpolation,
}

/// Shape of a typical flux-qubit annealer schedule in units of h·GHz; the
/// bundled table multiplies by 2π to get angular GHz.
const BUNDLED_TABLE: [(f64, f64, f64); 11] = [
    (0.0, 6.30, 0.20),
    (0.1, 4.70, 0.65),
    (0.2, 3.55, 1.30),
    (0.3, 2.60, 2.20),
    (0.4, 1.40, 3.30),
    (0.5, 0.60, 4.50),
    (0.6, 0.25, 5.90),
    (0.7, 0.080, 7.40),
    (0.8, 0.020, 8.90),
    (0.9, 0.004, 10.45),
    (1.0, 0.0008, 12.00),
];

impl Schedule {
    pub fn from_table(knots: Vec<(f64, f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Invalid("schedule needs at least two knots".into()));
        }
        if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(Error::Invalid("schedule must cover s = 0 and s = 1".into()));
        }
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Invalid("schedule knots must be strictly increasing in s".into()));
            }
        }
        if knots.iter().any(|&(s, a, b)| !(s.is_finite() && a.is_finite() && b.is_finite()) || a < 0.0 || b < 0.0) {
            return Err(Error::Invalid("schedule values must be finite with A, B >= 0".into()));
        }
        Ok(Self { knots, interpolation: Interpolation::Linear })
    }

    /// `A(s) = A₀(1−s)`, `B(s) = B₁s`.
    pub fn linear(a0: f64, b1: f64) -> Result<Self> {
        Self::from_table(vec![(0.0, a0, 0.0), (1.0, 0.0, b1)])
    }

    pub fn bundled() -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        let knots = BUNDLED_TABLE.iter().map(|&(s, a, b)| (s, two_pi * a, two_pi * b)).collect();
        Self { knots, interpolation: Interpolation::Linear }
    }

    pub fn knots(&self) -> &[(f64, f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, s: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("schedule evaluated at s = {s} outside [0, 1]")));
        }
        let k = self.knots.partition_point(|&(sk, _, _)| sk <= s);
        if k == 0 {
            let (_, a, b) = self.knots[0];
            return Ok((a, b));
        }
        let (s0, a0, b0) = self.knots[k - 1];
        if s == s0 || k == self.knots.len() {
            return Ok((a0, b0));
        }
        let (s1, a1, b1) = self.knots[k];
        let w = (s - s0) / (s1 - s0);
        Ok((a0 + w * (a1 - a0), b0 + w * (b1 - b0)))
    }
}

pub fn schedule_eval(sched: &Schedule, s: f64) -> Result<(f64, f64)> {
    sched.eval(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    Forward,
    /// Reverse to `s_inv` then forward, total cycle time `τ`.
    Ira,
    /// Reverse at slope 1/τ, pause at `s_inv`, forward at slope 1/τ.
    IraExperimental,
    /// Adiabatic reverse annealing from a classical initial state.
    Ara,
    /// Constant `s` for a duration `τ`.
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub kind: ProtocolKind,
    /// Anneal time τ (ns).
    pub tau: f64,
    pub s_inv: f64,
    /// Pause duration t_p (ns).
    pub pause: f64,
    /// Transverse strength Γ of the ARA driver.
    pub gamma: f64,
    /// ARA initial pattern ε_i = ±1.
    pub bits: Vec<i8>,
    /// Fixed λ for ARA; `None` ties λ = s.
    pub lambda: Option<f64>,
    pub iterations: usize,
    /// Value of s held by `FixedPoint`.
    pub s_fixed: f64,
}

impl Protocol {
    fn base(kind: ProtocolKind, tau: f64) -> Self {
        Self { kind, tau, s_inv: 0.5, pause: 0.0, gamma: 1.0, bits: Vec::new(), lambda: None, iterations: 1, s_fixed: 0.5 }
    }

    pub fn forward(tau: f64) -> Self {
        Self::base(ProtocolKind::Forward, tau)
    }

    pub fn ira(tau: f64, s_inv: f64) -> Self {
        Self { s_inv, ..Self::base(ProtocolKind::Ira, tau) }
    }

    pub fn ira_experimental(tau: f64, s_inv: f64, pause: f64) -> Self {
        Self { s_inv, pause, ..Self::base(ProtocolKind::IraExperimental, tau) }
    }

    pub fn ara(tau: f64, gamma: f64, bits: Vec<i8>) -> Self {
        Self { gamma, bits, ..Self::base(ProtocolKind::Ara, tau) }
    }

    pub fn fixed(s: f64, duration: f64) -> Self {
        Self { s_fixed: s, ..Self::base(ProtocolKind::FixedPoint, duration) }
    }

    pub fn with_iterations(mut self, r: usize) -> Self {
        self.iterations = r;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Invalid(format!("anneal time τ must be positive, got {}", self.tau)));
        }
        if self.iterations == 0 {
            return Err(Error::Invalid("iteration count must be >= 1".into()));
        }
        let cyclic = matches!(self.kind, ProtocolKind::Ira | ProtocolKind::IraExperimental);
        if self.iterations > 1 && !cyclic {
            // Forward and ARA cycles end at s=1 and start at s=0; repeating them would jump.
            return Err(Error::Invalid("only reverse-anneal protocols can be iterated".into()));
        }
        if !(self.pause >= 0.0 && self.pause.is_finite()) {
            return Err(Error::Invalid(format!("pause must be >= 0, got {}", self.pause)));
        }
        match self.kind {
            ProtocolKind::Ira | ProtocolKind::IraExperimental => {
                if !(self.s_inv > 0.0 && self.s_inv < 1.0) {
                    return Err(Error::Invalid(format!("s_inv must lie in (0, 1), got {}", self.s_inv)));
                }
            }
            ProtocolKind::Ara => {
                if self.bits.iter().any(|&b| b != 1 && b != -1) {
                    return Err(Error::Invalid("ARA bits must be +1 or -1".into()));
                }
                if let Some(l) = self.lambda {
                    if !(0.0..=1.0).contains(&l) {
                        return Err(Error::Invalid(format!("λ must lie in [0, 1], got {l}")));
                    }
                }
            }
            ProtocolKind::FixedPoint => {
                if !(0.0..=1.0).contains(&self.s_fixed) {
                    return Err(Error::Invalid(format!("fixed s must lie in [0, 1], got {}", self.s_fixed)));
                }
            }
            ProtocolKind::Forward => {}
        }
        Ok(())
    }

    /// Inversion time `t_inv = τ(1 − s_inv)`.
    pub fn t_inv(&self) -> f64 {
        self.tau * (1.0 - self.s_inv)
    }

    /// Duration of a single cycle.
    pub fn cycle_time(&self) -> f64 {
        match self.kind {
            ProtocolKind::IraExperimental => 2.0 * self.tau * (1.0 - self.s_inv) + self.pause,
            _ => self.tau,
        }
    }

    pub fn duration(&self) -> f64 {
        self.cycle_time() * self.iterations as f64
    }

    /// Largest |ds/dt| of the piecewise-linear map.
    pub fn max_slope(&self) -> f64 {
        match self.kind {
            ProtocolKind::Ira => (1.0f64).max((1.0 - self.s_inv) / self.s_inv) / self.tau,
            ProtocolKind::FixedPoint => 0.0,
            _ => 1.0 / self.tau,
        }
    }

    pub fn s_at(&self, t: f64) -> Result<f64> {
        let total = self.duration();
        let slack = 1e-12 * total.max(1.0);
        if !(t >= -slack && t <= total + slack) {
            return Err(Error::Domain(format!("t = {t} outside the protocol window [0, {total}]")));
        }
        let t = t.clamp(0.0, total);
        let cycle = self.cycle_time();
        let k = ((t / cycle).floor() as usize).min(self.iterations - 1);
        let tc = (t - k as f64 * cycle).clamp(0.0, cycle);
        let s = match self.kind {
            ProtocolKind::Forward | ProtocolKind::Ara => tc / self.tau,
            ProtocolKind::FixedPoint => self.s_fixed,
            ProtocolKind::Ira => {
                let si = self.s_inv;
                if tc <= self.t_inv() {
                    1.0 - tc / self.tau
                } else {
                    (1.0 - si) * tc / (self.tau * si) + (2.0 * si - 1.0) / si
                }
            }
            ProtocolKind::IraExperimental => {
                let t_inv = self.t_inv();
                if tc <= t_inv {
                    1.0 - tc / self.tau
                } else if tc <= t_inv + self.pause {
                    self.s_inv
                } else {
                    2.0 * self.s_inv - 1.0 + (tc - self.pause) / self.tau
                }
            }
        };
        Ok(s.clamp(0.0, 1.0))
    }
}

pub fn protocol_s(p: &Protocol, t: f64) -> Result<f64> {
    p.s_at(t)
}

/// Problem terms + schedule + protocol.
#[derive(Debug, Clone)]
pub struct AnnealModel {
    pub terms: SystemTerms,
    pub schedule: Schedule,
    pub protocol: Protocol,
    /// `H_init = −Σ ε_i σ^z_i`, present for ARA.
    init: Option<CMat>,
}

impl AnnealModel {
    pub fn new(terms: SystemTerms, schedule: Schedule, protocol: Protocol) -> Result<Self> {
        protocol.validate()?;
        let init = if protocol.kind == ProtocolKind::Ara {
            if protocol.bits.len() != terms.n_qubits {
                return Err(Error::Invalid(format!(
                    "ARA needs {} initial bits, got {}",
                    terms.n_qubits,
                    protocol.bits.len()
                )));
            }
            if terms.representation != Representation::Full {
                return Err(Error::Unsupported("ARA requires the full representation".into()));
            }
            let n = terms.n_qubits;
            let d: Vec<f64> = (0..terms.dim())
                .map(|idx| {
                    -(0..n)
                        .map(|q| protocol.bits[q] as f64 * (1.0 - 2.0 * crate::linalg::bit(idx, q, n) as f64))
                        .sum::<f64>()
                })
                .collect();
            Some(diag(&d))
        } else {
            None
        };
        Ok(Self { terms, schedule, protocol, init })
    }

    pub fn dim(&self) -> usize {
        self.terms.dim()
    }

    pub fn duration(&self) -> f64 {
        self.protocol.duration()
    }

    pub fn s_at(&self, t: f64) -> Result<f64> {
        self.protocol.s_at(t)
    }

    pub fn init_hamiltonian(&self) -> Option<&CMat> {
        self.init.as_ref()
    }

    pub fn hamiltonian_at_s(&self, s: f64) -> Result<CMat> {
        if let Some(init) = &self.init {
            let lambda = self.protocol.lambda.unwrap_or(s);
            let g = self.protocol.gamma;
            return Ok(&self.terms.problem * C64::new(s, 0.0)
                + init * C64::new((1.0 - s) * (1.0 - lambda), 0.0)
                + &self.terms.driver * C64::new(g * (1.0 - s) * lambda, 0.0));
        }
        let (a, b) = self.schedule.eval(s)?;
        Ok(&self.terms.driver * C64::new(a / 2.0, 0.0) + &self.terms.problem * C64::new(b / 2.0, 0.0))
    }

    pub fn hamiltonian(&self, t: f64) -> Result<CMat> {
        self.hamiltonian_at_s(self.s_at(t)?)
    }
}

pub fn assemble_hamiltonian(model: &AnnealModel, t: f64) -> Result<CMat> {
    model.hamiltonian(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigh, hermitian_residual};
    use proptest::prelude::*;

    fn kron_z_oracle(n: usize, fields: &[f64], couplings: &[(usize, usize, f64)]) -> CMat {
        // Independent construction: explicit Kronecker products of σ^z and identities.
        let z = sigma_z();
        let id = CMat::identity(2, 2);
        let chain = |sites: &[usize]| {
            let mut m = CMat::identity(1, 1);
            for q in 0..n {
                m = m.kronecker(if sites.contains(&q) { &z } else { &id });
            }
            m
        };
        let dim = 1 << n;
        let mut h = CMat::zeros(dim, dim);
        for (q, &hq) in fields.iter().enumerate() {
            h -= chain(&[q]) * C64::new(hq, 0.0);
        }
        for &(i, j, v) in couplings {
            h += chain(&[i, j]) * C64::new(v, 0.0);
        }
        h
    }

    #[test]
    fn ising_two_qubit_against_kronecker() {
        let p = IsingProblem { n_qubits: 2, fields: vec![1.0, 0.0], couplings: vec![(0, 1, -1.0)] };
        let (hx, hz) = build_ising(&p, 8).unwrap();
        let oracle = kron_z_oracle(2, &p.fields, &p.couplings);
        assert!((&hz - &oracle).norm() < 1e-14);
        let d: Vec<f64> = (0..4).map(|i| hz[(i, i)].re).collect();
        assert_eq!(d, vec![-2.0, 0.0, 2.0, 0.0]);
        let x_oracle = -(sigma_x().kronecker(&CMat::identity(2, 2)) + CMat::identity(2, 2).kronecker(&sigma_x()));
        assert!((hx - x_oracle).norm() < 1e-14);
    }

    #[test]
    fn ising_single_qubit_empty() {
        let p = IsingProblem { n_qubits: 1, fields: vec![0.0], couplings: vec![] };
        let (hx, hz) = build_ising(&p, 8).unwrap();
        assert!(hz.norm() == 0.0);
        assert!((hx + sigma_x()).norm() == 0.0);
    }

    #[test]
    fn eight_qubit_chain_builds() {
        let p = IsingProblem::chain(8, 0.25, -1.0);
        let (hx, hz) = build_ising(&p, 12).unwrap();
        assert_eq!(hz.nrows(), 256);
        assert_eq!(p.fields[0], 0.25);
        assert_eq!(p.couplings.len(), 7);
        // Ferromagnetic chain with the pinning field favouring up: all-up is the unique minimum.
        let (vals, _) = eigh(&hz);
        assert!((vals[0] - (-0.25 - 7.0)).abs() < 1e-12);
        assert!(hermitian_residual(&hx) == 0.0);
    }

    #[test]
    fn capacity_guard() {
        let p = IsingProblem::chain(5, 0.25, -1.0);
        assert!(matches!(build_ising(&p, 4), Err(Error::Capacity { n: 5, cap: 4 })));
    }

    #[test]
    fn invalid_problems_rejected() {
        let dup = IsingProblem { n_qubits: 2, fields: vec![0.0; 2], couplings: vec![(0, 1, 1.0), (0, 1, 2.0)] };
        assert!(dup.validate().is_err());
        let oob = IsingProblem { n_qubits: 2, fields: vec![0.0; 2], couplings: vec![(0, 2, 1.0)] };
        assert!(oob.validate().is_err());
    }

    #[test]
    fn pspin_two_qubit_full() {
        let h = build_pspin(&PSpinProblem { n_qubits: 2, p: 2, representation: Representation::Full }, 8).unwrap();
        let d: Vec<f64> = (0..4).map(|i| h[(i, i)].re).collect();
        assert_eq!(d, vec![-1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn pspin_four_qubit_degenerate_ground() {
        let terms = SystemTerms::pspin(&PSpinProblem { n_qubits: 4, p: 2, representation: Representation::Full }, 8).unwrap();
        assert_eq!(terms.problem_ground_states(), vec![0, 15]);
    }

    #[test]
    fn pspin_sector_values() {
        let h = build_pspin(&PSpinProblem { n_qubits: 3, p: 3, representation: Representation::MaxSpin }, 8).unwrap();
        let got: Vec<f64> = (0..4).map(|i| h[(i, i)].re).collect();
        let want = [-1.5, -1.5 / 27.0, 1.5 / 27.0, 1.5];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-14);
        }
        let full = build_pspin(&PSpinProblem { n_qubits: 3, p: 3, representation: Representation::Full }, 8).unwrap();
        for (w, g) in got.iter().enumerate() {
            let idx = (1usize << w) - 1; // w down spins on the last qubits
            assert!((full[(idx, idx)].re - g).abs() < 1e-14);
        }
    }

    /// Dicke state with `w` down spins as a full-space vector.
    fn dicke(n: usize, w: usize) -> crate::linalg::CVec {
        let dim = 1 << n;
        let members: Vec<usize> = (0..dim).filter(|i: &usize| i.count_ones() as usize == w).collect();
        let amp = 1.0 / (members.len() as f64).sqrt();
        let mut v = crate::linalg::CVec::zeros(dim);
        for m in members {
            v[m] = C64::new(amp, 0.0);
        }
        v
    }

    #[test]
    fn sector_operators_are_restrictions_of_full_space() {
        for n in 2..=6 {
            for p in 2..=3 {
                let full = SystemTerms::pspin(&PSpinProblem { n_qubits: n, p, representation: Representation::Full }, 8).unwrap();
                let sec = SystemTerms::pspin(&PSpinProblem { n_qubits: n, p, representation: Representation::MaxSpin }, 8).unwrap();
                let basis: Vec<_> = (0..=n).map(|w| dicke(n, w)).collect();
                for axis in [Axis::X, Axis::Y, Axis::Z] {
                    let fc = full.collective(axis);
                    let sc = sec.collective(axis);
                    for a in 0..=n {
                        for b in 0..=n {
                            let proj = (basis[a].adjoint() * &fc * &basis[b])[(0, 0)];
                            assert!((proj - sc[(a, b)]).norm() < 1e-12, "n={n} axis={axis:?} ({a},{b})");
                        }
                    }
                }
                let h = full.driver.clone() + full.problem.clone();
                let hs = sec.driver.clone() + sec.problem.clone();
                for a in 0..=n {
                    for b in 0..=n {
                        let proj = (basis[a].adjoint() * &h * &basis[b])[(0, 0)];
                        assert!((proj - hs[(a, b)]).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn linear_schedule_midpoint_and_knots() {
        let s = Schedule::linear(4.0, 6.0).unwrap();
        assert_eq!(s.eval(0.5).unwrap(), (2.0, 3.0));
        assert_eq!(s.eval(0.0).unwrap(), (4.0, 0.0));
        assert_eq!(s.eval(1.0).unwrap(), (0.0, 6.0));
        assert!(s.eval(1.01).is_err());
        let b = Schedule::bundled();
        for &(sk, a, bb) in b.knots() {
            assert_eq!(b.eval(sk).unwrap(), (a, bb));
        }
    }

    #[test]
    fn forward_and_experimental_examples() {
        assert_eq!(Protocol::forward(100.0).s_at(50.0).unwrap(), 0.5);
        let p = Protocol::ira_experimental(1000.0, 0.2, 0.0);
        assert!((p.s_at(800.0).unwrap() - 0.2).abs() < 1e-15);
        let paused = Protocol::ira_experimental(1000.0, 0.2, 50.0);
        for t in [800.0, 810.0, 849.999, 850.0] {
            assert!((paused.s_at(t).unwrap() - 0.2).abs() < 1e-15);
        }
        assert!((paused.duration() - 1650.0).abs() < 1e-12);
        assert!((paused.s_at(1650.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(paused.s_at(1700.0).is_err());
    }

    #[test]
    fn ira_boundaries() {
        let p = Protocol::ira(10.0, 0.3);
        assert_eq!(p.s_at(0.0).unwrap(), 1.0);
        assert!((p.s_at(7.0).unwrap() - 0.3).abs() < 1e-14);
        assert!((p.s_at(10.0).unwrap() - 1.0).abs() < 1e-14);
    }

    fn ara_model(gamma: f64) -> AnnealModel {
        let terms = SystemTerms::pspin(&PSpinProblem { n_qubits: 4, p: 2, representation: Representation::Full }, 8).unwrap();
        AnnealModel::new(terms, Schedule::linear(1.0, 1.0).unwrap(), Protocol::ara(1.0, gamma, vec![1, 1, 1, -1])).unwrap()
    }

    #[test]
    fn ara_boundaries() {
        let m = ara_model(1.0);
        let h0 = m.hamiltonian(0.0).unwrap();
        assert!((&h0 - m.init_hamiltonian().unwrap()).norm() == 0.0);
        let h1 = m.hamiltonian(1.0).unwrap();
        assert!((&h1 - &m.terms.problem).norm() == 0.0);
    }

    #[test]
    fn ara_mid_spectrum_matches_dense_oracle() {
        let m = ara_model(1.0);
        let n = 4;
        let eps = [1.0, 1.0, 1.0, -1.0];
        let id = CMat::identity(2, 2);
        let op_on = |op: &CMat, site: usize| {
            let mut out = CMat::identity(1, 1);
            for q in 0..n {
                out = out.kronecker(if q == site { op } else { &id });
            }
            out
        };
        let mut sz = CMat::zeros(16, 16);
        let mut vtf = CMat::zeros(16, 16);
        let mut hinit = CMat::zeros(16, 16);
        for q in 0..n {
            sz += op_on(&sigma_z(), q);
            vtf -= op_on(&sigma_x(), q);
            hinit -= op_on(&sigma_z(), q) * C64::new(eps[q], 0.0);
        }
        let mz = &sz / C64::new(n as f64, 0.0);
        let h0 = (&mz * &mz) * C64::new(-(n as f64) / 2.0, 0.0);
        for s in [0.2, 0.45, 0.7] {
            let oracle = &h0 * C64::new(s, 0.0)
                + &hinit * C64::new((1.0 - s) * (1.0 - s), 0.0)
                + &vtf * C64::new((1.0 - s) * s, 0.0);
            let got = m.hamiltonian(s).unwrap();
            let (ev_o, _) = eigh(&oracle);
            let (ev_g, _) = eigh(&got);
            assert!(((ev_o[1] - ev_o[0]) - (ev_g[1] - ev_g[0])).abs() < 1e-10);
            assert!(hermitian_residual(&got) < 1e-12);
        }
    }

    fn any_protocol() -> impl Strategy<Value = Protocol> {
        (0usize..4, 1.0f64..100.0, 0.05f64..0.95, 0.0f64..50.0, 1usize..4).prop_map(|(k, tau, si, tp, r)| {
            match k {
                0 => Protocol::forward(tau),
                1 => Protocol::ira(tau, si),
                2 => Protocol::ira_experimental(tau, si, tp),
                _ => Protocol::ara(tau, 1.0, vec![1, -1]),
            }
            .with_iterations(if k == 1 || k == 2 { r } else { 1 })
        })
    }

    proptest! {
        #[test]
        fn protocol_is_lipschitz_and_bounded(p in any_protocol(), u in 0.0f64..1.0, frac in 0.0f64..1.0) {
            let total = p.duration();
            let t = u * total;
            let delta = frac * (total - t).min(p.tau * 0.05);
            let s0 = p.s_at(t).unwrap();
            let s1 = p.s_at(t + delta).unwrap();
            prop_assert!((0.0..=1.0).contains(&s0));
            prop_assert!((s1 - s0).abs() <= delta * p.max_slope() * (1.0 + 1e-9) + 1e-12);
        }

        #[test]
        fn iterations_repeat_the_cycle(tau in 1.0f64..50.0, si in 0.05f64..0.95, tp in 0.0f64..10.0, r in 2usize..4, u in 0.0f64..1.0) {
            let one = Protocol::ira_experimental(tau, si, tp);
            let many = one.clone().with_iterations(r);
            prop_assert!((many.duration() - r as f64 * one.duration()).abs() < 1e-9);
            let t = u * one.duration();
            let k = (r - 1) as f64;
            prop_assert!((many.s_at(t + k * one.duration()).unwrap() - one.s_at(t).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn pause_holds_s_inv(tau in 1.0f64..50.0, si in 0.05f64..0.95, tp in 0.1f64..10.0, u in 0.0f64..1.0) {
            let p = Protocol::ira_experimental(tau, si, tp);
            let t = p.t_inv() + u * tp;
            prop_assert_eq!(p.s_at(t).unwrap(), si);
        }

        #[test]
        fn schedule_brackets_between_knots(s in 0.0f64..1.0) {
            let sched = Schedule::bundled();
            let (a, b) = sched.eval(s).unwrap();
            let k = sched.knots().partition_point(|&(sk, _, _)| sk <= s).max(1).min(sched.knots().len() - 1);
            let (_, a0, b0) = sched.knots()[k - 1];
            let (_, a1, b1) = sched.knots()[k];
            prop_assert!(a >= a0.min(a1) - 1e-12 && a <= a0.max(a1) + 1e-12);
            prop_assert!(b >= b0.min(b1) - 1e-12 && b <= b0.max(b1) + 1e-12);
        }

        #[test]
        fn assembled_hamiltonian_is_hermitian(s in 0.0f64..1.0, h in -1.0f64..1.0) {
            let p = IsingProblem { n_qubits: 3, fields: vec![h, 0.3, -0.2], couplings: vec![(0, 1, -1.0), (1, 2, 0.5)] };
            let terms = SystemTerms::ising(&p, 8).unwrap();
            let m = AnnealModel::new(terms, Schedule::bundled(), Protocol::forward(1.0)).unwrap();
            prop_assert!(hermitian_residual(&m.hamiltonian(s).unwrap()) <= 1e-12);
        }
    }
}
