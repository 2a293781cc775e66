//! Instantaneous eigenframes, Bohr-frequency grouping, Lindblad operators
//! in the energy eigenbasis and Ohmic bath rates.

use crate::error::{Error, Result};
use crate::linalg::{eigh, hermitian_residual, polar_unitary, CMat, C64};
use crate::model::{AnnealModel, Axis, Topology};

/// Eigenvalues within this relative spread count as degenerate when
/// aligning a frame with its predecessor.
const DEGENERACY_RTOL: f64 = 1e-9;

/// Default Bohr-frequency grouping tolerance (GHz).
pub const DEFAULT_OMEGA_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SpectralFrame {
    pub t: f64,
    /// Ascending eigenvalues.
    pub energies: Vec<f64>,
    /// Eigenvectors as columns, matching `energies`.
    pub vectors: CMat,
    /// Keep only the lowest `n_keep` levels when building Lindblad operators.
    pub n_keep: Option<usize>,
}

impl SpectralFrame {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn kept(&self) -> usize {
        self.n_keep.map_or(self.dim(), |k| k.min(self.dim()))
    }

    pub fn to_eigenbasis(&self, op: &CMat) -> CMat {
        self.vectors.adjoint() * op * &self.vectors
    }

    pub fn to_computational(&self, op: &CMat) -> CMat {
        &self.vectors * op * self.vectors.adjoint()
    }
}

fn clusters(energies: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=energies.len() {
        if i == energies.len() || energies[i] - energies[i - 1] > tol {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Diagonalizes `h`. With `prev`, each eigenvector's phase is chosen so that
/// its overlap with the previous frame is real and non-negative, and
/// degenerate clusters are rotated onto the previous cluster.
pub fn decompose(h: &CMat, prev: Option<&SpectralFrame>) -> Result<SpectralFrame> {
    let scale = h.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if h.nrows() != h.ncols() || hermitian_residual(h) > 1e-10 * scale {
        return Err(Error::Invalid("decompose needs a Hermitian matrix".into()));
    }
    let (energies, mut vectors) = eigh(h);
    if let Some(p) = prev.filter(|p| p.dim() == energies.len()) {
        let emax = energies.iter().map(|e| e.abs()).fold(1.0, f64::max);
        for r in clusters(&energies, DEGENERACY_RTOL * emax) {
            let k = r.len();
            let old = p.vectors.columns(r.start, k).into_owned();
            let new = vectors.columns(r.start, k).into_owned();
            let overlap = old.adjoint() * &new;
            let aligned = if k == 1 {
                let o = overlap[(0, 0)];
                let phase = if o.norm() > 0.0 { o.conj() / o.norm() } else { C64::new(1.0, 0.0) };
                new * phase
            } else {
                // Maximize Re tr(O U): U is the polar factor of O†.
                let u = polar_unitary(&overlap.adjoint());
                new * u
            };
            vectors.columns_mut(r.start, k).copy_from(&aligned);
        }
    }
    Ok(SpectralFrame { t: prev.map_or(0.0, |p| p.t), energies, vectors, n_keep: prev.and_then(|p| p.n_keep) })
}

/// Transitions sharing one Bohr frequency. A pair `(a, b)` is the transition
/// `|ε_b⟩ → |ε_a⟩` with gap `ε_b − ε_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct BohrGroup {
    pub omega: f64,
    pub pairs: Vec<(usize, usize)>,
}

/// Groups every ordered level pair by Bohr frequency. Levels closer than
/// `omega_tol` are first merged into clusters so that a degenerate subspace
/// always moves as a whole; cluster gaps are then merged greedily from the
/// smallest upward and mirrored to negative frequencies.
pub fn group_bohr(frame: &SpectralFrame, omega_tol: f64) -> Vec<BohrGroup> {
    let m = frame.kept();
    let e = &frame.energies[..m];
    let cl = clusters(e, omega_tol);
    let means: Vec<f64> = cl.iter().map(|r| e[r.clone()].iter().sum::<f64>() / r.len() as f64).collect();

    let mut zero = BohrGroup { omega: 0.0, pairs: Vec::new() };
    for r in &cl {
        for a in r.clone() {
            for b in r.clone() {
                zero.pairs.push((a, b));
            }
        }
    }

    let mut gaps: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..cl.len() {
        for j in i + 1..cl.len() {
            gaps.push((means[j] - means[i], i, j));
        }
    }
    gaps.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut positive: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut start = f64::NEG_INFINITY;
    for &(g, i, j) in &gaps {
        if positive.is_empty() || g - start > omega_tol {
            positive.push(Vec::new());
            start = g;
        }
        positive.last_mut().unwrap().push((i, j));
    }

    let mut groups = Vec::with_capacity(2 * positive.len() + 1);
    let mut up = Vec::new();
    for members in &positive {
        let mut pairs = Vec::new();
        let mut sum = 0.0;
        for &(i, j) in members {
            for a in cl[i].clone() {
                for b in cl[j].clone() {
                    pairs.push((a, b));
                    sum += e[b] - e[a];
                }
            }
        }
        let omega = sum / pairs.len() as f64;
        let mirrored = pairs.iter().map(|&(a, b)| (b, a)).collect();
        groups.push(BohrGroup { omega, pairs });
        up.push(BohrGroup { omega: -omega, pairs: mirrored });
    }
    up.reverse();
    let mut out = up;
    out.push(zero);
    out.extend(groups);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathSpec {
    /// Dimensionless coupling ηg².
    pub coupling: f64,
    /// High-frequency cutoff ω_c (GHz).
    pub cutoff: f64,
    /// Temperature (GHz, ħ = k_B = 1).
    pub temperature: f64,
    pub topology: Topology,
    pub axis: Axis,
}

impl BathSpec {
    pub fn ohmic(coupling: f64, cutoff: f64, temperature: f64) -> Self {
        Self { coupling, cutoff, temperature, topology: Topology::Independent, axis: Axis::Z }
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.temperature
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("coupling", self.coupling), ("cutoff", self.cutoff), ("temperature", self.temperature)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("bath {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Ohmic rate `γ(ω) = 2πηg² ω e^{−|ω|/ω_c} / (1 − e^{−βω})`, with the
/// `ω → 0` limit `2πηg²/β`.
pub fn ohmic_rate(omega: f64, bath: &BathSpec) -> f64 {
    let beta = bath.beta();
    let x = beta * omega;
    // x / (1 − e^{−x}) written with expm1 so both signs stay accurate.
    let bose = if x.abs() < 1e-10 { 1.0 + 0.5 * x } else { x / -(-x).exp_m1() };
    2.0 * std::f64::consts::PI * bath.coupling / beta * bose * (-omega.abs() / bath.cutoff).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LindbladOp {
    pub omega: f64,
    pub rate: f64,
    pub channel: usize,
    /// Non-zero entries `(a, b, ⟨ε_a|A|ε_b⟩)`, scaled by `√rate` when absorbed.
    pub entries: Vec<(usize, usize, C64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LindbladSet {
    pub dim: usize,
    pub ops: Vec<LindbladOp>,
    /// Whether `√γ` is folded into the entries.
    pub absorbed: bool,
}

impl LindbladOp {
    pub fn dense(&self, dim: usize) -> CMat {
        let mut m = CMat::zeros(dim, dim);
        for &(a, b, v) in &self.entries {
            m[(a, b)] += v;
        }
        m
    }

    /// `out = L·psi` in the eigenbasis.
    pub fn apply(&self, psi: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for &(a, b, v) in &self.entries {
            out[a] += v * psi[b];
        }
    }

    /// `‖L·psi‖²`.
    pub fn norm_sqr_on(&self, psi: &[C64], scratch: &mut [C64]) -> f64 {
        self.apply(psi, scratch);
        scratch.iter().map(|z| z.norm_sqr()).sum()
    }
}

impl LindbladSet {
    /// Rate multiplying the dissipator term of op `k` (1 when absorbed).
    pub fn weight(&self, k: usize) -> f64 {
        if self.absorbed {
            1.0
        } else {
            self.ops[k].rate
        }
    }

    /// `Σ_k w_k L_k† L_k` in the eigenbasis.
    pub fn decay_operator(&self) -> CMat {
        let mut g = CMat::zeros(self.dim, self.dim);
        for (k, op) in self.ops.iter().enumerate() {
            let w = self.weight(k);
            for &(a, b, v) in &op.entries {
                for &(a2, b2, v2) in &op.entries {
                    if a == a2 {
                        g[(b, b2)] += v.conj() * v2 * w;
                    }
                }
            }
        }
        g
    }
}

/// Lindblad operators for the given system-side coupling operators (one per
/// bath channel, in the computational basis).
pub fn build_lindblads(
    frame: &SpectralFrame,
    couplings: &[CMat],
    bath: &BathSpec,
    omega_tol: f64,
    absorb: bool,
) -> LindbladSet {
    let groups = group_bohr(frame, omega_tol);
    let dim = frame.dim();
    let mut ops = Vec::new();
    for (ch, a_op) in couplings.iter().enumerate() {
        let ae = frame.to_eigenbasis(a_op);
        let cut = 1e-13 * ae.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for g in &groups {
            let rate = ohmic_rate(g.omega, bath);
            let scale = if absorb { rate.sqrt() } else { 1.0 };
            let entries: Vec<(usize, usize, C64)> = g
                .pairs
                .iter()
                .filter_map(|&(a, b)| {
                    let v = ae[(a, b)];
                    (v.norm() > cut).then_some((a, b, v * scale))
                })
                .collect();
            if !entries.is_empty() {
                ops.push(LindbladOp { omega: g.omega, rate, channel: ch, entries });
            }
        }
    }
    LindbladSet { dim, ops, absorbed: absorb }
}

/// 15-point Gauss–Kronrod nodes/weights on [−1, 1] (positive half).
const GK_X: [f64; 8] = [
    0.991455371120812639,
    0.949107912342758525,
    0.864864423359769073,
    0.741531185599394440,
    0.586087235467691130,
    0.405845151377397167,
    0.207784955007898468,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022935322010529225,
    0.063092092629978553,
    0.104790010322250184,
    0.140653259715525919,
    0.169004726639267903,
    0.190350578064785410,
    0.204432940075298892,
    0.209482141084727828,
];
const GK_WG: [f64; 4] = [0.129484966168869693, 0.279705391489276668, 0.381830050505118945, 0.417959183673469388];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * GK_WK[7];
    let mut g = fc * GK_WG[3];
    for i in 0..7 {
        let dx = h * GK_X[i];
        let s = f(c - dx) + f(c + dx);
        k += GK_WK[i] * s;
        if i % 2 == 1 {
            g += GK_WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod quadrature to absolute tolerance `tol`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let mut stack = vec![(a, b, tol, 0u32)];
    let mut total = 0.0;
    while let Some((lo, hi, t, depth)) = stack.pop() {
        let (v, err) = gk15(f, lo, hi);
        if err <= t.max(1e-15 * v.abs()) {
            total += v;
        } else if depth >= 60 {
            return Err(Error::Numerical(format!(
                "quadrature failed to converge on [{lo}, {hi}] (error estimate {err:e} > {t:e})"
            )));
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * t, depth + 1));
            stack.push((mid, hi, 0.5 * t, depth + 1));
        }
    }
    Ok(total)
}

/// Principal-value Hilbert transform of γ/2:
/// `S(ω) = (1/2π) P∫_{−Ω}^{Ω} γ(x)/(ω − x) dx` with `Ω = 20ω_c`.
pub fn lamb_kernel(omega: f64, bath: &BathSpec) -> Result<f64> {
    let cap = 20.0 * bath.cutoff;
    if omega.abs() >= cap {
        return Err(Error::Numerical(format!("Bohr frequency {omega} outside the Lamb-shift window ±{cap}")));
    }
    let g0 = ohmic_rate(omega, bath);
    let h = 1e-6 * bath.temperature.min(bath.cutoff);
    let slope = (ohmic_rate(omega + h, bath) - ohmic_rate(omega - h, bath)) / (2.0 * h);
    let f = |x: f64| {
        let d = omega - x;
        if d.abs() < 1e-9 * bath.temperature {
            -slope
        } else {
            (ohmic_rate(x, bath) - g0) / d
        }
    };
    let tol = 1e-10 * ohmic_rate(0.0, bath).max(g0).max(1e-300);
    let mut cuts = vec![-cap, omega.min(0.0), omega.max(0.0), cap];
    cuts.dedup();
    let mut regular = 0.0;
    for w in cuts.windows(2) {
        if w[1] > w[0] {
            regular += integrate_adaptive(&f, w[0], w[1], tol)?;
        }
    }
    // P∫ dx/(ω − x) over [−Ω, Ω] = ln((Ω + ω)/(Ω − ω)).
    let singular = g0 * ((cap + omega) / (cap - omega)).ln();
    Ok((regular + singular) / (2.0 * std::f64::consts::PI))
}

/// `Σ_k S(ω_k) L_k†L_k` in the eigenbasis for an arbitrary kernel.
pub fn lamb_shift_with_kernel<K: FnMut(f64) -> Result<f64>>(lindblads: &LindbladSet, mut kernel: K) -> Result<CMat> {
    let d = lindblads.dim;
    let mut h = CMat::zeros(d, d);
    let mut cache: Vec<(f64, f64)> = Vec::new();
    for op in &lindblads.ops {
        let s = match cache.iter().find(|(w, _)| *w == op.omega) {
            Some(&(_, s)) => s,
            None => {
                let s = kernel(op.omega)?;
                cache.push((op.omega, s));
                s
            }
        };
        let unscale = if lindblads.absorbed {
            if op.rate > 0.0 {
                1.0 / op.rate
            } else {
                continue;
            }
        } else {
            1.0
        };
        for &(a, b, v) in &op.entries {
            for &(a2, b2, v2) in &op.entries {
                if a == a2 {
                    h[(b, b2)] += v.conj() * v2 * (s * unscale);
                }
            }
        }
    }
    Ok(h)
}

/// Lamb-shift Hamiltonian in the eigenbasis; the zero operator when disabled.
pub fn lamb_shift(lindblads: &LindbladSet, bath: &BathSpec, enabled: bool) -> Result<CMat> {
    if !enabled {
        return Ok(CMat::zeros(lindblads.dim, lindblads.dim));
    }
    lamb_shift_with_kernel(lindblads, |w| lamb_kernel(w, bath))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub omega_tol: f64,
    pub lamb_shift: bool,
    pub n_keep: Option<usize>,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { omega_tol: DEFAULT_OMEGA_TOL, lamb_shift: false, n_keep: None }
    }
}

/// Everything the open-system engines need at one instant.
#[derive(Debug, Clone)]
pub struct Frame {
    pub s: f64,
    pub spectral: SpectralFrame,
    pub lindblads: LindbladSet,
    /// Lamb shift in the eigenbasis.
    pub h_ls: CMat,
    /// `Σ γ L†L` in the eigenbasis.
    pub decay: CMat,
}

/// Annealing model coupled to an Ohmic bath.
#[derive(Debug, Clone)]
pub struct OpenSystem {
    pub model: AnnealModel,
    pub bath: BathSpec,
    pub options: SpectralOptions,
    couplings: Vec<CMat>,
}

impl OpenSystem {
    pub fn new(model: AnnealModel, bath: BathSpec, options: SpectralOptions) -> Result<Self> {
        bath.validate()?;
        if !(options.omega_tol > 0.0) {
            return Err(Error::Invalid("omega_tol must be positive".into()));
        }
        let couplings = model.terms.coupling_operators(bath.topology, bath.axis)?;
        Ok(Self { model, bath, options, couplings })
    }

    pub fn couplings(&self) -> &[CMat] {
        &self.couplings
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn frame_at_s(&self, s: f64, t: f64, prev: Option<&SpectralFrame>) -> Result<Frame> {
        let h = self.model.hamiltonian_at_s(s)?;
        let mut spectral = decompose(&h, prev)?;
        spectral.t = t;
        spectral.n_keep = self.options.n_keep;
        let lindblads = build_lindblads(&spectral, &self.couplings, &self.bath, self.options.omega_tol, false);
        let h_ls = lamb_shift(&lindblads, &self.bath, self.options.lamb_shift)?;
        let decay = lindblads.decay_operator();
        Ok(Frame { s, spectral, lindblads, h_ls, decay })
    }

    pub fn frame(&self, t: f64, prev: Option<&SpectralFrame>) -> Result<Frame> {
        let s = self.model.s_at(t)?;
        self.frame_at_s(s, t, prev)
    }

    /// Frame at `t`, reusing `cache` when `s(t)` has not changed (fixed-s
    /// runs and pauses).
    pub fn frame_cached<'a>(&self, t: f64, cache: &'a mut Option<Frame>) -> Result<&'a Frame> {
        let s = self.model.s_at(t)?;
        if cache.as_ref().map_or(true, |f| f.s != s) {
            *cache = Some(self.frame_at_s(s, t, None)?);
        }
        Ok(cache.as_ref().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diag, sigma_x, sigma_z, site_op};
    use crate::model::{IsingProblem, PSpinProblem, Protocol, Representation, Schedule, SystemTerms};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = CMat::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        (&a + a.adjoint()) * C64::new(0.5, 0.0)
    }

    fn bath() -> BathSpec {
        BathSpec::ohmic(1e-3, 1e3, 1.57)
    }

    #[test]
    fn decompose_diagonal_and_sigma_x() {
        let f = decompose(&diag(&[-1.0, 1.0]), None).unwrap();
        assert_eq!(f.energies, vec![-1.0, 1.0]);
        assert!((f.vectors[(0, 0)].norm() - 1.0).abs() < 1e-15);
        let f = decompose(&sigma_x(), None).unwrap();
        assert!((f.energies[0] + 1.0).abs() < 1e-14 && (f.energies[1] - 1.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((f.vectors[(0, 1)].norm() - r).abs() < 1e-14);
        assert!((f.vectors[(0, 0)] * f.vectors[(1, 0)].conj() + C64::new(0.5, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn decompose_random_residual() {
        let h = random_hermitian(8, 11);
        let f = decompose(&h, None).unwrap();
        let lhs = &h * &f.vectors;
        let rhs = &f.vectors * diag(&f.energies);
        assert!((lhs - rhs).camax() < 1e-10);
        let id = f.vectors.adjoint() * &f.vectors;
        assert!((id - CMat::identity(8, 8)).camax() < 1e-10);
        assert!(f.energies.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn decompose_rejects_non_hermitian() {
        let mut h = sigma_x();
        h[(0, 1)] = C64::new(2.0, 0.0);
        assert!(decompose(&h, None).is_err());
    }

    #[test]
    fn phase_continuity_along_a_path() {
        let a = random_hermitian(6, 3);
        let b = random_hermitian(6, 4);
        let mut prev = decompose(&a, None).unwrap();
        for k in 1..=50 {
            let x = k as f64 / 50.0;
            let h = &a * C64::new(1.0 - x, 0.0) + &b * C64::new(x, 0.0);
            let f = decompose(&h, Some(&prev)).unwrap();
            for j in 0..6 {
                let o = (prev.vectors.column(j).adjoint() * f.vectors.column(j))[(0, 0)];
                assert!(o.im.abs() < 1e-12 && o.re > 0.0);
            }
            prev = f;
        }
    }

    #[test]
    fn degenerate_cluster_follows_previous() {
        // Exactly degenerate pair: the new basis is rotated onto the old one.
        let h = diag(&[0.0, 1.0, 1.0]);
        let mut prev = decompose(&h, None).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mix = CMat::from_row_slice(2, 2, &[C64::new(r, 0.0), C64::new(0.0, r), C64::new(0.0, r), C64::new(r, 0.0)]);
        let cols = prev.vectors.columns(1, 2).into_owned() * mix;
        prev.vectors.columns_mut(1, 2).copy_from(&cols);
        let f = decompose(&h, Some(&prev)).unwrap();
        let o = prev.vectors.adjoint() * &f.vectors;
        assert!((o - CMat::identity(3, 3)).camax() < 1e-12);
    }

    fn frame_of(e: &[f64]) -> SpectralFrame {
        SpectralFrame { t: 0.0, energies: e.to_vec(), vectors: CMat::identity(e.len(), e.len()), n_keep: None }
    }

    #[test]
    fn two_level_groups() {
        let g = group_bohr(&frame_of(&[0.0, 2.0]), 1e-4);
        let omegas: Vec<f64> = g.iter().map(|x| x.omega).collect();
        assert_eq!(omegas, vec![-2.0, 0.0, 2.0]);
        assert_eq!(g[2].pairs, vec![(0, 1)]);
        assert_eq!(g[0].pairs, vec![(1, 0)]);
    }

    #[test]
    fn near_degenerate_levels_merge() {
        let g = group_bohr(&frame_of(&[0.0, 1.0, 1.0 + 1e-4]), 1e-2);
        let up = g.iter().find(|x| x.omega > 0.5).unwrap();
        assert!(up.pairs.contains(&(0, 1)) && up.pairs.contains(&(0, 2)));
        assert!((up.omega - (1.0 + 0.5e-4)).abs() < 1e-12);
        let zero = g.iter().find(|x| x.omega == 0.0).unwrap();
        assert!(zero.pairs.contains(&(1, 2)) && zero.pairs.contains(&(2, 1)));
    }

    #[test]
    fn exact_degeneracy_in_zero_group() {
        let g = group_bohr(&frame_of(&[0.0, 3.0, 3.0]), 1e-4);
        let zero = g.iter().find(|x| x.omega == 0.0).unwrap();
        assert!(zero.pairs.contains(&(1, 2)));
    }

    proptest! {
        #[test]
        fn every_pair_in_exactly_one_group(raw in proptest::collection::vec(-5.0f64..5.0, 1..7), tol in 1e-3f64..0.5) {
            let mut e = raw.clone();
            e.sort_by(f64::total_cmp);
            let g = group_bohr(&frame_of(&e), tol);
            let n = e.len();
            let mut count = vec![0usize; n * n];
            for grp in &g {
                for &(a, b) in &grp.pairs {
                    count[a * n + b] += 1;
                    prop_assert!((e[b] - e[a] - grp.omega).abs() <= 2.0 * tol * n as f64);
                }
            }
            prop_assert!(count.iter().all(|&c| c == 1));
            prop_assert!(g.iter().any(|x| x.omega == 0.0));
        }

        #[test]
        // Below T ≈ 1.45 GHz the factor e^{−βω} itself overflows at |ω| = 10³.
        fn kms_identity(w in -1e3f64..1e3, t in 1.5f64..20.0) {
            let b = BathSpec::ohmic(1e-3, 1e3, t);
            let lhs = ohmic_rate(-w, &b);
            let rhs = (-b.beta() * w).exp() * ohmic_rate(w, &b);
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn ohmic_limits() {
        let b = bath();
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!((ohmic_rate(0.0, &b) - two_pi * 1e-3 * 1.57).abs() < 1e-15);
        assert!((ohmic_rate(1e-12, &b) - ohmic_rate(0.0, &b)).abs() < 1e-14);
        let ratio = ohmic_rate(-1.0, &b) / ohmic_rate(1.0, &b);
        assert!((ratio - (-1.0f64 / 1.57).exp()).abs() < 1e-12);
        let cold = BathSpec::ohmic(1e-3, 10.0, 1e-3);
        let want = two_pi * 1e-3 * 10.0 * (-1.0f64).exp();
        assert!((ohmic_rate(10.0, &cold) - want).abs() < 1e-12);
    }

    #[test]
    fn commuting_coupling_gives_dephasing_only() {
        let h = sigma_z() * C64::new(0.5 * 3.0, 0.0);
        let f = decompose(&h, None).unwrap();
        let set = build_lindblads(&f, &[sigma_z()], &bath(), 1e-4, false);
        assert_eq!(set.ops.len(), 1);
        assert_eq!(set.ops[0].omega, 0.0);
        let d = set.ops[0].dense(2);
        assert!(d[(0, 1)].norm() == 0.0 && d[(1, 0)].norm() == 0.0);
    }

    fn chain_system(n: usize, topology: Topology) -> OpenSystem {
        let terms = SystemTerms::ising(&IsingProblem::chain(n, 0.25, -1.0), 10).unwrap();
        let model = AnnealModel::new(terms, Schedule::linear(5.0, 5.0).unwrap(), Protocol::forward(10.0)).unwrap();
        OpenSystem::new(model, BathSpec { topology, ..bath() }, SpectralOptions::default()).unwrap()
    }

    #[test]
    fn collective_equals_sum_of_independent() {
        // Permutation-symmetric two-qubit Hamiltonian.
        let x = site_op(&sigma_x(), 0, 2) + site_op(&sigma_x(), 1, 2);
        let zz = site_op(&sigma_z(), 0, 2) * site_op(&sigma_z(), 1, 2);
        let h = x * C64::new(-0.7, 0.0) + zz * C64::new(-1.0, 0.0);
        let f = decompose(&h, None).unwrap();
        let indep_ops: Vec<CMat> = (0..2).map(|q| site_op(&sigma_z(), q, 2)).collect();
        let coll = vec![&indep_ops[0] + &indep_ops[1]];
        let ind = build_lindblads(&f, &indep_ops, &bath(), 1e-4, false);
        let col = build_lindblads(&f, &coll, &bath(), 1e-4, false);
        for op in &col.ops {
            let summed = ind
                .ops
                .iter()
                .filter(|o| o.omega == op.omega)
                .fold(CMat::zeros(4, 4), |acc, o| acc + o.dense(4));
            assert!((summed - op.dense(4)).camax() < 1e-12);
        }
    }

    #[test]
    fn completeness_of_matrix_elements() {
        let sys = chain_system(3, Topology::Independent);
        let fr = sys.frame(4.0, None).unwrap();
        for (ch, a) in sys.couplings().iter().enumerate() {
            let ae = fr.spectral.to_eigenbasis(a);
            let cut = 1e-13 * ae.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let raw = ae.iter().filter(|z| z.norm() > cut).count();
            let grouped: usize = fr.lindblads.ops.iter().filter(|o| o.channel == ch).map(|o| o.entries.len()).sum();
            assert_eq!(raw, grouped);
        }
    }

    #[test]
    fn collective_coupling_preserves_spin_sectors() {
        // Full-space p-spin with collective σ^z coupling: the dissipator leaves
        // every total-spin sector population unchanged.
        let n = 4;
        let terms = SystemTerms::pspin(&PSpinProblem { n_qubits: n, p: 2, representation: Representation::Full }, 8).unwrap();
        let sx = terms.collective(Axis::X) * C64::new(0.5, 0.0);
        let sy = terms.collective(Axis::Y) * C64::new(0.5, 0.0);
        let sz = terms.collective(Axis::Z) * C64::new(0.5, 0.0);
        let s2 = &sx * &sx + &sy * &sy + &sz * &sz;
        let (vals, vecs) = crate::linalg::eigh(&s2);
        let model = AnnealModel::new(terms, Schedule::bundled(), Protocol::forward(10.0)).unwrap();
        let sys = OpenSystem::new(model, BathSpec { topology: Topology::Collective, ..bath() }, SpectralOptions::default()).unwrap();
        let rho = {
            let a = random_hermitian(16, 5);
            let p = &a * a.adjoint();
            let tr = crate::linalg::trace(&p);
            p / tr
        };
        for s in [0.2, 0.6, 1.0] {
            let fr = sys.frame_at_s(s, 0.0, None).unwrap();
            let rho_e = fr.spectral.to_eigenbasis(&rho);
            let mut drho = CMat::zeros(16, 16);
            for (k, op) in fr.lindblads.ops.iter().enumerate() {
                let l = op.dense(16);
                let ll = l.adjoint() * &l;
                drho += (&l * &rho_e * l.adjoint() - (&ll * &rho_e + &rho_e * &ll) * C64::new(0.5, 0.0))
                    * C64::new(fr.lindblads.weight(k), 0.0);
            }
            let drho_c = fr.spectral.to_computational(&drho);
            // Sector projectors from S² eigenvalues j(j+1).
            for j2 in [0.0, 2.0, 6.0] {
                let mut proj = CMat::zeros(16, 16);
                for (k, &v) in vals.iter().enumerate() {
                    if (v - j2).abs() < 1e-8 {
                        proj += vecs.column(k) * vecs.column(k).adjoint();
                    }
                }
                let change = crate::linalg::trace(&(&proj * &drho_c)).norm();
                assert!(change < 1e-12, "s={s} sector {j2}: {change}");
            }
        }
    }

    #[test]
    fn lamb_shift_disabled_is_zero_and_unit_kernel_gives_ldagl() {
        let sys = chain_system(2, Topology::Independent);
        let fr = sys.frame(3.0, None).unwrap();
        assert!(lamb_shift(&fr.lindblads, &bath(), false).unwrap().camax() == 0.0);
        let single = LindbladSet { dim: 4, ops: vec![fr.lindblads.ops[1].clone()], absorbed: false };
        let h = lamb_shift_with_kernel(&single, |_| Ok(1.0)).unwrap();
        let l = single.ops[0].dense(4);
        assert!((h - l.adjoint() * l).camax() < 1e-14);
    }

    #[test]
    fn lamb_shift_commutes_with_h() {
        let sys = chain_system(2, Topology::Independent);
        let fr = sys.frame(3.0, None).unwrap();
        let b = BathSpec::ohmic(1e-3, 50.0, 1.57);
        let h_ls = lamb_shift(&fr.lindblads, &b, true).unwrap();
        assert!((&h_ls - h_ls.adjoint()).camax() < 1e-12);
        let h = diag(&fr.spectral.energies);
        let comm = &h * &h_ls - &h_ls * &h;
        assert!(comm.camax() < 1e-9 * h_ls.camax().max(1e-12));
        assert!(h_ls.camax() > 0.0);
    }

    #[test]
    fn lamb_kernel_matches_brute_force() {
        // Independent oracle: symmetric excision around the pole on a fine midpoint grid.
        let b = BathSpec::ohmic(1e-3, 5.0, 1.0);
        let w = 0.7;
        let cap = 100.0;
        let n = 2_000_000;
        let dx = 2.0 * cap / n as f64;
        let mut sum = 0.0;
        for k in 0..n {
            let x = -cap + (k as f64 + 0.5) * dx;
            sum += ohmic_rate(x, &b) / (w - x) * dx;
        }
        let want = sum / (2.0 * std::f64::consts::PI);
        let got = lamb_kernel(w, &b).unwrap();
        assert!((got - want).abs() < 1e-6 * want.abs().max(1e-6), "{got} vs {want}");
    }
}
