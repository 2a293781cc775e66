//! Spin-vector Monte Carlo on the classical p-spin landscape.
//!
//! Each qubit is replaced by a planar rotor `(sin θ, 0, cos θ)` and the
//! energy becomes `−(A/2)Σ sin θ_i − (BN/2)(Σ cos θ_i / N)^p`. SVMC
//! proposes a fresh uniform angle; SVMC-TF restricts the move to
//! `±min(1, A/B)π`, which freezes the rotors once the transverse field is
//! small.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Protocol, Schedule};
use crate::stats::stream_rng;

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Svmc,
    SvmcTf,
}

/// Rotor angles with cached `Σ sin θ` and `Σ cos θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinAngles {
    pub theta: Vec<f64>,
    pub sweeps: usize,
    pub variant: Variant,
    sin_sum: f64,
    cos_sum: f64,
}

impl SpinAngles {
    pub fn new(theta: Vec<f64>, variant: Variant) -> Self {
        let theta: Vec<f64> = theta.into_iter().map(|t| t.clamp(0.0, PI)).collect();
        let sin_sum = theta.iter().map(|t| t.sin()).sum();
        let cos_sum = theta.iter().map(|t| t.cos()).sum();
        Self { theta, sweeps: 0, variant, sin_sum, cos_sum }
    }

    /// Bit 0 ↦ θ = 0 (up), bit 1 ↦ θ = π (down).
    pub fn from_bits(bits: &[u8], variant: Variant) -> Self {
        Self::new(bits.iter().map(|&b| if b == 0 { 0.0 } else { PI }).collect(), variant)
    }

    /// Projection onto the computational basis: θ ≤ π/2 ↦ 0.
    pub fn bits(&self) -> Vec<u8> {
        self.theta.iter().map(|&t| u8::from(t > 0.5 * PI)).collect()
    }

    pub fn energy(&self, a: f64, b: f64, p: u32) -> f64 {
        let n = self.theta.len() as f64;
        -0.5 * a * self.sin_sum - 0.5 * b * n * (self.cos_sum / n).powi(p as i32)
    }

    /// Re-derives the cached sums (drift control for long runs).
    pub fn refresh(&mut self) {
        self.sin_sum = self.theta.iter().map(|t| t.sin()).sum();
        self.cos_sum = self.theta.iter().map(|t| t.cos()).sum();
    }
}

pub fn classical_energy(theta: &[f64], a: f64, b: f64, p: u32) -> f64 {
    let n = theta.len() as f64;
    let m = theta.iter().map(|t| t.cos()).sum::<f64>() / n;
    -0.5 * a * theta.iter().map(|t| t.sin()).sum::<f64>() - 0.5 * b * n * m.powi(p as i32)
}

/// Energy change for `θ_i → new`, from the cached sums.
pub fn delta_energy(st: &SpinAngles, i: usize, new: f64, a: f64, b: f64, p: u32) -> f64 {
    let n = st.theta.len() as f64;
    let old = st.theta[i];
    let ds = new.sin() - old.sin();
    let c1 = st.cos_sum + new.cos() - old.cos();
    -0.5 * a * ds - 0.5 * b * n * ((c1 / n).powi(p as i32) - (st.cos_sum / n).powi(p as i32))
}

fn accept(st: &mut SpinAngles, i: usize, new: f64) {
    let old = st.theta[i];
    st.sin_sum += new.sin() - old.sin();
    st.cos_sum += new.cos() - old.cos();
    st.theta[i] = new;
}

/// Half-width of the SVMC-TF proposal window.
pub fn tf_width(a: f64, b: f64) -> f64 {
    if b <= 0.0 {
        PI
    } else {
        (a / b).min(1.0) * PI
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepStats {
    pub accepted: usize,
    pub proposed: usize,
    /// Sum of accepted ΔE.
    pub delta: f64,
}

/// Downhill moves are taken without consuming a random number.
pub fn metropolis<R: Rng>(de: f64, beta: f64, rng: &mut R) -> bool {
    de <= 0.0 || rng.random::<f64>() < (-beta * de).exp()
}

/// One Metropolis proposal per rotor, in index order unless `random_order`.
pub fn sweep<R: Rng>(st: &mut SpinAngles, a: f64, b: f64, p: u32, beta: f64, random_order: bool, rng: &mut R) -> SweepStats {
    let n = st.theta.len();
    let width = tf_width(a, b);
    let mut stats = SweepStats::default();
    for k in 0..n {
        let i = if random_order { rng.random_range(0..n) } else { k };
        let new = match st.variant {
            Variant::Svmc => rng.random_range(0.0..=PI),
            Variant::SvmcTf => (st.theta[i] + rng.random_range(-width..=width)).clamp(0.0, PI),
        };
        let de = delta_energy(st, i, new, a, b, p);
        stats.proposed += 1;
        if metropolis(de, beta, rng) {
            accept(st, i, new);
            stats.accepted += 1;
            stats.delta += de;
        }
    }
    st.sweeps += 1;
    stats
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmcConfig {
    pub n: usize,
    pub p: u32,
    pub schedule: Schedule,
    /// Reverse-anneal map with times in sweeps.
    pub protocol: Protocol,
    pub temperature: f64,
    pub variant: Variant,
    pub initial_bits: Vec<u8>,
    pub samples: usize,
    pub master: u64,
    pub workers: usize,
    pub random_order: bool,
}

impl SvmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p < 2 {
            return Err(Error::Invalid(format!("need N >= 1 and p >= 2 (got N={}, p={})", self.n, self.p)));
        }
        if self.initial_bits.len() != self.n || self.initial_bits.iter().any(|&b| b > 1) {
            return Err(Error::Invalid(format!("initial pattern must have {} bits", self.n)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.samples == 0 {
            return Err(Error::Invalid("need at least one sample".into()));
        }
        self.protocol.validate()
    }

    pub fn sweeps(&self) -> usize {
        self.protocol.duration().round() as usize
    }
}

/// Probability estimate with its 2σ half-width `2√(p(1−p)/K)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub p: f64,
    pub two_sigma: f64,
}

impl Estimate {
    pub fn from_count(hits: usize, k: usize) -> Self {
        let p = hits as f64 / k as f64;
        Self { p, two_sigma: 2.0 * (p * (1.0 - p) / k as f64).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmcResult {
    pub total: Estimate,
    pub all_up: Estimate,
    pub all_down: Estimate,
    pub sweeps: usize,
    pub acceptance: f64,
}

/// One sample: sweep `k` runs at `s(k + 1)` so the last sweep sits at s = 1.
pub fn run_sample(cfg: &SvmcConfig, index: u64) -> Result<(Vec<u8>, SweepStats)> {
    let mut rng = stream_rng(cfg.master, index);
    let mut st = SpinAngles::from_bits(&cfg.initial_bits, cfg.variant);
    let beta = 1.0 / cfg.temperature;
    let total = cfg.protocol.duration();
    let mut acc = SweepStats::default();
    for k in 0..cfg.sweeps() {
        let s = cfg.protocol.s_at((k as f64 + 1.0).min(total))?;
        let (a, b) = cfg.schedule.eval(s)?;
        let out = sweep(&mut st, a, b, cfg.p, beta, cfg.random_order, &mut rng);
        acc.accepted += out.accepted;
        acc.proposed += out.proposed;
        if k % 1024 == 1023 {
            st.refresh();
        }
    }
    Ok((st.bits(), acc))
}

pub fn run_reverse_anneal(cfg: &SvmcConfig) -> Result<SvmcResult> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let runs: Vec<Result<(Vec<u8>, SweepStats)>> =
        pool.install(|| (0..cfg.samples).into_par_iter().map(|k| run_sample(cfg, k as u64)).collect());
    let (mut up, mut down, mut accepted, mut proposed) = (0, 0, 0, 0);
    for r in runs {
        let (bits, st) = r?;
        if bits.iter().all(|&b| b == 0) {
            up += 1;
        } else if bits.iter().all(|&b| b == 1) {
            down += 1;
        }
        accepted += st.accepted;
        proposed += st.proposed;
    }
    let k = cfg.samples;
    Ok(SvmcResult {
        total: Estimate::from_count(up + down, k),
        all_up: Estimate::from_count(up, k),
        all_down: Estimate::from_count(down, k),
        sweeps: cfg.sweeps(),
        acceptance: if proposed > 0 { accepted as f64 / proposed as f64 } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Second implementation: explicit magnetization vector.
    fn energy_oracle(theta: &[f64], a: f64, b: f64, p: u32) -> f64 {
        let n = theta.len() as f64;
        let (mut mx, mut mz) = (0.0, 0.0);
        for t in theta {
            mx += t.sin();
            mz += t.cos();
        }
        -(a / 2.0) * mx - (b * n / 2.0) * (mz / n).powf(p as f64)
    }

    #[test]
    fn aligned_and_transverse_limits() {
        let sch = Schedule::linear(3.0, 7.0).unwrap();
        let (_, b1) = sch.eval(1.0).unwrap();
        assert_eq!(classical_energy(&[0.0; 4], 0.0, b1, 2), -b1 * 4.0 / 2.0);
        let (a0, b0) = sch.eval(0.0).unwrap();
        assert!((classical_energy(&[PI / 2.0; 4], a0, b0, 2) + a0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_flip_quadratic_difference() {
        let st = SpinAngles::from_bits(&[0, 0, 0, 0], Variant::Svmc);
        let b = 2.0;
        // m: 1 → 1/2, so ΔE = −(BN/2)(1/4 − 1).
        let want = -(b * 4.0 / 2.0) * (0.25 - 1.0);
        assert!((delta_energy(&st, 2, PI, 0.0, b, 2) - want).abs() < 1e-12);
        assert_eq!(delta_energy(&st, 1, 0.0, 1.0, b, 2), 0.0);
    }

    proptest! {
        #[test]
        fn incremental_matches_full(theta in proptest::collection::vec(0.0f64..PI, 1..9), i in 0usize..8, new in 0.0f64..PI, a in 0.0f64..5.0, b in 0.0f64..5.0, p in 2u32..5) {
            let i = i % theta.len();
            let st = SpinAngles::new(theta.clone(), Variant::Svmc);
            let mut moved = theta.clone();
            moved[i] = new;
            let full = energy_oracle(&moved, a, b, p) - energy_oracle(&theta, a, b, p);
            prop_assert!((delta_energy(&st, i, new, a, b, p) - full).abs() < 1e-12);
            prop_assert!((classical_energy(&theta, a, b, p) - energy_oracle(&theta, a, b, p)).abs() < 1e-12);
        }

        #[test]
        fn sweeps_keep_bookkeeping_and_bounds(seed in 0u64..1000, a in 0.01f64..5.0, b in 0.01f64..5.0, tf in proptest::bool::ANY) {
            let variant = if tf { Variant::SvmcTf } else { Variant::Svmc };
            let mut st = SpinAngles::from_bits(&[0, 1, 0, 1, 1], variant);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let before = st.theta.clone();
                let e0 = classical_energy(&st.theta, a, b, 3);
                let out = sweep(&mut st, a, b, 3, 0.7, false, &mut rng);
                let e1 = classical_energy(&st.theta, a, b, 3);
                prop_assert!((e1 - e0 - out.delta).abs() < 1e-9);
                prop_assert!(st.theta.iter().all(|t| (0.0..=PI).contains(t)));
                if tf {
                    let w = tf_width(a, b);
                    prop_assert!(st.theta.iter().zip(&before).all(|(x, y)| (x - y).abs() <= w + 1e-15));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn downhill_moves_always_accepted(de in -1e3f64..=0.0, beta in 0.0f64..1e6, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert!(metropolis(de, beta, &mut rng));
        }
    }

    #[test]
    fn tf_freezes_without_transverse_field() {
        let mut st = SpinAngles::from_bits(&[0, 0, 0, 1], Variant::SvmcTf);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            sweep(&mut st, 0.0, 1.0, 2, 1.0, false, &mut rng);
        }
        assert_eq!(st.theta, vec![0.0, 0.0, 0.0, PI]);
    }

    #[test]
    fn tf_window_scales_with_field_ratio() {
        assert_eq!(tf_width(2.0, 1.0), PI);
        assert!((tf_width(0.5, 2.0) - 0.25 * PI).abs() < 1e-15);
        assert_eq!(tf_width(1.0, 0.0), PI);
        let mut st = SpinAngles::new(vec![0.01, PI - 0.01], Variant::SvmcTf);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            sweep(&mut st, 1.0, 1.0, 2, 0.0, false, &mut rng);
            assert!(st.theta.iter().all(|t| (0.0..=PI).contains(t)));
        }
    }

    /// Occupancy of the two half-circles for rotor 0 against the Boltzmann
    /// weight `exp(−βE) dθ_0 dθ_1` (uniform proposals on [0, π]).
    #[test]
    fn two_bin_occupancy_matches_boltzmann() {
        let (a, b, beta, p) = (1.0, 2.0, 1.0, 3);
        let m = 400;
        let h = PI / m as f64;
        let (mut left, mut all) = (0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                let th = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                let w = (-beta * energy_oracle(&th, a, b, p)).exp();
                all += w;
                if th[0] <= PI / 2.0 {
                    left += w;
                }
            }
        }
        let want = left / all;
        let mut st = SpinAngles::new(vec![2.5, 2.5], Variant::Svmc);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            sweep(&mut st, a, b, p, beta, false, &mut rng);
        }
        let n = 200_000;
        let mut hits = 0usize;
        for _ in 0..n {
            sweep(&mut st, a, b, p, beta, false, &mut rng);
            hits += usize::from(st.theta[0] <= PI / 2.0);
        }
        let got = hits as f64 / n as f64;
        // Sweeps are correlated; allow a generous multiple of the iid error.
        let se = (want * (1.0 - want) / n as f64).sqrt();
        assert!((got - want).abs() < 10.0 * se, "{got} vs {want} (se {se})");
    }

    fn cfg(variant: Variant, tau: f64, s_inv: f64, samples: usize) -> SvmcConfig {
        SvmcConfig {
            n: 4,
            p: 2,
            schedule: Schedule::bundled(),
            protocol: Protocol::ira_experimental(tau, s_inv, 0.0),
            temperature: 1.57,
            variant,
            initial_bits: vec![0, 0, 0, 1],
            samples,
            master: 5,
            workers: 1,
            random_order: false,
        }
    }

    #[test]
    fn tf_stays_stuck_and_svmc_flips() {
        let tf = run_reverse_anneal(&cfg(Variant::SvmcTf, 1e3, 0.9, 500)).unwrap();
        assert!(tf.total.p < 0.05);
        let sv = run_reverse_anneal(&cfg(Variant::Svmc, 1e3, 0.9, 500)).unwrap();
        assert!(sv.total.p > 0.5);
        assert_eq!(sv.sweeps, 200);
    }

    #[test]
    fn deterministic_across_workers() {
        let mut c = cfg(Variant::Svmc, 100.0, 0.5, 64);
        let a = run_reverse_anneal(&c).unwrap();
        c.workers = 3;
        assert_eq!(a, run_reverse_anneal(&c).unwrap());
    }
}
