//! Dormand–Prince 5(4) integrator for complex state vectors with
//! fourth-order dense output.

use crate::error::{Error, Result};
use crate::linalg::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on any step (ns).
    pub h_max: f64,
    /// Smallest step before declaring underflow.
    pub h_min: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, h_max: f64::INFINITY, h_min: 1e-14 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Right-hand side `dy = f(t, y)`.
pub trait Rhs {
    fn eval(&mut self, t: f64, y: &[C64], dy: &mut [C64]) -> Result<()>;
}

impl<F> Rhs for F
where
    F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
{
    fn eval(&mut self, t: f64, y: &[C64], dy: &mut [C64]) -> Result<()> {
        self(t, y, dy)
    }
}

/// Stepper state. After an accepted step, [`Dopri5::dense`] interpolates
/// anywhere inside `[t_prev, t]`.
pub struct Dopri5 {
    pub tol: Tolerances,
    pub t: f64,
    pub y: Vec<C64>,
    /// Suggested next step.
    pub h: f64,
    pub t_prev: f64,
    h_used: f64,
    k: [Vec<C64>; 7],
    rcont: [Vec<C64>; 5],
    scratch: Vec<C64>,
    y_new: Vec<C64>,
    pub accepted: usize,
    pub rejected: usize,
}

fn axpy_into(out: &mut [C64], base: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for i in 0..out.len() {
        let mut acc = C64::new(0.0, 0.0);
        for (c, k) in terms {
            if *c != 0.0 {
                acc += k[i] * *c;
            }
        }
        out[i] = base[i] + acc * h;
    }
}

impl Dopri5 {
    pub fn new<F: Rhs>(f: &mut F, t0: f64, y0: Vec<C64>, tol: Tolerances) -> Result<Self> {
        let n = y0.len();
        let mut k: [Vec<C64>; 7] = std::array::from_fn(|_| vec![C64::new(0.0, 0.0); n]);
        f.eval(t0, &y0, &mut k[0])?;
        let rcont = std::array::from_fn(|_| vec![C64::new(0.0, 0.0); n]);
        let mut s = Self {
            tol,
            t: t0,
            y: y0,
            h: 0.0,
            t_prev: t0,
            h_used: 0.0,
            k,
            rcont,
            scratch: vec![C64::new(0.0, 0.0); n],
            y_new: vec![C64::new(0.0, 0.0); n],
            accepted: 0,
            rejected: 0,
        };
        s.h = s.initial_step();
        Ok(s)
    }

    fn weighted_norm(&self, v: &[C64], ref_a: &[C64], ref_b: &[C64]) -> f64 {
        let n = v.len().max(1);
        let sum: f64 = (0..v.len())
            .map(|i| {
                let sc = self.tol.atol + self.tol.rtol * ref_a[i].norm().max(ref_b[i].norm());
                (v[i].norm() / sc).powi(2)
            })
            .sum();
        (sum / n as f64).sqrt()
    }

    fn initial_step(&self) -> f64 {
        let d0 = self.weighted_norm(&self.y, &self.y, &self.y);
        let d1 = self.weighted_norm(&self.k[0], &self.y, &self.y);
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(self.tol.h_max)
    }

    /// Attempts one step of size `h`. Returns `true` when accepted; the
    /// suggested next step is left in `self.h` either way.
    pub fn try_step<F: Rhs>(&mut self, f: &mut F, h: f64) -> Result<bool> {
        let t = self.t;
        if h < self.tol.h_min {
            return Err(Error::Integration { t, reason: format!("step size underflow (h = {h:e})") });
        }
        let n = self.y.len();
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        axpy_into(&mut self.scratch, &self.y, h, &[(A21, &k1[..])]);
        f.eval(t + C2 * h, &self.scratch, k2)?;
        axpy_into(&mut self.scratch, &self.y, h, &[(A31, &k1[..]), (A32, &k2[..])]);
        f.eval(t + C3 * h, &self.scratch, k3)?;
        axpy_into(&mut self.scratch, &self.y, h, &[(A41, &k1[..]), (A42, &k2[..]), (A43, &k3[..])]);
        f.eval(t + C4 * h, &self.scratch, k4)?;
        axpy_into(&mut self.scratch, &self.y, h, &[(A51, &k1[..]), (A52, &k2[..]), (A53, &k3[..]), (A54, &k4[..])]);
        f.eval(t + C5 * h, &self.scratch, k5)?;
        axpy_into(&mut self.scratch, &self.y, h, &[(A61, &k1[..]), (A62, &k2[..]), (A63, &k3[..]), (A64, &k4[..]), (A65, &k5[..])]);
        f.eval(t + h, &self.scratch, k6)?;
        axpy_into(&mut self.y_new, &self.y, h, &[(A71, &k1[..]), (A73, &k3[..]), (A74, &k4[..]), (A75, &k5[..]), (A76, &k6[..])]);
        f.eval(t + h, &self.y_new, k7)?;
        let mut err = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            err[i] = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
        }
        let en = self.weighted_norm(&err, &self.y, &self.y_new);
        if !en.is_finite() {
            self.rejected += 1;
            self.h = h * 0.2;
            return Ok(false);
        }
        let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
        if en <= 1.0 {
            let [k1, _, k3, k4, k5, k6, k7] = &self.k;
            for i in 0..n {
                let ydiff = self.y_new[i] - self.y[i];
                let bspl = k1[i] * h - ydiff;
                self.rcont[0][i] = self.y[i];
                self.rcont[1][i] = ydiff;
                self.rcont[2][i] = bspl;
                self.rcont[3][i] = ydiff - k7[i] * h - bspl;
                self.rcont[4][i] = (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * h;
            }
            std::mem::swap(&mut self.y, &mut self.y_new);
            self.k.swap(0, 6);
            self.t_prev = t;
            self.t = t + h;
            self.h_used = h;
            self.h = (h * fac).min(self.tol.h_max);
            self.accepted += 1;
            Ok(true)
        } else {
            self.rejected += 1;
            self.h = h * fac.min(1.0);
            Ok(false)
        }
    }

    /// Dense output at `t` within the last accepted step.
    pub fn dense(&self, t: f64, out: &mut [C64]) {
        if self.h_used == 0.0 {
            out.copy_from_slice(&self.y);
            return;
        }
        let th = ((t - self.t_prev) / self.h_used).clamp(0.0, 1.0);
        let th1 = 1.0 - th;
        let r = &self.rcont;
        for i in 0..out.len() {
            out[i] = r[0][i] + (r[1][i] + (r[2][i] + (r[3][i] + r[4][i] * th1) * th) * th1) * th;
        }
    }

    /// Derivative at the current point (FSAL slot).
    pub fn derivative(&self) -> &[C64] {
        &self.k[0]
    }

    /// Restarts from a new state at the same time, discarding dense data.
    pub fn reset<F: Rhs>(&mut self, f: &mut F, t: f64, y: Vec<C64>) -> Result<()> {
        self.t = t;
        self.t_prev = t;
        self.y = y;
        self.h_used = 0.0;
        f.eval(t, &self.y, &mut self.k[0])?;
        Ok(())
    }
}

/// Integrates from `t0` to the last entry of `grid`, returning the state at
/// each grid time (grid must be ascending and start at or after `t0`).
pub fn integrate<F: Rhs>(f: &mut F, t0: f64, y0: Vec<C64>, grid: &[f64], tol: Tolerances) -> Result<Vec<Vec<C64>>> {
    let mut out = Vec::with_capacity(grid.len());
    let n = y0.len();
    let mut st = Dopri5::new(f, t0, y0, tol)?;
    let mut gi = 0;
    while gi < grid.len() && grid[gi] <= st.t {
        out.push(st.y.clone());
        gi += 1;
    }
    let t_end = match grid.last() {
        Some(&t) => t,
        None => return Ok(out),
    };
    while gi < grid.len() {
        let remaining = t_end - st.t;
        let mut h = st.h.min(remaining);
        if remaining - h < 1e-12 * t_end.abs().max(1.0) {
            h = remaining;
        }
        st.try_step(f, h)?;
        while gi < grid.len() && grid[gi] <= st.t + 1e-12 * t_end.abs().max(1.0) {
            let mut y = vec![C64::new(0.0, 0.0); n];
            if grid[gi] >= st.t {
                y.copy_from_slice(&st.y);
            } else {
                st.dense(grid[gi], &mut y);
            }
            out.push(y);
            gi += 1;
        }
    }
    Ok(out)
}
