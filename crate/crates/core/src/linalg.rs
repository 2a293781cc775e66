//! Small dense complex linear-algebra helpers on top of nalgebra.
//!
//! Qubit 0 is the most significant bit of a computational basis index, and
//! bit value 0 is the σ^z = +1 ("up") state.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn sigma_x() -> CMat {
    CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn sigma_y() -> CMat {
    CMat::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn sigma_z() -> CMat {
    CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

/// `op` acting on qubit `site` of an `n`-qubit register.
pub fn site_op(op: &CMat, site: usize, n: usize) -> CMat {
    let mut out = CMat::identity(1, 1);
    for q in 0..n {
        let factor = if q == site { op.clone() } else { CMat::identity(2, 2) };
        out = out.kronecker(&factor);
    }
    out
}

/// Diagonal operator from a real diagonal.
pub fn diag(d: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(d.len(), d.iter().map(|&x| C64::new(x, 0.0))))
}

pub fn basis_state(dim: usize, index: usize) -> CVec {
    let mut v = CVec::zeros(dim);
    v[index] = ONE;
    v
}

/// Largest entrywise deviation from Hermiticity.
pub fn hermitian_residual(h: &CMat) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..h.ncols() {
        for i in 0..h.nrows() {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst
}

fn is_real(h: &CMat) -> bool {
    h.iter().all(|z| z.im == 0.0)
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted
/// ascending. Real symmetric input takes a faster real path.
pub fn eigh(h: &CMat) -> (Vec<f64>, CMat) {
    let n = h.nrows();
    let (values, vectors): (Vec<f64>, CMat) = if is_real(h) {
        let re = h.map(|z| z.re);
        let eig = SymmetricEigen::new(re);
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors.map(|x| C64::new(x, 0.0)))
    } else {
        let eig = SymmetricEigen::new(h.clone());
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted_vals = order.iter().map(|&k| values[k]).collect();
    let mut sorted_vecs = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        sorted_vecs.set_column(dst, &vectors.column(src));
    }
    (sorted_vals, sorted_vecs)
}

/// exp(−i·h·t) for Hermitian h, built from its eigendecomposition so the
/// result is unitary to rounding.
pub fn expm_hermitian(h: &CMat, t: f64) -> CMat {
    let (vals, vecs) = eigh(h);
    let phases: Vec<C64> = vals.iter().map(|&e| C64::from_polar(1.0, -e * t)).collect();
    let mut scaled = vecs.clone();
    for (j, ph) in phases.iter().enumerate() {
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= ph;
        }
    }
    scaled * vecs.adjoint()
}

/// General matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / C64::new(2f64.powi(squarings), 0.0);
    let mut term = CMat::identity(n, n);
    let mut sum = CMat::identity(n, n);
    for k in 1..=18 {
        term = &term * &scaled / C64::new(k as f64, 0.0);
        sum += &term;
        if term.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Spectral (largest singular value) norm.
pub fn op_norm(a: &CMat) -> f64 {
    let gram = a.adjoint() * a;
    let (vals, _) = eigh(&gram);
    vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Trace distance ½‖a − b‖₁ between Hermitian matrices.
pub fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    let d = a - b;
    let herm = (&d + d.adjoint()) * C64::new(0.5, 0.0);
    let (vals, _) = eigh(&herm);
    0.5 * vals.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn trace(a: &CMat) -> C64 {
    (0..a.nrows()).map(|i| a[(i, i)]).sum()
}

/// Smallest eigenvalue of the Hermitian part.
pub fn min_eigenvalue(a: &CMat) -> f64 {
    let herm = (a + a.adjoint()) * C64::new(0.5, 0.0);
    eigh(&herm).0.first().copied().unwrap_or(0.0)
}

pub fn outer(psi: &CVec) -> CMat {
    psi * psi.adjoint()
}

/// Bit `q` of basis index `idx` in an `n`-qubit register (qubit 0 = MSB).
pub fn bit(idx: usize, q: usize, n: usize) -> usize {
    (idx >> (n - 1 - q)) & 1
}

/// Polar factor U of a square matrix (closest unitary), via the
/// eigendecomposition of M†M.
pub fn polar_unitary(m: &CMat) -> CMat {
    let gram = m.adjoint() * m;
    let (vals, vecs) = eigh(&gram);
    let n = m.nrows();
    let mut inv_sqrt = CMat::zeros(n, n);
    for (k, &v) in vals.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        let w = if s > 1e-300 { 1.0 / s } else { 0.0 };
        inv_sqrt[(k, k)] = C64::new(w, 0.0);
    }
    m * (&vecs * inv_sqrt * vecs.adjoint())
}
