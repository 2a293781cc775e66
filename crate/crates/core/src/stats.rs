//! Sample statistics shared by the ensemble engines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent counter-based stream for member `index` of a run seeded by `master`.
pub fn stream_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Stream reserved for resampling so it never collides with member streams.
pub const BOOTSTRAP_STREAM: u64 = u64::MAX;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the sample mean, σ̂² = Σ(x_r − M̂)² / (R(R−1)).
/// Undefined (None) for fewer than two samples.
pub fn standard_error(xs: &[f64]) -> Option<f64> {
    let r = xs.len();
    if r < 2 {
        return None;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (r as f64 * (r as f64 - 1.0))).sqrt())
}

/// Two-sided percentile interval of bootstrap means at the 2σ level
/// (2.275% and 97.725% quantiles).
pub fn bootstrap_interval<R: Rng>(xs: &[f64], resamples: usize, rng: &mut R) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || resamples == 0 {
        return None;
    }
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (resamples - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        means[lo] * (1.0 - w) + means[hi] * w
    };
    Some((q(0.02275), q(0.97725)))
}

/// Least-squares slope and intercept of y against x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
