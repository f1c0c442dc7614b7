//! Seed fan-out and inversion samplers.
//!
//! Every stochastic routine in the crate derives its generator from a base
//! seed and a stream index, so results never depend on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream index into an independent 64-bit seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index.wrapping_mul(GOLDEN).rotate_left(17))
}

/// Generator for stream `index` under `base`.
pub fn stream_rng(base: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, index))
}

/// Counter-based uniform in (0, 1): a pure function of `(base, index)`.
pub fn counter_uniform(base: u64, index: u64) -> f64 {
    ((derive_seed(base, index) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Inverse-CDF binomial draw for a given uniform `u`.
///
/// Monotone non-decreasing in `u`, so common random numbers stay coupled.
pub fn binomial_inv(n: u64, p: f64, u: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    // work on the short tail so the starting mass does not underflow
    if p > 0.5 {
        return n - binomial_inv(n, 1.0 - p, 1.0 - u);
    }
    let q = 1.0 - p;
    let log_p0 = n as f64 * q.ln();
    if log_p0 > -700.0 {
        let ratio = p / q;
        let mut pmf = log_p0.exp();
        let mut cdf = pmf;
        let mut k = 0u64;
        while cdf < u && k < n {
            pmf *= ratio * (n - k) as f64 / (k + 1) as f64;
            k += 1;
            cdf += pmf;
            if pmf == 0.0 && k as f64 > n as f64 * p {
                break;
            }
        }
        return k;
    }
    let lp = p.ln();
    let lq = q.ln();
    let lnf = ln_gamma(n as f64 + 1.0);
    let (m, sd) = (n as f64 * p, (n as f64 * p * q).sqrt());
    let lo = (m - 40.0 * sd - 1.0).max(0.0) as u64;
    let hi = ((m + 40.0 * sd + 1.0).ceil() as u64).min(n);
    invert_from_logpmf(lo, hi, u, |k| {
        lnf - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0) + k as f64 * lp + (n - k) as f64 * lq
    })
}

/// Inverse-CDF Poisson draw for a given uniform `u`.
pub fn poisson_inv(mean: f64, u: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 600.0 {
        let mut pmf = (-mean).exp();
        let mut cdf = pmf;
        let mut k = 0u64;
        while cdf < u {
            k += 1;
            pmf *= mean / k as f64;
            cdf += pmf;
            if pmf == 0.0 && k as f64 > mean {
                break;
            }
        }
        return k;
    }
    let lo = (mean - 40.0 * mean.sqrt()).max(0.0) as u64;
    let hi = (mean + 40.0 * mean.sqrt()).ceil() as u64;
    let lm = mean.ln();
    invert_from_logpmf(lo, hi, u, |k| k as f64 * lm - mean - ln_gamma(k as f64 + 1.0))
}

// Inversion over lo..=hi using a log-pmf, normalised on the fly so large
// supports do not underflow. The window holds all but a negligible tail.
fn invert_from_logpmf(lo: u64, hi: u64, u: f64, logpmf: impl Fn(u64) -> f64) -> u64 {
    let logs: Vec<f64> = (lo..=hi).map(&logpmf).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if acc >= target {
            return lo + k as u64;
        }
    }
    hi
}
