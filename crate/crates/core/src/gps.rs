//! Gamma-Poisson Shrinker.
//!
//! Counts are Poisson(E·λ) with λ drawn from a two-component gamma mixture
//! (shape/rate parameterisation). The hyperparameters are fitted by
//! maximising the marginal negative-binomial mixture likelihood, and each
//! cell is summarised by its posterior: EBlog2, EBGM and posterior quantiles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};

use crate::contingency::{ContingencyTable, ExpectedCounts};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Log-pmf of the negative binomial with `shape` and success parameter `q`:
/// `Γ(n+shape)/(n! Γ(shape)) q^n (1-q)^shape`.
///
/// With `q = E/(E+β)` this is the marginal of Poisson(E·λ), λ ~ Gamma(shape, rate β).
pub fn nb_logpmf(n: u64, shape: f64, q: f64) -> f64 {
    debug_assert!(shape > 0.0 && (0.0..1.0).contains(&q));
    let nf = n as f64;
    let tail = shape * (-q).ln_1p();
    if n == 0 {
        return tail;
    }
    if q == 0.0 {
        return f64::NEG_INFINITY;
    }
    ln_gamma(nf + shape) - ln_gamma(shape) - ln_gamma(nf + 1.0) + nf * q.ln() + tail
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Prior hyperparameters θ = (α1, β1, α2, β2, ω).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsHyper {
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub omega: f64,
}

impl Default for GpsHyper {
    fn default() -> Self {
        Self {
            alpha1: 0.2,
            beta1: 0.1,
            alpha2: 2.0,
            beta2: 4.0,
            omega: 1.0 / 3.0,
        }
    }
}

impl GpsHyper {
    /// `omega` may sit on the closed boundary, which turns the mixture into a
    /// single gamma prior.
    pub fn new(alpha1: f64, beta1: f64, alpha2: f64, beta2: f64, omega: f64) -> Result<Self> {
        let h = Self {
            alpha1,
            beta1,
            alpha2,
            beta2,
            omega,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [self.alpha1, self.beta1, self.alpha2, self.beta2];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("gamma shapes and rates must be positive"));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::invalid("omega must lie in [0, 1]"));
        }
        Ok(())
    }

    fn to_unconstrained(self) -> [f64; 5] {
        let w = self.omega.clamp(1e-12, 1.0 - 1e-12);
        [
            self.alpha1.ln(),
            self.beta1.ln(),
            self.alpha2.ln(),
            self.beta2.ln(),
            (w / (1.0 - w)).ln(),
        ]
    }

    fn from_unconstrained(x: &[f64]) -> Self {
        let c = |v: f64| v.clamp(-25.0, 25.0);
        Self {
            alpha1: c(x[0]).exp(),
            beta1: c(x[1]).exp(),
            alpha2: c(x[2]).exp(),
            beta2: c(x[3]).exp(),
            omega: 1.0 / (1.0 + (-c(x[4])).exp()),
        }
    }

    /// Swaps components so the first has the smaller prior mean.
    pub fn ordered(self) -> Self {
        if self.alpha1 / self.beta1 <= self.alpha2 / self.beta2 {
            self
        } else {
            Self {
                alpha1: self.alpha2,
                beta1: self.beta2,
                alpha2: self.alpha1,
                beta2: self.beta1,
                omega: 1.0 - self.omega,
            }
        }
    }

    /// Log marginal probability of one cell under the mixture.
    pub fn cell_loglik(&self, n: u64, e: f64) -> f64 {
        let c1 = nb_logpmf(n, self.alpha1, e / (e + self.beta1));
        let c2 = nb_logpmf(n, self.alpha2, e / (e + self.beta2));
        log_add_exp(self.omega.ln() + c1, (1.0 - self.omega).ln() + c2)
    }
}

// Cells grouped by count so the lgamma terms are computed once per distinct n.
struct CellData {
    distinct: Vec<u64>,
    // (index into distinct, E, original cell index)
    cells: Vec<(usize, f64, usize)>,
}

impl CellData {
    fn new(counts: &[u64], expected: &[f64]) -> Self {
        let mut distinct: Vec<u64> = counts.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let cells = counts
            .iter()
            .zip(expected)
            .enumerate()
            .map(|(k, (n, &e))| (distinct.binary_search(n).expect("present"), e, k))
            .collect();
        Self { distinct, cells }
    }

    fn loglik(&self, theta: &GpsHyper) -> std::result::Result<f64, usize> {
        let lg = |shape: f64| -> Vec<f64> {
            let base = ln_gamma(shape);
            self.distinct
                .iter()
                .map(|&n| ln_gamma(n as f64 + shape) - base - ln_gamma(n as f64 + 1.0))
                .collect()
        };
        let g1 = lg(theta.alpha1);
        let g2 = lg(theta.alpha2);
        let lw1 = theta.omega.ln();
        let lw2 = (1.0 - theta.omega).ln();
        let mut total = 0.0;
        for &(d, e, k) in &self.cells {
            let n = self.distinct[d] as f64;
            let part = |g: f64, beta: f64, alpha: f64| -> f64 {
                let tail = alpha * (beta / (e + beta)).ln();
                if n == 0.0 {
                    tail
                } else if e == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    g + n * (e / (e + beta)).ln() + tail
                }
            };
            let c1 = part(g1[d], theta.beta1, theta.alpha1);
            let c2 = part(g2[d], theta.beta2, theta.alpha2);
            let v = log_add_exp(lw1 + c1, lw2 + c2);
            if !v.is_finite() {
                return Err(k);
            }
            total += v;
        }
        Ok(total)
    }
}

/// Σ over cells of the log marginal mixture probability.
pub fn gps_marginal_loglik(table: &ContingencyTable, expected: &ExpectedCounts, theta: &GpsHyper) -> Result<f64> {
    expected.check_shape(table)?;
    theta.validate()?;
    let cols = table.n_aes();
    CellData::new(table.counts(), expected.values())
        .loglik(theta)
        .map_err(|k| Error::LikelihoodOverflow {
            row: k / cols,
            col: k % cols,
        })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpsFit {
    pub theta: GpsHyper,
    pub loglik: f64,
    pub init_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub tol: f64,
}

/// Maximises the marginal likelihood with Nelder-Mead on
/// (log α1, log β1, log α2, log β2, logit ω).
pub fn fit_gps(
    table: &ContingencyTable,
    expected: &ExpectedCounts,
    init: &GpsHyper,
    tol: f64,
    max_iter: usize,
) -> Result<GpsFit> {
    fit_gps_cells(table.counts(), expected.values(), init, tol, max_iter, table.n_aes())
}

pub(crate) fn fit_gps_cells(
    counts: &[u64],
    expected: &[f64],
    init: &GpsHyper,
    tol: f64,
    max_iter: usize,
    cols: usize,
) -> Result<GpsFit> {
    if tol <= 0.0 {
        return Err(Error::invalid("tol must be positive"));
    }
    if counts.len() != expected.len() {
        return Err(Error::ShapeMismatch("counts vs expected".into()));
    }
    init.validate()?;
    let data = CellData::new(counts, expected);
    let init_loglik = data.loglik(init).map_err(|k| Error::LikelihoodOverflow {
        row: k / cols.max(1),
        col: k % cols.max(1),
    })?;
    let opts = NelderMeadOptions {
        tol,
        max_iter,
        step: 0.5,
        restarts: 2,
    };
    let objective = |x: &[f64]| -> f64 {
        let theta = GpsHyper::from_unconstrained(x);
        match data.loglik(&theta) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };
    let m = nelder_mead(objective, &init.to_unconstrained(), &opts)?;
    let mut theta = GpsHyper::from_unconstrained(&m.x);
    let mut loglik = -m.value;
    // the clamp in the transform can make the start unreachable exactly
    if loglik < init_loglik {
        theta = *init;
        loglik = init_loglik;
    }
    Ok(GpsFit {
        theta: theta.ordered(),
        loglik,
        init_loglik,
        converged: m.converged,
        iterations: m.iterations,
        evaluations: m.evaluations,
        tol,
    })
}

/// Posterior of λ for one cell: a two-component gamma mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsCellPosterior {
    pub omega_star: f64,
    pub shape1: f64,
    pub rate1: f64,
    pub shape2: f64,
    pub rate2: f64,
    pub eb_log2: f64,
    pub ebgm: f64,
}

impl GpsCellPosterior {
    pub fn mean(&self) -> f64 {
        self.omega_star * self.shape1 / self.rate1 + (1.0 - self.omega_star) * self.shape2 / self.rate2
    }

    pub fn cdf(&self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        let mut v = 0.0;
        if self.omega_star > 0.0 {
            v += self.omega_star * gamma_lr(self.shape1, self.rate1 * lambda);
        }
        if self.omega_star < 1.0 {
            v += (1.0 - self.omega_star) * gamma_lr(self.shape2, self.rate2 * lambda);
        }
        v
    }

    /// Quantile by bisection on `[0, upper]`, doubling `upper` until it
    /// brackets `prob`.
    pub fn quantile(&self, prob: f64) -> Result<f64> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::invalid("quantile probability must lie in (0, 1)"));
        }
        let mut hi = self.mean().max(1e-300) * 2.0;
        let mut doublings = 0;
        while self.cdf(hi) < prob {
            hi *= 2.0;
            doublings += 1;
            if doublings > 60 {
                return Err(Error::QuantileBracket);
            }
        }
        let mut lo = 0.0;
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < prob {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

pub fn gps_posterior(n: u64, e: f64, theta: &GpsHyper) -> GpsCellPosterior {
    let shape1 = theta.alpha1 + n as f64;
    let shape2 = theta.alpha2 + n as f64;
    let rate1 = theta.beta1 + e;
    let rate2 = theta.beta2 + e;
    let omega_star = if theta.omega >= 1.0 {
        1.0
    } else if theta.omega <= 0.0 {
        0.0
    } else {
        let l1 = theta.omega.ln() + nb_logpmf(n, theta.alpha1, e / (e + theta.beta1));
        let l2 = (1.0 - theta.omega).ln() + nb_logpmf(n, theta.alpha2, e / (e + theta.beta2));
        1.0 / (1.0 + (l2 - l1).exp())
    };
    let mut elog = 0.0;
    if omega_star > 0.0 {
        elog += omega_star * (digamma(shape1) - rate1.ln());
    }
    if omega_star < 1.0 {
        elog += (1.0 - omega_star) * (digamma(shape2) - rate2.ln());
    }
    let eb_log2 = elog / std::f64::consts::LN_2;
    GpsCellPosterior {
        omega_star,
        shape1,
        rate1,
        shape2,
        rate2,
        eb_log2,
        ebgm: eb_log2.exp2(),
    }
}

pub fn posterior_quantile(n: u64, e: f64, theta: &GpsHyper, prob: f64) -> Result<f64> {
    gps_posterior(n, e, theta).quantile(prob)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpsSignal {
    pub drug_id: String,
    pub ae_id: String,
    pub n: u64,
    pub expected: f64,
    pub ebgm: f64,
    pub lower: f64,
    pub upper: f64,
    pub is_signal: bool,
}

/// Flags cells whose lower posterior quantile (at `lower_prob`) exceeds
/// `rr_threshold`; `upper` is the quantile at `1 - lower_prob`.
pub fn gps_signals(
    table: &ContingencyTable,
    expected: &ExpectedCounts,
    theta: &GpsHyper,
    rr_threshold: f64,
    lower_prob: f64,
) -> Result<Vec<GpsSignal>> {
    expected.check_shape(table)?;
    if !(rr_threshold > 0.0) || !(lower_prob > 0.0 && lower_prob < 0.5) {
        return Err(Error::invalid("rr_threshold must be positive and lower_prob in (0, 0.5)"));
    }
    let cols = table.n_aes();
    (0..table.counts().len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            let n = table.counts()[k];
            let e = expected.values()[k];
            let post = gps_posterior(n, e, theta);
            let lower = post.quantile(lower_prob)?;
            let upper = post.quantile(1.0 - lower_prob)?;
            Ok(GpsSignal {
                drug_id: table.drug_ids()[i].clone(),
                ae_id: table.ae_ids()[j].clone(),
                n,
                expected: e,
                ebgm: post.ebgm,
                lower,
                upper,
                is_signal: lower > rr_threshold,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nb_zero_count() {
        assert!((nb_logpmf(0, 2.0, 0.5) - 0.25f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn nb_geometric_case() {
        // shape 1: P(n) = q^n (1-q) -> 0.5^4
        assert!((nb_logpmf(3, 1.0, 0.5) - 0.0625f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn nb_normalises() {
        for &(shape, q) in &[(0.2, 0.3), (2.0, 0.8), (7.5, 0.05)] {
            let s: f64 = (0..5000).map(|n| nb_logpmf(n, shape, q).exp()).sum();
            assert!((s - 1.0).abs() < 1e-10, "{shape} {q} {s}");
        }
    }

    fn table(counts: Vec<u64>, cols: usize) -> ContingencyTable {
        let rows = counts.len() / cols;
        ContingencyTable::from_counts(
            (0..rows).map(|i| format!("d{i}")).collect(),
            (0..cols).map(|j| format!("a{j:03}")).collect(),
            counts,
        )
        .unwrap()
    }

    #[test]
    fn omega_one_is_single_component() {
        let t = table(vec![0, 3, 1, 7], 2);
        let e = ExpectedCounts::from_values(2, 2, vec![0.5, 1.5, 2.0, 3.0]).unwrap();
        let th = GpsHyper::new(1.3, 0.7, 9.0, 9.0, 1.0).unwrap();
        let ll = gps_marginal_loglik(&t, &e, &th).unwrap();
        let direct: f64 = t
            .counts()
            .iter()
            .zip(e.values())
            .map(|(&n, &x)| nb_logpmf(n, 1.3, x / (x + 0.7)))
            .sum();
        assert!((ll - direct).abs() < 1e-12);
    }

    #[test]
    fn duplicated_cell_doubles_contribution() {
        let th = GpsHyper::default();
        let one = gps_marginal_loglik(
            &table(vec![4], 1),
            &ExpectedCounts::from_values(1, 1, vec![1.7]).unwrap(),
            &th,
        )
        .unwrap();
        let two = gps_marginal_loglik(
            &table(vec![4, 4], 2),
            &ExpectedCounts::from_values(1, 2, vec![1.7, 1.7]).unwrap(),
            &th,
        )
        .unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn observation_with_zero_expectation_overflows() {
        let t = table(vec![0, 2], 2);
        let e = ExpectedCounts::from_values(1, 2, vec![1.0, 0.0]).unwrap();
        let err = gps_marginal_loglik(&t, &e, &GpsHyper::default()).unwrap_err();
        assert!(matches!(err, Error::LikelihoodOverflow { row: 0, col: 1 }));
    }

    #[test]
    fn degenerate_and_collapsed_posteriors() {
        let th = GpsHyper::new(0.2, 0.1, 2.0, 4.0, 1.0).unwrap();
        assert_eq!(gps_posterior(4, 1.0, &th).omega_star, 1.0);

        let same = GpsHyper::new(1.5, 2.0, 1.5, 2.0, 0.3).unwrap();
        let p = gps_posterior(6, 2.5, &same);
        assert!((p.omega_star - 0.3).abs() < 1e-12);
        assert!((p.mean() - (1.5 + 6.0) / (2.0 + 2.5)).abs() < 1e-12);
        assert!((p.ebgm - p.eb_log2.exp2()).abs() == 0.0);
    }

    #[test]
    fn quantiles_are_monotone_and_hit_cdf() {
        let th = GpsHyper::default();
        let post = gps_posterior(5, 1.0, &th);
        let mut last = 0.0;
        for &p in &[0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99] {
            let q = post.quantile(p).unwrap();
            assert!(q > last);
            assert!((post.cdf(q) - p).abs() < 1e-8);
            last = q;
        }
        assert!(post.quantile(0.0).is_err());
        assert!(post.quantile(1.0).is_err());
    }

    #[test]
    fn ordering_swaps_labels() {
        let th = GpsHyper::new(5.0, 1.0, 1.0, 2.0, 0.2).unwrap().ordered();
        assert_eq!((th.alpha1, th.beta1, th.alpha2, th.beta2), (1.0, 2.0, 5.0, 1.0));
        assert!((th.omega - 0.8).abs() < 1e-15);
    }

    #[test]
    fn fit_improves_and_is_a_fixed_point() {
        let counts: Vec<u64> = (0..60).map(|k| [0, 0, 1, 0, 2, 5, 0, 1, 0, 12][k % 10]).collect();
        let exp: Vec<f64> = (0..60).map(|k| 0.3 + 0.1 * (k % 7) as f64).collect();
        let t = table(counts, 10);
        let e = ExpectedCounts::from_values(6, 10, exp).unwrap();
        let fit = fit_gps(&t, &e, &GpsHyper::default(), 1e-10, 4000).unwrap();
        assert!(fit.loglik >= fit.init_loglik);
        let again = fit_gps(&t, &e, &fit.theta, 1e-10, 4000).unwrap();
        assert!((again.loglik - fit.loglik).abs() < 1e-6 * fit.loglik.abs());
    }

    #[test]
    fn signal_rule() {
        let t = table(vec![0, 40], 2);
        let e = ExpectedCounts::from_values(1, 2, vec![1e-3, 2.0]).unwrap();
        let th = GpsHyper::default();
        let s = gps_signals(&t, &e, &th, 2.0, 0.01).unwrap();
        assert!(!s[0].is_signal);
        assert!(s[0].lower < 2.0);
        assert!(s[1].is_signal);
        let stricter = gps_signals(&t, &e, &th, 50.0, 0.01).unwrap();
        assert!(stricter.iter().zip(&s).all(|(a, b)| !a.is_signal || b.is_signal));
    }
}
