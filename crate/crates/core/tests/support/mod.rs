#![allow(dead_code)]

//! Brute-force numerical oracles, written without reference to the library's
//! closed forms.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use pvsignal::contingency::{IcsrReport, OntologyMap, ReportSet};
use statrs::function::gamma::ln_gamma;

/// Integral over the real line of `w(t) exp(logf(t))` where `exp(logf)` is
/// unimodal near `t0`. The trapezoid rule converges geometrically for such
/// smooth, rapidly decaying integrands.
pub fn trapezoid_weighted(logf: impl Fn(f64) -> f64, w: impl Fn(f64) -> f64, t0: f64, h: f64) -> f64 {
    let peak = logf(t0);
    let mut total = w(t0);
    for dir in [-1.0, 1.0] {
        let mut k = 1.0;
        loop {
            let t = t0 + dir * k * h;
            let v = (logf(t) - peak).exp();
            total += w(t) * v;
            if (v < 1e-22 && k * h > 1.0) || k * h > 5000.0 {
                break;
            }
            k += 1.0;
        }
    }
    total * h * peak.exp()
}

/// As [`trapezoid_weighted`] with unit weight: the integral of `exp(logf(ln x))`
/// over `x > 0` when `logf` already includes the Jacobian.
pub fn integrate_log_scale(logf: impl Fn(f64) -> f64, t0: f64, h: f64) -> f64 {
    trapezoid_weighted(logf, |_| 1.0, t0, h)
}

/// Adaptive Simpson on [a, b].
pub fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

pub fn log_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

fn log_poisson(n: u64, mean: f64) -> f64 {
    n as f64 * mean.ln() - mean - ln_gamma(n as f64 + 1.0)
}

/// Zero-inflated gamma prior on λ: mass `p` at zero, otherwise gamma with
/// shape `r` and mean `mu`. Returns (posterior mean of λ, posterior mass at
/// zero) after observing `n ~ Poisson(e λ)`.
pub fn zinb_posterior_oracle(n: u64, e: f64, r: f64, p: f64, mu: f64) -> (f64, f64) {
    let rate = r / mu;
    // log of λ^{k} prior(λ) lik(n | λ) in t = ln λ, including the Jacobian λ
    let part = |k: f64| {
        move |t: f64| {
            let x = t.exp();
            log_gamma_pdf(x, r, rate) + log_poisson(n, e * x) + k * t + t
        }
    };
    let mode = |k: f64| ((r + n as f64 + k) / (rate + e)).ln();
    let h = 0.01 / (1.0 + ((r + n as f64).sqrt()));
    let z_cont = (1.0 - p) * integrate_log_scale(part(0.0), mode(0.0), h);
    let m_cont = (1.0 - p) * integrate_log_scale(part(1.0), mode(1.0), h);
    let z_zero = if n == 0 { p } else { 0.0 };
    let z = z_cont + z_zero;
    (m_cont / z, z_zero / z)
}

/// Two-gamma mixture prior, Poisson likelihood with exposure `e`.
pub struct GpsOracle {
    a1: f64,
    b1: f64,
    a2: f64,
    b2: f64,
    n: f64,
    e: f64,
    // log weight plus gamma normalising constant of each component
    c1: f64,
    c2: f64,
    z: f64,
}

impl GpsOracle {
    pub fn new(a1: f64, b1: f64, a2: f64, b2: f64, w: f64, n: u64, e: f64) -> Self {
        let mut o = Self {
            a1,
            b1,
            a2,
            b2,
            n: n as f64,
            e,
            c1: w.ln() + a1 * b1.ln() - ln_gamma(a1),
            c2: (1.0 - w).ln() + a2 * b2.ln() - ln_gamma(a2),
            z: 1.0,
        };
        o.z = integrate_log_scale(|t| o.log_density(t), o.center(), o.h());
        o
    }

    // log of prior × likelihood × Jacobian at λ = e^t, up to a constant
    fn log_density(&self, t: f64) -> f64 {
        let x = t.exp();
        let l1 = self.c1 + (self.a1 - 1.0) * t - self.b1 * x;
        let l2 = self.c2 + (self.a2 - 1.0) * t - self.b2 * x;
        let hi = l1.max(l2);
        hi + ((l1 - hi).exp() + (l2 - hi).exp()).ln() + self.n * t - self.e * x + t
    }

    fn center(&self) -> f64 {
        let w = self.c1.exp() / (self.c1.exp() + self.c2.exp());
        let m1 = (self.a1 + self.n) / (self.b1 + self.e);
        let m2 = (self.a2 + self.n) / (self.b2 + self.e);
        (w * m1 + (1.0 - w) * m2).ln()
    }

    fn h(&self) -> f64 {
        0.005 / (1.0 + self.n.sqrt())
    }

    /// Posterior mean of log2 λ.
    pub fn e_log2(&self) -> f64 {
        let c = self.center();
        let centred = trapezoid_weighted(|t| self.log_density(t), |t| t - c, c, self.h()) / self.z;
        (centred + c) / std::f64::consts::LN_2
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let f = |t: f64| self.log_density(t).exp();
        let t_hi = x.ln();
        let mut a = t_hi.min(self.center()) - 1.0;
        while f(a) > 1e-30 * self.z && a > -2000.0 {
            a -= 1.0;
        }
        simpson(&f, a, t_hi, 1e-13 * self.z) / self.z
    }

    /// Bisection on [`GpsOracle::cdf`].
    pub fn quantile(&self, prob: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, self.center().exp() * 2.0);
        while self.cdf(hi) < prob {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < prob {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-10 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Reports with one drug and one AE each, given as (drug, ae) pairs.
pub fn single_pair_reports(pairs: &[(&str, &str)]) -> ReportSet {
    let reports = pairs
        .iter()
        .enumerate()
        .map(|(k, (d, a))| IcsrReport::new(format!("R{k}"), [*d], [*a]).unwrap())
        .collect();
    ReportSet::new(reports).unwrap()
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..left.len() {
            let x = left.remove(i);
            prefix.push(x);
            go(prefix, left, out);
            prefix.pop();
            left.insert(i, x);
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut (0..n).collect(), &mut out);
    out
}

/// Writes `reports.csv` and `ontology.csv` into `dir`.
pub fn write_inputs(dir: &Path, reports: &ReportSet, ontology: &OntologyMap) {
    let mut f = std::fs::File::create(dir.join("reports.csv")).unwrap();
    writeln!(f, "report_id,drugs,events").unwrap();
    for r in reports.reports() {
        let join = |s: &std::collections::BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(";");
        writeln!(f, "{},{},{}", r.report_id, join(&r.drugs), join(&r.events)).unwrap();
    }
    let mut f = std::fs::File::create(dir.join("ontology.csv")).unwrap();
    writeln!(f, "ae_id,group_id").unwrap();
    for (a, g) in ontology.iter() {
        writeln!(f, "{a},{g}").unwrap();
    }
}

/// Every file under `dir` except manifests, keyed by relative path.
pub fn output_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if name != "manifest.json" && p.is_file() {
            out.insert(name, std::fs::read(&p).unwrap());
        }
    }
    out
}
