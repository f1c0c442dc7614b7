//! Ontology-aware zero-inflated negative binomial shrinker.
//!
//! Within an AE group, λ_ij is zero with probability p_i and otherwise
//! Gamma(shape r, scale μ_i/r); counts are Poisson(E_ij λ_ij). The group
//! parameters are fitted by maximum likelihood with a shared r, after which
//! each cell gets the posterior mean of λ_ij.
//!
//! Given r, the likelihood separates over drugs, so the fit profiles r: an
//! outer scalar search over log r, and for each candidate an independent
//! two-parameter search per drug over (logit p_i, log μ_i).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::contingency::{ContingencyTable, ExpectedCounts, OntologyMap};
use crate::error::{Error, Result};
use crate::optim::{brent, nelder_mead, NelderMeadOptions};

/// Largest admissible excess-zero probability.
pub const P_MAX: f64 = 1.0 - 1e-8;
pub const R_CAP: f64 = 1e6;
pub const R_MIN: f64 = 1e-3;
const MU_MIN: f64 = 1e-10;
const MU_MAX: f64 = 1e6;

// ln Γ(n + r) - ln Γ(r)
fn ln_rising(r: f64, n: u64) -> f64 {
    if n < 64 {
        (0..n).map(|k| (r + k as f64).ln()).sum()
    } else {
        ln_gamma(r + n as f64) - ln_gamma(r)
    }
}

fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// Log-pmf of the NB with mean `m` and dispersion `r` (variance m + m²/r).
pub fn nb_mean_logpmf(n: u64, r: f64, m: f64) -> f64 {
    let tail = -r * (m / r).ln_1p();
    if n == 0 {
        return tail;
    }
    if m == 0.0 {
        return f64::NEG_INFINITY;
    }
    ln_rising(r, n) - ln_factorial(n) + tail + n as f64 * (m / (r + m)).ln()
}

/// Zero-inflated NB log-probability of a count with exposure `e`.
pub fn zinb_logpmf(n: u64, e: f64, r: f64, p: f64, mu: f64) -> f64 {
    let m = e * mu;
    if n == 0 {
        if p >= 1.0 {
            return 0.0;
        }
        let nb0 = nb_mean_logpmf(0, r, m).exp();
        (p + (1.0 - p) * nb0).ln()
    } else {
        if p >= 1.0 {
            return f64::NEG_INFINITY;
        }
        (-p).ln_1p() + nb_mean_logpmf(n, r, m)
    }
}

/// Posterior probability that λ is the structural zero, given n = 0.
pub fn posterior_zero_mass(e: f64, p: f64, mu: f64, r: f64) -> f64 {
    zero_mass_split(e, p, mu, r).0
}

// (π, 1 − π), each computed without cancellation.
fn zero_mass_split(e: f64, p: f64, mu: f64, r: f64) -> (f64, f64) {
    if p <= 0.0 {
        return (0.0, 1.0);
    }
    let nb0 = (-r * (e * mu / r).ln_1p()).exp();
    let total = p + (1.0 - p) * nb0;
    (p / total, (1.0 - p) * nb0 / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeLevelEstimate {
    pub lambda_hat: f64,
    /// Zero for observed cells.
    pub pi_hat: f64,
}

/// Posterior mean of λ for one cell.
pub fn eb_lambda(n: u64, e: f64, p: f64, mu: f64, r: f64) -> AeLevelEstimate {
    let denom = r + e * mu;
    if n == 0 {
        let (pi_hat, rest) = zero_mass_split(e, p, mu, r);
        AeLevelEstimate {
            lambda_hat: rest * r * mu / denom,
            pi_hat,
        }
    } else {
        AeLevelEstimate {
            lambda_hat: mu * (r + n as f64) / denom,
            pi_hat: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ZinbInit {
    /// Observed zero fraction (clipped to [0.05, 0.95]) for p, mean of n/E
    /// over positive cells for μ, and r = 2.
    Moments,
    Given { p: Vec<f64>, mu: Vec<f64>, r: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZinbOptions {
    pub init: ZinbInit,
    /// Relative tolerance of the per-drug simplex searches.
    pub tol: f64,
    /// Iteration cap of each per-drug simplex search.
    pub max_iter: usize,
    /// Absolute tolerance on log r for the outer search.
    pub r_tol: f64,
    /// Holds r at this value instead of estimating it.
    pub fixed_r: Option<f64>,
}

impl Default for ZinbOptions {
    fn default() -> Self {
        Self {
            init: ZinbInit::Moments,
            tol: 1e-10,
            max_iter: 1000,
            r_tol: 1e-5,
            fixed_r: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZinbGroupFit {
    pub group_id: String,
    pub drug_ids: Vec<String>,
    pub r_hat: f64,
    pub p_hat: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub s_hat: Vec<f64>,
    /// Cells that entered the likelihood for each drug.
    pub cells_per_drug: Vec<usize>,
    pub loglik: f64,
    pub converged: bool,
    /// r reached the cap, i.e. the data look Poisson.
    pub poisson_like: bool,
}

impl ZinbGroupFit {
    pub fn estimate(&self, drug: usize, n: u64, e: f64) -> AeLevelEstimate {
        eb_lambda(n, e, self.p_hat[drug], self.mu_hat[drug], self.r_hat)
    }
}

// Per-drug cells with positive exposure.
struct DrugCells {
    zeros: Vec<f64>,
    positives: Vec<(u64, f64)>,
}

impl DrugCells {
    fn len(&self) -> usize {
        self.zeros.len() + self.positives.len()
    }

    fn moment_start(&self) -> (f64, f64) {
        let total = self.len();
        let p = if total == 0 {
            0.5
        } else {
            (self.zeros.len() as f64 / total as f64).clamp(0.05, 0.95)
        };
        let mu = if self.positives.is_empty() {
            1.0
        } else {
            self.positives.iter().map(|&(n, e)| n as f64 / e).sum::<f64>() / self.positives.len() as f64
        };
        (p, mu.clamp(MU_MIN, MU_MAX))
    }

    // Log-likelihood up to the count-only constant Σ[ln Γ(n+r) - ln Γ(r) - ln n!],
    // which `constant` supplies.
    fn loglik(&self, r: f64, p: f64, mu: f64) -> f64 {
        let mut ll = 0.0;
        for &e in &self.zeros {
            let nb0 = (-r * (e * mu / r).ln_1p()).exp();
            ll += (p + (1.0 - p) * nb0).ln();
        }
        let l1p = (-p).ln_1p();
        for &(n, e) in &self.positives {
            let m = e * mu;
            ll += l1p - r * (m / r).ln_1p() + n as f64 * (m / (r + m)).ln();
        }
        ll
    }

    fn constant(&self, r: f64) -> f64 {
        self.positives
            .iter()
            .map(|&(n, _)| ln_rising(r, n) - ln_factorial(n))
            .sum()
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn p_from(u: f64) -> f64 {
    (1.0 / (1.0 + (-u).exp())).min(P_MAX)
}

const U_LO: f64 = -30.0;
fn u_hi() -> f64 {
    logit(P_MAX)
}

struct DrugFit {
    p: f64,
    mu: f64,
    ll: f64,
    converged: bool,
}

fn fit_drug(cells: &DrugCells, r: f64, start: (f64, f64), opts: &ZinbOptions) -> Result<DrugFit> {
    if cells.len() == 0 {
        return Ok(DrugFit {
            p: start.0,
            mu: start.1,
            ll: 0.0,
            converged: true,
        });
    }
    let hi = u_hi();
    let unpack = |x: &[f64]| (p_from(x[0].clamp(U_LO, hi)), x[1].clamp(MU_MIN.ln(), MU_MAX.ln()).exp());
    let nm = NelderMeadOptions {
        tol: opts.tol,
        max_iter: opts.max_iter,
        step: 0.5,
        restarts: 1,
    };
    let x0 = [logit(start.0.clamp(1e-6, P_MAX)), start.1.ln()];
    let m = nelder_mead(
        |x| {
            let (p, mu) = unpack(x);
            -cells.loglik(r, p, mu)
        },
        &x0,
        &nm,
    )?;
    let (p, mu) = unpack(&m.x);
    Ok(DrugFit {
        p,
        mu,
        ll: -m.value,
        converged: m.converged,
    })
}

struct GroupData {
    group_id: String,
    drug_ids: Vec<String>,
    drugs: Vec<DrugCells>,
}

impl GroupData {
    fn starts(&self, init: &ZinbInit) -> Result<(Vec<(f64, f64)>, f64)> {
        match init {
            ZinbInit::Moments => Ok((self.drugs.iter().map(DrugCells::moment_start).collect(), 2.0)),
            ZinbInit::Given { p, mu, r } => {
                if p.len() != self.drugs.len() || mu.len() != self.drugs.len() {
                    return Err(Error::invalid("initial values must have one entry per drug"));
                }
                Ok((p.iter().copied().zip(mu.iter().copied()).collect(), *r))
            }
        }
    }

    fn profile(&self, r: f64, starts: &[(f64, f64)], opts: &ZinbOptions) -> Result<(f64, Vec<DrugFit>)> {
        let mut total = 0.0;
        let mut fits = Vec::with_capacity(self.drugs.len());
        for (cells, &start) in self.drugs.iter().zip(starts) {
            let f = fit_drug(cells, r, start, opts)?;
            total += f.ll + cells.constant(r);
            fits.push(f);
        }
        Ok((total, fits))
    }

    fn fit(&self, opts: &ZinbOptions) -> Result<ZinbGroupFit> {
        if self.drugs.iter().all(|d| d.positives.is_empty()) {
            return Err(Error::DegenerateGroup {
                group: self.group_id.clone(),
            });
        }
        let (starts, r0) = self.starts(&opts.init)?;
        let (r_hat, outer_ok) = match opts.fixed_r {
            Some(r) => (r.clamp(R_MIN, R_CAP), true),
            None => self.search_r(&starts, r0, opts)?,
        };
        let (_, fits) = self.profile(r_hat, &starts, opts)?;
        let p_hat: Vec<f64> = fits.iter().map(|f| f.p).collect();
        let mu_hat: Vec<f64> = fits.iter().map(|f| f.mu).collect();
        let s_hat = p_hat.iter().zip(&mu_hat).map(|(p, m)| (1.0 - p) * m).collect();
        let mut loglik = 0.0;
        for (d, cells) in self.drugs.iter().enumerate() {
            for &e in &cells.zeros {
                loglik += zinb_logpmf(0, e, r_hat, p_hat[d], mu_hat[d]);
            }
            for &(n, e) in &cells.positives {
                loglik += zinb_logpmf(n, e, r_hat, p_hat[d], mu_hat[d]);
            }
        }
        Ok(ZinbGroupFit {
            group_id: self.group_id.clone(),
            drug_ids: self.drug_ids.clone(),
            r_hat,
            p_hat,
            mu_hat,
            s_hat,
            cells_per_drug: self.drugs.iter().map(DrugCells::len).collect(),
            loglik,
            converged: outer_ok && fits.iter().all(|f| f.converged),
            poisson_like: r_hat >= R_CAP * (1.0 - 1e-9),
        })
    }

    // Coarse grid over log r, then Brent inside the best bracket.
    fn search_r(&self, starts: &[(f64, f64)], r0: f64, opts: &ZinbOptions) -> Result<(f64, bool)> {
        let lo = R_MIN.ln();
        let hi = R_CAP.ln();
        let steps = 20;
        let mut grid: Vec<f64> = (0..=steps).map(|k| lo + (hi - lo) * k as f64 / steps as f64).collect();
        grid.push(r0.clamp(R_MIN, R_CAP).ln());
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let mut values = Vec::with_capacity(grid.len());
        for &x in &grid {
            values.push(self.profile(x.exp(), starts, opts)?.0);
        }
        let best = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .expect("grid is nonempty");
        if best == grid.len() - 1 {
            return Ok((R_CAP, true));
        }
        let a = grid[best.saturating_sub(1)];
        let b = grid[(best + 1).min(grid.len() - 1)];
        let m = brent(
            |x| Ok(-self.profile(x.exp(), starts, opts)?.0),
            a,
            b,
            opts.r_tol,
            200,
        )?;
        let (x, ok) = if -m.value >= values[best] {
            (m.x, m.converged)
        } else {
            (grid[best], m.converged)
        };
        Ok((x.exp().clamp(R_MIN, R_CAP), ok))
    }
}

fn group_data(
    group_id: &str,
    table: &ContingencyTable,
    expected: &ExpectedCounts,
    cols: &[usize],
    mask: Option<&[bool]>,
) -> Result<GroupData> {
    let mut drugs = Vec::with_capacity(table.n_drugs());
    for i in 0..table.n_drugs() {
        let mut zeros = Vec::new();
        let mut positives = Vec::new();
        for &j in cols {
            let k = i * table.n_aes() + j;
            if mask.is_some_and(|m| !m[k]) {
                continue;
            }
            let n = table.counts()[k];
            let e = expected.values()[k];
            if e <= 0.0 {
                if n > 0 {
                    return Err(Error::StructuralZero {
                        drug: table.drug_ids()[i].clone(),
                        ae: table.ae_ids()[j].clone(),
                    });
                }
                // probability one at n = 0; contributes nothing
                continue;
            }
            if n == 0 {
                zeros.push(e);
            } else {
                positives.push((n, e));
            }
        }
        drugs.push(DrugCells { zeros, positives });
    }
    Ok(GroupData {
        group_id: group_id.to_string(),
        drug_ids: table.drug_ids().to_vec(),
        drugs,
    })
}

/// Fits one group given its sub-table (all drugs × the group's AEs).
pub fn fit_zinb_group(
    group_id: &str,
    subtable: &ContingencyTable,
    sub_expected: &ExpectedCounts,
    opts: &ZinbOptions,
) -> Result<ZinbGroupFit> {
    sub_expected.check_shape(subtable)?;
    let cols: Vec<usize> = (0..subtable.n_aes()).collect();
    group_data(group_id, subtable, sub_expected, &cols, None)?.fit(opts)
}

/// Result of fitting every AE group of a table.
#[derive(Debug, Clone, Serialize)]
pub struct ZgpsFit {
    pub drug_ids: Vec<String>,
    pub ae_ids: Vec<String>,
    pub group_ids: Vec<String>,
    /// Group index of each column.
    pub column_group: Vec<usize>,
    /// One entry per group; failures carry their message.
    pub groups: Vec<std::result::Result<ZinbGroupFit, String>>,
    /// Row-major I × J; `None` where the group failed or the cell was masked
    /// and its drug had no fitted cells in the group.
    pub estimates: Vec<Option<AeLevelEstimate>>,
}

impl ZgpsFit {
    pub fn successful(&self) -> impl Iterator<Item = &ZinbGroupFit> {
        self.groups.iter().filter_map(|g| g.as_ref().ok())
    }

    pub fn failures(&self) -> Vec<(String, String)> {
        self.groups
            .iter()
            .zip(&self.group_ids)
            .filter_map(|(g, id)| g.as_ref().err().map(|e| (id.clone(), e.clone())))
            .collect()
    }

    /// s-hat as a drugs × groups matrix (row-major); `None` for failed groups.
    pub fn s_matrix(&self) -> Vec<Option<f64>> {
        let k = self.group_ids.len();
        let mut out = vec![None; self.drug_ids.len() * k];
        for (g, fit) in self.groups.iter().enumerate() {
            if let Ok(fit) = fit {
                for (i, s) in fit.s_hat.iter().enumerate() {
                    out[i * k + g] = Some(*s);
                }
            }
        }
        out
    }

    pub fn all_converged(&self) -> bool {
        self.groups.iter().all(|g| g.as_ref().is_ok_and(|f| f.converged))
    }
}

/// Fits each ontology group independently.
pub fn fit_all_groups(
    table: &ContingencyTable,
    expected: &ExpectedCounts,
    ontology: &OntologyMap,
    opts: &ZinbOptions,
) -> Result<ZgpsFit> {
    fit_all_groups_masked(table, expected, ontology, None, opts)
}

/// As [`fit_all_groups`], with only cells where `mask` is true entering the
/// likelihood. Masked-out cells get the prior mean of their drug and group.
pub fn fit_all_groups_masked(
    table: &ContingencyTable,
    expected: &ExpectedCounts,
    ontology: &OntologyMap,
    mask: Option<&[bool]>,
    opts: &ZinbOptions,
) -> Result<ZgpsFit> {
    expected.check_shape(table)?;
    if let Some(m) = mask {
        if m.len() != table.counts().len() {
            return Err(Error::ShapeMismatch("mask length".into()));
        }
    }
    let (group_ids, column_group) = ontology.column_groups(table)?;
    let members: Vec<Vec<usize>> = (0..group_ids.len())
        .map(|g| (0..table.n_aes()).filter(|&j| column_group[j] == g).collect())
        .collect();
    let groups: Vec<std::result::Result<ZinbGroupFit, String>> = group_ids
        .par_iter()
        .zip(members.par_iter())
        .map(|(gid, cols)| {
            group_data(gid, table, expected, cols, mask)
                .and_then(|d| d.fit(opts))
                .map_err(|e| e.to_string())
        })
        .collect();

    let cols = table.n_aes();
    let mut estimates = vec![None; table.counts().len()];
    for (k, slot) in estimates.iter_mut().enumerate() {
        let (i, j) = (k / cols, k % cols);
        if let Ok(fit) = &groups[column_group[j]] {
            let e = expected.values()[k];
            let observed = mask.is_none_or(|m| m[k]);
            *slot = if observed {
                Some(fit.estimate(i, table.counts()[k], e))
            } else if fit.cells_per_drug[i] > 0 {
                Some(AeLevelEstimate {
                    lambda_hat: fit.s_hat[i],
                    pi_hat: fit.p_hat[i],
                })
            } else {
                None
            };
        }
    }
    Ok(ZgpsFit {
        drug_ids: table.drug_ids().to_vec(),
        ae_ids: table.ae_ids().to_vec(),
        group_ids,
        column_group,
        groups,
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gps::nb_logpmf;

    #[test]
    fn zinb_boundaries() {
        assert_eq!(zinb_logpmf(0, 1.3, 2.0, 1.0, 0.7), 0.0);
        assert_eq!(zinb_logpmf(3, 1.3, 2.0, 1.0, 0.7), f64::NEG_INFINITY);
        for n in 0..6 {
            let (e, r, mu) = (1.7, 3.5, 0.8);
            let m = e * mu;
            let a = zinb_logpmf(n, e, r, 0.0, mu);
            let b = nb_logpmf(n, r, m / (r + m));
            assert!((a - b).abs() < 1e-12, "{n}: {a} vs {b}");
        }
    }

    #[test]
    fn zinb_normalises() {
        for &(e, r, p, mu) in &[(1.0, 5.0, 0.3, 1.2), (0.1, 0.5, 0.0, 4.0), (8.0, 50.0, 0.9, 0.3)] {
            let s: f64 = (0..4000).map(|n| zinb_logpmf(n, e, r, p, mu).exp()).sum();
            assert!((s - 1.0).abs() < 1e-6, "{s}");
        }
    }

    #[test]
    fn zero_mass_edges() {
        assert_eq!(posterior_zero_mass(2.0, 0.0, 1.5, 4.0), 0.0);
        assert!((posterior_zero_mass(0.0, 0.37, 1.5, 4.0) - 0.37).abs() < 1e-15);
    }

    #[test]
    fn zero_mass_matches_bayes_rule() {
        let (p, e, mu, r) = (0.3, 2.0, 1.5, 4.0);
        let marginal0 = zinb_logpmf(0, e, r, p, mu).exp();
        let oracle = p * 1.0 / marginal0;
        assert!((posterior_zero_mass(e, p, mu, r) - oracle).abs() < 1e-12);
    }

    #[test]
    fn eb_lambda_examples() {
        let a = eb_lambda(1, 1.0, 0.77, 1.0, 1.0);
        assert!((a.lambda_hat - 1.0).abs() < 1e-15);
        assert_eq!(a.pi_hat, 0.0);
        let b = eb_lambda(0, 2.0, 1.0, 1.3, 4.0);
        assert_eq!(b.pi_hat, 1.0);
        assert_eq!(b.lambda_hat, 0.0);
    }

    fn table(rows: usize, counts: Vec<u64>) -> ContingencyTable {
        let cols = counts.len() / rows;
        ContingencyTable::from_counts(
            (0..rows).map(|i| format!("d{i}")).collect(),
            (0..cols).map(|j| format!("a{j:03}")).collect(),
            counts,
        )
        .unwrap()
    }

    #[test]
    fn all_zero_group_is_degenerate() {
        let t = table(2, vec![0; 6]);
        let e = ExpectedCounts::from_values(2, 3, vec![1.0; 6]).unwrap();
        let err = fit_zinb_group("G", &t, &e, &ZinbOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateGroup { .. }));
    }

    #[test]
    fn all_zero_drug_stays_finite() {
        let t = table(2, vec![0, 0, 0, 0, 0, 3, 1, 0, 2, 5]);
        let e = ExpectedCounts::from_values(2, 5, vec![1.0; 10]).unwrap();
        let fit = fit_zinb_group("G", &t, &e, &ZinbOptions::default()).unwrap();
        assert!(fit.loglik.is_finite());
        assert!(fit.s_hat[0] < 1e-3, "{:?}", fit);
        assert!(fit.p_hat.iter().all(|&p| p <= P_MAX));
        for (s, (p, m)) in fit.s_hat.iter().zip(fit.p_hat.iter().zip(&fit.mu_hat)) {
            assert_eq!(*s, (1.0 - p) * m);
        }
    }

    #[test]
    fn structural_zero_with_count_is_rejected() {
        let t = table(1, vec![1, 2]);
        let e = ExpectedCounts::from_values(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            fit_zinb_group("G", &t, &e, &ZinbOptions::default()),
            Err(Error::StructuralZero { .. })
        ));
    }

    #[test]
    fn single_group_equals_direct_fit() {
        let t = table(2, vec![0, 1, 4, 0, 2, 0, 0, 3, 1, 0, 0, 6]);
        let e = ExpectedCounts::from_values(2, 6, (0..12).map(|k| 0.5 + 0.2 * k as f64).collect()).unwrap();
        let onto = OntologyMap::single_group(t.ae_ids().iter().cloned(), "G");
        let all = fit_all_groups(&t, &e, &onto, &ZinbOptions::default()).unwrap();
        let one = fit_zinb_group("G", &t, &e, &ZinbOptions::default()).unwrap();
        assert_eq!(all.groups[0].as_ref().unwrap(), &one);
        for k in 0..12 {
            let est = one.estimate(k / 6, t.counts()[k], e.values()[k]);
            assert_eq!(all.estimates[k], Some(est));
        }
    }
}
