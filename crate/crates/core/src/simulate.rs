//! Synthetic data with known reporting rates.
//!
//! Simulation I: one AE group, three drugs, varying group size, with and
//! without gamma dispersion. Simulation II: twelve drugs, 175 AEs in six
//! groups, zGPS against GPS. Iteration `b` draws from `stream_rng(seed, b)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contingency::{ContingencyTable, ExpectedCounts, IcsrReport, OntologyMap, ReportSet};
use crate::error::{Error, Result};
use crate::gps::{fit_gps, gps_posterior, GpsHyper};
use crate::metrics::{mse_dense, roc_auc, Roc};
use crate::rng::{derive_seed, open_unit, poisson_inv, stream_rng};
use crate::zgps::{fit_all_groups, fit_zinb_group, ZinbOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispersion {
    Finite(f64),
    /// Zero-inflated Poisson: the non-zero branch is exactly μ.
    Infinite,
}

fn draw_cell<R: Rng + ?Sized>(p: f64, mu: f64, dispersion: Dispersion, rng: &mut R) -> Result<f64> {
    if open_unit(rng) < p {
        return Ok(0.0);
    }
    match dispersion {
        Dispersion::Infinite => Ok(mu),
        Dispersion::Finite(r) => {
            let g = Gamma::new(r, mu / r).map_err(|e| Error::invalid(format!("gamma({r}, {mu}/{r}): {e}")))?;
            Ok(g.sample(rng))
        }
    }
}

fn check_params(p: f64, mu: f64, dispersion: Dispersion) -> Result<()> {
    if !(0.0..1.0).contains(&p) || !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("need p in [0, 1) and mu > 0, got p={p}, mu={mu}")));
    }
    if let Dispersion::Finite(r) = dispersion {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!("dispersion must be positive, got {r}")));
        }
    }
    Ok(())
}

/// Row-major `p.len() × cols` matrix of rates: zero with probability `p[i]`,
/// otherwise gamma with shape r and scale μ_i/r (or exactly μ_i when r is infinite).
pub fn draw_lambda<R: Rng + ?Sized>(
    p: &[f64],
    mu: &[f64],
    dispersion: Dispersion,
    cols: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if p.len() != mu.len() {
        return Err(Error::ShapeMismatch("p vs mu".into()));
    }
    for (&pi, &mi) in p.iter().zip(mu) {
        check_params(pi, mi, dispersion)?;
    }
    let mut out = Vec::with_capacity(p.len() * cols);
    for (&pi, &mi) in p.iter().zip(mu) {
        for _ in 0..cols {
            out.push(draw_cell(pi, mi, dispersion, rng)?);
        }
    }
    Ok(out)
}

/// Poisson(E·λ) counts by inversion.
pub fn draw_counts<R: Rng + ?Sized>(expected: &[f64], lambda: &[f64], rng: &mut R) -> Vec<u64> {
    expected
        .iter()
        .zip(lambda)
        .map(|(e, l)| poisson_inv(e * l, open_unit(rng)))
        .collect()
}

/// Generative truth of a simulated table.
#[derive(Debug, Clone, Serialize)]
pub struct SimTruth {
    pub drug_ids: Vec<String>,
    pub ae_ids: Vec<String>,
    pub group_ids: Vec<String>,
    pub ontology: OntologyMap,
    pub expected: ExpectedCounts,
    /// Row-major drugs × AEs.
    pub lambda: Vec<f64>,
    /// Per drug, shared by every group.
    pub p: Vec<f64>,
    pub mu: Vec<f64>,
    pub dispersion: Dispersion,
}

impl SimTruth {
    /// Group-level rates (1 − p)μ per drug.
    pub fn s(&self) -> Vec<f64> {
        self.p.iter().zip(&self.mu).map(|(p, m)| (1.0 - p) * m).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimDataset {
    pub truth: SimTruth,
    pub table: ContingencyTable,
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (1..=n).map(|k| format!("{prefix}{k:0width$}")).collect()
}

// ---------------------------------------------------------------------------
// Simulation I

pub const SIM1_R: f64 = 5.72;
pub const SIM1_P: [f64; 3] = [0.133, 0.350, 0.0669];
pub const SIM1_MU: [f64; 3] = [0.933, 1.30, 0.816];
pub const SIM1_GROUP_SIZES: [usize; 4] = [10, 20, 40, 80];

const SIM1_FIXTURE: &str = include_str!("../data/sim1_expected.csv");

/// The bundled 3 × 80 expected-count matrix used by Simulation I.
pub fn sim1_expected_fixture() -> Result<(Vec<String>, Vec<String>, ExpectedCounts)> {
    let mut rdr = csv::Reader::from_reader(SIM1_FIXTURE.as_bytes());
    let aes: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut drugs = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        drugs.push(rec[0].to_string());
        for v in rec.iter().skip(1) {
            values.push(v.parse::<f64>().map_err(|e| Error::invalid(format!("fixture value {v}: {e}")))?);
        }
    }
    let e = ExpectedCounts::from_values(drugs.len(), aes.len(), values)?;
    Ok((drugs, aes, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Standard,
    NoDispersion,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Standard => "standard",
            Scenario::NoDispersion => "no_dispersion",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Scenario::Standard),
            "no_dispersion" => Ok(Scenario::NoDispersion),
            other => Err(Error::invalid(format!("unknown scenario {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimIConfig {
    pub scenario: Scenario,
    pub group_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

/// One Simulation I dataset.
pub fn simulation_i_dataset(scenario: Scenario, group_size: usize, seed: u64, iteration: u64) -> Result<SimDataset> {
    let (drugs, aes, e_full) = sim1_expected_fixture()?;
    if group_size == 0 || group_size > aes.len() {
        return Err(Error::invalid(format!(
            "group size must lie in 1..={}, got {group_size}",
            aes.len()
        )));
    }
    let cols: Vec<usize> = (0..group_size).collect();
    let expected = e_full.select_columns(&cols);
    let ae_ids: Vec<String> = aes[..group_size].to_vec();
    let dispersion = match scenario {
        Scenario::Standard => Dispersion::Finite(SIM1_R),
        Scenario::NoDispersion => Dispersion::Infinite,
    };
    let mut rng = stream_rng(seed, iteration);
    let lambda = draw_lambda(&SIM1_P, &SIM1_MU, dispersion, group_size, &mut rng)?;
    let counts = draw_counts(expected.values(), &lambda, &mut rng);
    let table = ContingencyTable::from_counts(drugs.clone(), ae_ids.clone(), counts)?;
    Ok(SimDataset {
        truth: SimTruth {
            drug_ids: drugs,
            ontology: OntologyMap::single_group(ae_ids.iter().map(String::as_str), "G1"),
            ae_ids,
            group_ids: vec!["G1".into()],
            expected,
            lambda,
            p: SIM1_P.to_vec(),
            mu: SIM1_MU.to_vec(),
            dispersion,
        },
        table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimIIteration {
    pub iteration: usize,
    /// Mean over drugs of (ŝ − s)².
    pub group_mse: f64,
    /// Mean over cells of (λ̂ − λ)².
    pub ae_mse: f64,
    pub r_hat: f64,
    pub s_hat: Vec<f64>,
    pub converged: bool,
    /// Fit error, if the group could not be fitted.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimIResult {
    pub config: SimIConfig,
    pub iterations: Vec<SimIIteration>,
    pub median_group_mse: f64,
    pub median_ae_mse: f64,
    pub mean_group_mse: f64,
    pub mean_ae_mse: f64,
    pub n_failed: usize,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn sim1_iteration(cfg: &SimIConfig, b: usize, opts: &ZinbOptions) -> Result<SimIIteration> {
    let data = simulation_i_dataset(cfg.scenario, cfg.group_size, cfg.seed, b as u64)?;
    let truth = &data.truth;
    match fit_zinb_group("G1", &data.table, &truth.expected, opts) {
        Ok(fit) => {
            let group_mse = mse_dense(&fit.s_hat, &truth.s())?;
            let cols = data.table.n_aes();
            let lambda_hat: Vec<f64> = (0..data.table.counts().len())
                .map(|k| fit.estimate(k / cols, data.table.counts()[k], truth.expected.values()[k]).lambda_hat)
                .collect();
            Ok(SimIIteration {
                iteration: b,
                group_mse,
                ae_mse: mse_dense(&lambda_hat, &truth.lambda)?,
                r_hat: fit.r_hat,
                s_hat: fit.s_hat,
                converged: fit.converged,
                error: None,
            })
        }
        Err(e) if e.kind() != crate::error::ErrorKind::Config => Ok(SimIIteration {
            iteration: b,
            group_mse: f64::NAN,
            ae_mse: f64::NAN,
            r_hat: f64::NAN,
            s_hat: Vec::new(),
            converged: false,
            error: Some(e.to_string()),
        }),
        Err(e) => Err(e),
    }
}

/// Runs Simulation I; iterations that fail to fit are kept with their error
/// and left out of the summary statistics.
pub fn simulation_i(cfg: &SimIConfig, opts: &ZinbOptions) -> Result<SimIResult> {
    if cfg.iterations == 0 {
        return Err(Error::invalid("iterations must be positive"));
    }
    let iterations: Vec<SimIIteration> = (0..cfg.iterations)
        .into_par_iter()
        .map(|b| sim1_iteration(cfg, b, opts))
        .collect::<Result<_>>()?;
    let ok: Vec<&SimIIteration> = iterations.iter().filter(|it| it.error.is_none()).collect();
    let mut g: Vec<f64> = ok.iter().map(|it| it.group_mse).collect();
    let mut a: Vec<f64> = ok.iter().map(|it| it.ae_mse).collect();
    Ok(SimIResult {
        config: cfg.clone(),
        mean_group_mse: mean(&g),
        mean_ae_mse: mean(&a),
        median_group_mse: median(&mut g),
        median_ae_mse: median(&mut a),
        n_failed: iterations.len() - ok.len(),
        iterations,
    })
}

// ---------------------------------------------------------------------------
// Simulation II

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimIIConfig {
    pub iterations: usize,
    pub seed: u64,
    pub n_drugs: usize,
    pub group_sizes: Vec<usize>,
    pub r: f64,
    /// Upper end of the Uniform(0, p_max) draw for p.
    pub p_max: f64,
    /// Gamma shape and scale of μ.
    pub mu_shape: f64,
    pub mu_scale: f64,
    /// Mean zero fraction the E scale is calibrated to.
    pub zero_target: f64,
    pub pilot_datasets: usize,
    /// Log-scale spread of the drug and AE factors of the E template.
    pub drug_sigma: f64,
    pub ae_sigma: f64,
    /// A cell is a true signal when λ exceeds this.
    pub signal_threshold: f64,
}

impl Default for SimIIConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            seed: 1,
            n_drugs: 12,
            group_sizes: vec![45, 38, 30, 25, 20, 17],
            r: 5.0,
            p_max: 0.6,
            mu_shape: 5.0,
            mu_scale: 0.2,
            zero_target: 0.83,
            pilot_datasets: 20,
            drug_sigma: 0.3,
            ae_sigma: 0.5,
            signal_threshold: 2.0,
        }
    }
}

impl SimIIConfig {
    fn validate(&self) -> Result<()> {
        if self.n_drugs == 0 || self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return Err(Error::invalid("need at least one drug and non-empty groups"));
        }
        if !(self.zero_target > 0.0 && self.zero_target < 1.0) {
            return Err(Error::invalid("zero_target must lie in (0, 1)"));
        }
        if !(self.p_max > 0.0 && self.p_max < 1.0) || !(self.mu_shape > 0.0) || !(self.mu_scale > 0.0) || !(self.r > 0.0)
        {
            return Err(Error::invalid("invalid generator parameters"));
        }
        if !(self.drug_sigma >= 0.0) || !(self.ae_sigma >= 0.0) {
            return Err(Error::invalid("template spreads must be nonnegative"));
        }
        if self.pilot_datasets == 0 {
            return Err(Error::invalid("pilot_datasets must be positive"));
        }
        Ok(())
    }

    fn n_aes(&self) -> usize {
        self.group_sizes.iter().sum()
    }
}

// Stream indices reserved for the E template and the calibration pilots.
const TEMPLATE_STREAM: u64 = u64::MAX;
const PILOT_STREAM: u64 = u64::MAX - 1;

/// Rank-one log-normal template of the expected counts, before scaling.
fn e_template(cfg: &SimIIConfig) -> Vec<f64> {
    let mut rng = stream_rng(cfg.seed, TEMPLATE_STREAM);
    let ln_a = LogNormal::new(0.0, cfg.drug_sigma).expect("valid log-normal");
    let ln_b = LogNormal::new(0.0, cfg.ae_sigma).expect("valid log-normal");
    let a: Vec<f64> = (0..cfg.n_drugs).map(|_| ln_a.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..cfg.n_aes()).map(|_| ln_b.sample(&mut rng)).collect();
    a.iter().flat_map(|ai| b.iter().map(move |bj| ai * bj)).collect()
}

struct Sim2Draw {
    p: Vec<f64>,
    mu: Vec<f64>,
    lambda: Vec<f64>,
    uniforms: Vec<f64>,
}

fn sim2_draw<R: Rng + ?Sized>(cfg: &SimIIConfig, column_group: &[usize], rng: &mut R) -> Result<Sim2Draw> {
    let up = Uniform::new(0.0, cfg.p_max).map_err(|e| Error::invalid(e.to_string()))?;
    let gm = Gamma::new(cfg.mu_shape, cfg.mu_scale).map_err(|e| Error::invalid(e.to_string()))?;
    let mut p = Vec::with_capacity(cfg.n_drugs);
    let mut mu = Vec::with_capacity(cfg.n_drugs);
    for _ in 0..cfg.n_drugs {
        p.push(up.sample(rng));
        mu.push(gm.sample(rng).max(1e-12));
    }
    let j = column_group.len();
    let mut lambda = Vec::with_capacity(cfg.n_drugs * j);
    for i in 0..cfg.n_drugs {
        for _ in column_group {
            lambda.push(draw_cell(p[i], mu[i], Dispersion::Finite(cfg.r), rng)?);
        }
    }
    let uniforms = (0..lambda.len()).map(|_| open_unit(rng)).collect();
    Ok(Sim2Draw { p, mu, lambda, uniforms })
}

fn zero_fraction_at(scale: f64, template: &[f64], pilots: &[Sim2Draw]) -> f64 {
    let mut zeros = 0usize;
    let mut total = 0usize;
    for d in pilots {
        for ((t, l), u) in template.iter().zip(&d.lambda).zip(&d.uniforms) {
            // inversion returns 0 exactly when u <= P(0)
            zeros += usize::from(*u <= (-scale * t * l).exp());
            total += 1;
        }
    }
    zeros as f64 / total as f64
}

/// Scale on the E template whose pilot datasets average `zero_target` zeros.
///
/// Pilots reuse their rates and uniforms at every trial scale, so the zero
/// fraction is monotone in the scale and bisection on log scale is exact.
pub fn calibrate_e_scale(cfg: &SimIIConfig) -> Result<f64> {
    cfg.validate()?;
    let template = e_template(cfg);
    let column_group = column_groups(&cfg.group_sizes);
    let pilots: Vec<Sim2Draw> = (0..cfg.pilot_datasets as u64)
        .map(|k| sim2_draw(cfg, &column_group, &mut stream_rng(derive_seed(cfg.seed, PILOT_STREAM), k)))
        .collect::<Result<_>>()?;
    let (mut lo, mut hi) = ((1e-6f64).ln(), (1e4f64).ln());
    if zero_fraction_at(hi.exp(), &template, &pilots) > cfg.zero_target
        || zero_fraction_at(lo.exp(), &template, &pilots) < cfg.zero_target
    {
        return Err(Error::invalid(format!(
            "zero fraction {} is out of reach for this generator",
            cfg.zero_target
        )));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if zero_fraction_at(mid.exp(), &template, &pilots) > cfg.zero_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

fn column_groups(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(g, &n)| std::iter::repeat_n(g, n)).collect()
}

/// Simulation II dataset `iteration` given a calibrated E scale.
pub fn simulation_ii_dataset(cfg: &SimIIConfig, e_scale: f64, iteration: u64) -> Result<SimDataset> {
    cfg.validate()?;
    let column_group = column_groups(&cfg.group_sizes);
    let drug_ids = ids("D", cfg.n_drugs);
    let ae_ids = ids("A", cfg.n_aes());
    let group_ids = ids("G", cfg.group_sizes.len());
    let expected: Vec<f64> = e_template(cfg).into_iter().map(|t| t * e_scale).collect();
    let expected = ExpectedCounts::from_values(cfg.n_drugs, ae_ids.len(), expected)?;
    let draw = sim2_draw(cfg, &column_group, &mut stream_rng(cfg.seed, iteration))?;
    let counts: Vec<u64> = expected
        .values()
        .iter()
        .zip(&draw.lambda)
        .zip(&draw.uniforms)
        .map(|((e, l), u)| poisson_inv(e * l, *u))
        .collect();
    let ontology = OntologyMap::new(
        ae_ids
            .iter()
            .zip(&column_group)
            .map(|(a, &g)| (a.clone(), group_ids[g].clone())),
    )?;
    let table = ContingencyTable::from_counts(drug_ids.clone(), ae_ids.clone(), counts)?;
    Ok(SimDataset {
        truth: SimTruth {
            drug_ids,
            ae_ids,
            group_ids,
            ontology,
            expected,
            lambda: draw.lambda,
            p: draw.p,
            mu: draw.mu,
            dispersion: Dispersion::Finite(cfg.r),
        },
        table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimIIIteration {
    pub iteration: usize,
    pub zero_fraction: f64,
    pub n_true_signals: usize,
    pub zgps_mse: f64,
    pub gps_mse: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimIIResult {
    pub config: SimIIConfig,
    pub e_scale: f64,
    pub iterations: Vec<SimIIIteration>,
    pub mean_zero_fraction: f64,
    pub mean_zgps_mse: f64,
    pub mean_gps_mse: f64,
    /// Pooled over all successful datasets.
    pub zgps_roc: Option<Roc>,
    pub gps_roc: Option<Roc>,
    pub n_failed: usize,
}

struct Sim2Outcome {
    row: SimIIIteration,
    zgps_scores: Vec<f64>,
    gps_scores: Vec<f64>,
    labels: Vec<bool>,
}

fn sim2_iteration(
    cfg: &SimIIConfig,
    e_scale: f64,
    b: usize,
    opts: &ZinbOptions,
    gps_init: &GpsHyper,
) -> Result<Sim2Outcome> {
    let data = simulation_ii_dataset(cfg, e_scale, b as u64)?;
    let truth = &data.truth;
    let labels: Vec<bool> = truth.lambda.iter().map(|&l| l > cfg.signal_threshold).collect();
    let mut row = SimIIIteration {
        iteration: b,
        zero_fraction: data.table.zero_fraction(),
        n_true_signals: labels.iter().filter(|&&l| l).count(),
        zgps_mse: f64::NAN,
        gps_mse: f64::NAN,
        error: None,
    };
    let fitted = (|| -> Result<(Vec<f64>, Vec<f64>)> {
        let z = fit_all_groups(&data.table, &truth.expected, &truth.ontology, opts)?;
        if let Some((g, msg)) = z.failures().into_iter().next() {
            return Err(Error::GroupFailed { group: g, message: msg });
        }
        let zl: Vec<f64> = z.estimates.iter().map(|e| e.map_or(f64::NAN, |e| e.lambda_hat)).collect();
        let g = fit_gps(&data.table, &truth.expected, gps_init, 1e-8, 2000)?;
        let gl: Vec<f64> = data
            .table
            .counts()
            .iter()
            .zip(truth.expected.values())
            .map(|(&n, &e)| gps_posterior(n, e, &g.theta).ebgm)
            .collect();
        Ok((zl, gl))
    })();
    match fitted {
        Ok((zl, gl)) => {
            row.zgps_mse = mse_dense(&zl, &truth.lambda)?;
            row.gps_mse = mse_dense(&gl, &truth.lambda)?;
            Ok(Sim2Outcome {
                row,
                zgps_scores: zl,
                gps_scores: gl,
                labels,
            })
        }
        Err(e) if e.kind() != crate::error::ErrorKind::Config => {
            row.error = Some(e.to_string());
            Ok(Sim2Outcome {
                row,
                zgps_scores: Vec::new(),
                gps_scores: Vec::new(),
                labels: Vec::new(),
            })
        }
        Err(e) => Err(e),
    }
}

/// Runs Simulation II: calibrates the E scale, then fits zGPS and GPS to
/// every dataset with the generating E.
pub fn simulation_ii(cfg: &SimIIConfig, opts: &ZinbOptions) -> Result<SimIIResult> {
    if cfg.iterations == 0 {
        return Err(Error::invalid("iterations must be positive"));
    }
    let e_scale = calibrate_e_scale(cfg)?;
    let gps_init = GpsHyper::default();
    let outcomes: Vec<Sim2Outcome> = (0..cfg.iterations)
        .into_par_iter()
        .map(|b| sim2_iteration(cfg, e_scale, b, opts, &gps_init))
        .collect::<Result<_>>()?;

    let mut zs = Vec::new();
    let mut gs = Vec::new();
    let mut labels = Vec::new();
    for o in &outcomes {
        zs.extend_from_slice(&o.zgps_scores);
        gs.extend_from_slice(&o.gps_scores);
        labels.extend_from_slice(&o.labels);
    }
    let roc = |s: &[f64]| -> Result<Option<Roc>> {
        match roc_auc(s, &labels) {
            Ok(r) => Ok(Some(r)),
            Err(Error::DegenerateLabels) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let zgps_roc = roc(&zs)?;
    let gps_roc = roc(&gs)?;
    let rows: Vec<SimIIIteration> = outcomes.into_iter().map(|o| o.row).collect();
    let ok: Vec<&SimIIIteration> = rows.iter().filter(|r| r.error.is_none()).collect();
    Ok(SimIIResult {
        config: cfg.clone(),
        e_scale,
        mean_zero_fraction: mean(&rows.iter().map(|r| r.zero_fraction).collect::<Vec<_>>()),
        mean_zgps_mse: mean(&ok.iter().map(|r| r.zgps_mse).collect::<Vec<_>>()),
        mean_gps_mse: mean(&ok.iter().map(|r| r.gps_mse).collect::<Vec<_>>()),
        zgps_roc,
        gps_roc,
        n_failed: rows.len() - ok.len(),
        iterations: rows,
    })
}

// ---------------------------------------------------------------------------
// Null reports

/// Reports with independent drugs and AEs, so every true rate is one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullReportConfig {
    pub n_reports: usize,
    pub n_drugs: usize,
    /// AEs per group.
    pub group_sizes: Vec<usize>,
}

/// Each report lists one drug and one AE, drawn independently with unequal
/// but fixed popularity weights.
pub fn null_reports(cfg: &NullReportConfig, seed: u64) -> Result<(ReportSet, OntologyMap)> {
    if cfg.n_reports < 2 || cfg.n_drugs == 0 || cfg.group_sizes.is_empty() || cfg.group_sizes.contains(&0) {
        return Err(Error::invalid("need two or more reports, one drug and non-empty groups"));
    }
    let n_aes: usize = cfg.group_sizes.iter().sum();
    let drug_ids = ids("D", cfg.n_drugs);
    let ae_ids = ids("A", n_aes);
    let group_ids = ids("G", cfg.group_sizes.len());
    let column_group = column_groups(&cfg.group_sizes);
    let ontology = OntologyMap::new(
        ae_ids
            .iter()
            .zip(&column_group)
            .map(|(a, &g)| (a.clone(), group_ids[g].clone())),
    )?;
    let pick = |weights_len: usize, u: f64| -> usize {
        // weights 1, 2, ..., n
        let total = (weights_len * (weights_len + 1) / 2) as f64;
        let mut acc = 0.0;
        for k in 0..weights_len {
            acc += (k + 1) as f64 / total;
            if u < acc {
                return k;
            }
        }
        weights_len - 1
    };
    let mut rng = stream_rng(seed, 0);
    let width = cfg.n_reports.to_string().len();
    let reports = (0..cfg.n_reports)
        .map(|k| {
            let d = pick(cfg.n_drugs, open_unit(&mut rng));
            let a = pick(n_aes, open_unit(&mut rng));
            IcsrReport::new(
                format!("R{:0width$}", k + 1),
                [drug_ids[d].as_str()],
                [ae_ids[a].as_str()],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ReportSet::new(reports)?, ontology))
}
