//! Train/validation evaluation of zGPS over split methods, ε values and seeds.
//!
//! The model is fitted on the train side with the train-side expected counts;
//! the prediction for a validation cell is its validation-side expected count
//! times λ̂. Held-out cells of a random split enter the fit as missing and are
//! predicted from the group prior mean.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contingency::{ContingencyTable, ExpectedCounts, OntologyMap};
use crate::error::{Error, Result};
use crate::metrics::{classification_metrics, roc_auc, MetricSet, Roc};
use crate::thinning::{coverage_report, split, CoverageReport, SplitMethod, SplitPair};
use crate::zgps::{fit_all_groups_masked, ZinbOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub methods: Vec<SplitMethod>,
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Predicted counts at or above this are called positive.
    pub threshold: f64,
    pub zinb: ZinbOptions,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            methods: SplitMethod::all().to_vec(),
            epsilons: vec![0.5, 0.7, 0.8, 0.9],
            seeds: (123..=132).collect(),
            threshold: 0.5,
            zinb: ZinbOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRun {
    pub method: SplitMethod,
    pub epsilon: f64,
    pub seed: u64,
    pub metrics: Option<MetricSet>,
    pub coverage: CoverageReport,
    pub failed_groups: Vec<String>,
    pub error: Option<String>,
}

/// Per-cell predictions of one run; `None` where the cell cannot be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPredictions {
    pub predicted: Vec<Option<f64>>,
    pub observed: Vec<Option<u64>>,
}

/// Fits the train side of `pair` and predicts its validation side.
pub fn predict_split(pair: &SplitPair, ontology: &OntologyMap, zinb: &ZinbOptions) -> Result<(RunPredictions, Vec<String>)> {
    let mask = match pair.method {
        SplitMethod::Random => Some(pair.train_present.as_slice()),
        _ => None,
    };
    let fit = fit_all_groups_masked(&pair.train, &pair.train_expected, ontology, mask, zinb)?;
    let predicted = fit
        .estimates
        .iter()
        .zip(pair.valid_expected.values())
        .zip(&pair.valid_present)
        .map(|((est, e), &present)| if present { est.map(|est| e * est.lambda_hat) } else { None })
        .collect();
    let observed = pair
        .valid
        .counts()
        .iter()
        .zip(&pair.valid_present)
        .map(|(&n, &present)| present.then_some(n))
        .collect();
    let failed = fit.failures().into_iter().map(|(g, _)| g).collect();
    Ok((RunPredictions { predicted, observed }, failed))
}

/// One split, fit and evaluation. Numerical and data failures are recorded in
/// the run rather than returned.
pub fn validation_run(
    table: &ContingencyTable,
    expected: &ExpectedCounts,
    ontology: &OntologyMap,
    method: SplitMethod,
    epsilon: f64,
    seed: u64,
    threshold: f64,
    zinb: &ZinbOptions,
) -> Result<(ValidationRun, Option<RunPredictions>)> {
    let pair = split(method, table, expected, epsilon, seed)?;
    let coverage = coverage_report(&pair);
    let mut run = ValidationRun {
        method,
        epsilon,
        seed,
        metrics: None,
        coverage,
        failed_groups: Vec::new(),
        error: None,
    };
    let outcome = predict_split(&pair, ontology, zinb).and_then(|(preds, failed)| {
        let m = classification_metrics(&preds.predicted, &preds.observed, threshold)?;
        Ok((preds, failed, m))
    });
    match outcome {
        Ok((preds, failed, m)) => {
            run.metrics = Some(m);
            run.failed_groups = failed;
            Ok((run, Some(preds)))
        }
        Err(e) if e.kind() != crate::error::ErrorKind::Config => {
            run.error = Some(e.to_string());
            Ok((run, None))
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub method: SplitMethod,
    pub epsilon: f64,
    pub n_runs: usize,
    pub n_failed: usize,
    /// Means over the successful runs; AUC over runs where it is defined.
    pub mse: f64,
    pub auc: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub n_evaluated: f64,
    pub n_missing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub method: SplitMethod,
    pub epsilon: f64,
    /// Pooled over seeds; `None` when only one class was observed.
    pub roc: Option<Roc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config: ValidationConfig,
    pub runs: Vec<ValidationRun>,
    pub summary: Vec<ValidationSummary>,
    pub roc: Vec<RocCurve>,
}

impl ValidationReport {
    pub fn summary_for(&self, method: SplitMethod, epsilon: f64) -> Option<&ValidationSummary> {
        self.summary.iter().find(|s| s.method == method && s.epsilon == epsilon)
    }
}

fn mean_of(ms: &[&MetricSet], f: impl Fn(&MetricSet) -> f64) -> f64 {
    let v: Vec<f64> = ms.iter().map(|m| f(m)).filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Full cross of methods × ε × seeds. Runs are independent and returned in
/// (method, ε, seed) order regardless of scheduling.
pub fn validate(
    table: &ContingencyTable,
    expected: &ExpectedCounts,
    ontology: &OntologyMap,
    cfg: &ValidationConfig,
) -> Result<ValidationReport> {
    if cfg.methods.is_empty() || cfg.epsilons.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::invalid("need at least one method, epsilon and seed"));
    }
    if let Some(e) = cfg.epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {e}")));
    }
    let cells: Vec<(SplitMethod, f64, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| {
            cfg.epsilons
                .iter()
                .flat_map(move |&e| cfg.seeds.iter().map(move |&s| (m, e, s)))
        })
        .collect();
    let results: Vec<(ValidationRun, Option<RunPredictions>)> = cells
        .par_iter()
        .map(|&(m, e, s)| validation_run(table, expected, ontology, m, e, s, cfg.threshold, &cfg.zinb))
        .collect::<Result<_>>()?;

    let mut summary = Vec::new();
    let mut roc = Vec::new();
    for &m in &cfg.methods {
        for &e in &cfg.epsilons {
            let group: Vec<&(ValidationRun, Option<RunPredictions>)> =
                results.iter().filter(|(r, _)| r.method == m && r.epsilon == e).collect();
            let ms: Vec<&MetricSet> = group.iter().filter_map(|(r, _)| r.metrics.as_ref()).collect();
            summary.push(ValidationSummary {
                method: m,
                epsilon: e,
                n_runs: group.len(),
                n_failed: group.len() - ms.len(),
                mse: mean_of(&ms, |x| x.mse),
                auc: mean_of(&ms, |x| x.auc),
                accuracy: mean_of(&ms, |x| x.accuracy),
                sensitivity: mean_of(&ms, |x| x.sensitivity),
                specificity: mean_of(&ms, |x| x.specificity),
                precision: mean_of(&ms, |x| x.precision),
                f1: mean_of(&ms, |x| x.f1),
                n_evaluated: mean_of(&ms, |x| x.n_evaluated as f64),
                n_missing: mean_of(&ms, |x| x.n_missing as f64),
            });
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for (_, p) in &group {
                if let Some(p) = p {
                    for (pr, ob) in p.predicted.iter().zip(&p.observed) {
                        if let (Some(pr), Some(ob)) = (pr, ob) {
                            scores.push(*pr);
                            labels.push(*ob > 0);
                        }
                    }
                }
            }
            let curve = match roc_auc(&scores, &labels) {
                Ok(r) => Some(r),
                Err(Error::DegenerateLabels) => None,
                Err(e) => return Err(e),
            };
            roc.push(RocCurve {
                method: m,
                epsilon: e,
                roc: curve,
            });
        }
    }
    Ok(ValidationReport {
        config: cfg.clone(),
        runs: results.into_iter().map(|(r, _)| r).collect(),
        summary,
        roc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contingency::expected_counts;
    use crate::simulate::{calibrate_e_scale, simulation_ii_dataset, SimIIConfig};

    fn data() -> (ContingencyTable, ExpectedCounts, OntologyMap) {
        let cfg = SimIIConfig {
            n_drugs: 6,
            group_sizes: vec![15, 10],
            pilot_datasets: 3,
            ..Default::default()
        };
        let s = calibrate_e_scale(&cfg).unwrap();
        let d = simulation_ii_dataset(&cfg, s, 0).unwrap();
        let e = expected_counts(&d.table).unwrap();
        (d.table, e, d.truth.ontology)
    }

    #[test]
    fn missing_only_for_random() {
        let (t, e, o) = data();
        let cfg = ValidationConfig {
            epsilons: vec![0.5],
            seeds: vec![1, 2],
            ..Default::default()
        };
        let rep = validate(&t, &e, &o, &cfg).unwrap();
        assert_eq!(rep.runs.len(), 6);
        for run in &rep.runs {
            let m = run.metrics.as_ref().unwrap();
            match run.method {
                SplitMethod::Random => assert!(m.n_missing > 0),
                _ => assert_eq!(m.n_missing, 0),
            }
        }
        assert_eq!(rep.roc.len(), 3);
    }

    #[test]
    fn bad_epsilon_is_config_error() {
        let (t, e, o) = data();
        let cfg = ValidationConfig {
            epsilons: vec![1.0],
            ..Default::default()
        };
        assert!(matches!(validate(&t, &e, &o, &cfg), Err(Error::InvalidArgument(_))));
    }
}
