//! maxS permutation inference.
//!
//! AE sets are shuffled across reports (each report keeps its drug set), the
//! whole counting and fitting pipeline is re-run on the shuffled reports, and
//! the maximum group-level rate of every replicate forms the null.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contingency::{build_table, expected_counts, ContingencyTable, OntologyMap, ReportSet};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::zgps::{fit_all_groups, ZgpsFit, ZinbOptions};

/// Shuffles the AE sets of `reports` across reports.
pub fn permute_reports(reports: &ReportSet, seed: u64) -> Result<ReportSet> {
    if reports.len() < 2 {
        return Err(Error::NothingToPermute);
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    Ok(reports.with_events_from(&order))
}

/// Source of permuted report sets.
pub trait Permuter: Sync {
    fn permute(&self, reports: &ReportSet, seed: u64) -> Result<ReportSet>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ShufflePermuter;

impl Permuter for ShufflePermuter {
    fn permute(&self, reports: &ReportSet, seed: u64) -> Result<ReportSet> {
        permute_reports(reports, seed)
    }
}

/// Which maximum forms the test statistic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxStatistic {
    /// max over drugs and groups of s-hat.
    #[default]
    GroupRate,
    /// max over drug-AE cells of lambda-hat.
    AeRate,
}

/// Everything needed to turn a report set into fitted group rates on a fixed roster.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub drug_whitelist: Option<Vec<String>>,
    pub ae_whitelist: Option<Vec<String>>,
    /// Drugs and AEs of the observed analysis after filtering.
    pub drug_roster: Vec<String>,
    pub ae_roster: Vec<String>,
    /// Ontology restricted to the roster.
    pub ontology: OntologyMap,
    pub zinb: ZinbOptions,
    pub statistic: MaxStatistic,
}

impl Pipeline {
    /// Roster taken from an already filtered observed table.
    pub fn for_observed(observed: &ContingencyTable, ontology: &OntologyMap, zinb: ZinbOptions) -> Self {
        Self {
            drug_whitelist: None,
            ae_whitelist: None,
            drug_roster: observed.drug_ids().to_vec(),
            ae_roster: observed.ae_ids().to_vec(),
            ontology: ontology.restrict_to(observed.ae_ids().iter().map(String::as_str)),
            zinb,
            statistic: MaxStatistic::GroupRate,
        }
    }

    pub fn table(&self, reports: &ReportSet) -> Result<ContingencyTable> {
        let (raw, _) = build_table(reports, self.drug_whitelist.as_deref(), self.ae_whitelist.as_deref())?;
        raw.reindex(&self.drug_roster, &self.ae_roster)
    }

    pub fn fit(&self, reports: &ReportSet) -> Result<(ContingencyTable, ZgpsFit)> {
        let table = self.table(reports)?;
        let expected = expected_counts(&table)?;
        let fit = fit_all_groups(&table, &expected, &self.ontology, &self.zinb)?;
        Ok((table, fit))
    }

    fn statistic_of(&self, fit: &ZgpsFit) -> Result<f64> {
        if let Some((group, msg)) = fit.failures().into_iter().next() {
            return Err(Error::GroupFailed { group, message: msg });
        }
        Ok(match self.statistic {
            MaxStatistic::GroupRate => max_statistic(fit.successful())?,
            MaxStatistic::AeRate => fit
                .estimates
                .iter()
                .flatten()
                .map(|e| e.lambda_hat)
                .fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Largest s-hat over all drugs and groups.
pub fn max_statistic<'a>(fits: impl IntoIterator<Item = &'a crate::zgps::ZinbGroupFit>) -> Result<f64> {
    let mut any = false;
    let mut best = f64::NEG_INFINITY;
    for f in fits {
        any = true;
        for &s in &f.s_hat {
            best = best.max(s);
        }
    }
    if !any {
        return Err(Error::invalid("max statistic needs at least one fit"));
    }
    Ok(best)
}

/// Familywise-adjusted p-value of each statistic against the pooled null:
/// `#{v in null ∪ {observed} : v ≥ s} / (N + 1)`.
pub fn q_values(stats: &[f64], observed_max: f64, null_max: &[f64]) -> Vec<f64> {
    let mut pool: Vec<f64> = null_max.to_vec();
    pool.push(observed_max);
    pool.sort_by(f64::total_cmp);
    let total = pool.len() as f64;
    stats
        .iter()
        .map(|&s| {
            let below = pool.partition_point(|&v| v < s);
            // the observed maximum bounds every observed statistic
            (pool.len() - below).max(1) as f64 / total
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PermutationResult {
    pub statistic: MaxStatistic,
    pub observed_max: f64,
    /// Null values of the successful replicates, in replicate order.
    pub null_max: Vec<f64>,
    /// Replicate index (1-based) for each entry of `null_max`.
    pub replicate_ids: Vec<usize>,
    pub failed_replicates: Vec<usize>,
    pub n_permutations: usize,
    pub drug_ids: Vec<String>,
    pub group_ids: Vec<String>,
    /// drugs × groups, row-major.
    pub s_hat: Vec<f64>,
    /// q-value of each entry of `s_hat`.
    pub q_values: Vec<f64>,
    /// With [`MaxStatistic::AeRate`]: q-value of every cell's lambda-hat.
    pub ae_q_values: Option<Vec<f64>>,
}

/// Observed analysis plus `n_permutations` permuted replicates.
///
/// Replicate `b` uses seed `derive_seed(base_seed, b)`, so the result does not
/// depend on how replicates are scheduled.
pub fn null_distribution(
    reports: &ReportSet,
    pipeline: &Pipeline,
    n_permutations: usize,
    base_seed: u64,
    permuter: &dyn Permuter,
) -> Result<(ZgpsFit, PermutationResult)> {
    if n_permutations == 0 {
        return Err(Error::invalid("need at least one permutation"));
    }
    let (_, observed) = pipeline.fit(reports)?;
    let observed_max = pipeline.statistic_of(&observed)?;

    let outcomes: Vec<Result<f64>> = (1..=n_permutations)
        .into_par_iter()
        .map(|b| {
            let permuted = permuter.permute(reports, derive_seed(base_seed, b as u64))?;
            let (_, fit) = pipeline.fit(&permuted)?;
            pipeline.statistic_of(&fit)
        })
        .collect();

    let mut null_max = Vec::with_capacity(n_permutations);
    let mut replicate_ids = Vec::with_capacity(n_permutations);
    let mut failed = Vec::new();
    for (b, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => {
                null_max.push(v);
                replicate_ids.push(b + 1);
            }
            Err(_) => failed.push(b + 1),
        }
    }
    if !failed.is_empty() && failed.len() * 100 >= n_permutations {
        return Err(Error::ReplicateFailures {
            failed: failed.len(),
            total: n_permutations,
        });
    }

    let s_hat: Vec<f64> = observed.s_matrix().into_iter().map(|s| s.unwrap_or(f64::NAN)).collect();
    let q = q_values(&s_hat, observed_max, &null_max);
    let ae_q_values = match pipeline.statistic {
        MaxStatistic::GroupRate => None,
        MaxStatistic::AeRate => {
            let lam: Vec<f64> = observed
                .estimates
                .iter()
                .map(|e| e.map_or(f64::NAN, |e| e.lambda_hat))
                .collect();
            Some(q_values(&lam, observed_max, &null_max))
        }
    };
    let result = PermutationResult {
        statistic: pipeline.statistic,
        observed_max,
        null_max,
        replicate_ids,
        failed_replicates: failed,
        n_permutations,
        drug_ids: observed.drug_ids.clone(),
        group_ids: observed.group_ids.clone(),
        s_hat,
        q_values: q,
        ae_q_values,
    };
    Ok((observed, result))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AeSignal {
    pub drug_id: String,
    pub ae_id: String,
    pub group_id: String,
    pub lambda_hat: f64,
    pub q: f64,
    pub is_signal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSignal {
    pub drug_id: String,
    pub group_id: String,
    pub s_hat: f64,
    pub q: f64,
    pub is_concern: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZgpsSignals {
    pub ae: Vec<AeSignal>,
    pub groups: Vec<GroupSignal>,
}

/// AE signal: lambda-hat above `rr_threshold` and the drug-group q-value
/// below `alpha`. Group concern: s-hat above `rr_threshold` and q below `alpha`.
///
/// `q_values` is drugs × groups in the fit's group order.
pub fn zgps_signals(fit: &ZgpsFit, q_values: &[f64], rr_threshold: f64, alpha: f64) -> Result<ZgpsSignals> {
    let k = fit.group_ids.len();
    if q_values.len() != fit.drug_ids.len() * k {
        return Err(Error::ShapeMismatch("q-values must be drugs x groups".into()));
    }
    if !(0.0..=1.0).contains(&alpha) || !(rr_threshold >= 0.0) {
        return Err(Error::invalid("alpha must lie in [0, 1] and rr_threshold be nonnegative"));
    }
    let s = fit.s_matrix();
    let mut groups = Vec::new();
    for (i, drug) in fit.drug_ids.iter().enumerate() {
        for (g, group) in fit.group_ids.iter().enumerate() {
            if let Some(s_hat) = s[i * k + g] {
                let q = q_values[i * k + g];
                groups.push(GroupSignal {
                    drug_id: drug.clone(),
                    group_id: group.clone(),
                    s_hat,
                    q,
                    is_concern: s_hat > rr_threshold && q < alpha,
                });
            }
        }
    }
    let cols = fit.ae_ids.len();
    let mut ae = Vec::new();
    for (idx, est) in fit.estimates.iter().enumerate() {
        if let Some(est) = est {
            let (i, j) = (idx / cols, idx % cols);
            let g = fit.column_group[j];
            let q = q_values[i * k + g];
            ae.push(AeSignal {
                drug_id: fit.drug_ids[i].clone(),
                ae_id: fit.ae_ids[j].clone(),
                group_id: fit.group_ids[g].clone(),
                lambda_hat: est.lambda_hat,
                q,
                is_signal: est.lambda_hat > rr_threshold && q < alpha,
            });
        }
    }
    Ok(ZgpsSignals { ae, groups })
}
