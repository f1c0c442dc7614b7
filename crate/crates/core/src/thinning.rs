//! Train/validation splits of a count table.
//!
//! Three schemes: binomial data thinning of every count, stratified splitting
//! of the unit instances inside each cell, and random assignment of whole
//! cells. Every draw comes from a counter-based uniform keyed by
//! (seed, cell index).

use serde::{Deserialize, Serialize};

use crate::contingency::{ContingencyTable, ExpectedCounts};
use crate::error::{Error, Result};
use crate::rng::{binomial_inv, counter_uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    Thinning,
    Stratified,
    Random,
}

impl SplitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitMethod::Thinning => "thinning",
            SplitMethod::Stratified => "stratified",
            SplitMethod::Random => "random",
        }
    }

    pub fn all() -> [SplitMethod; 3] {
        [SplitMethod::Thinning, SplitMethod::Stratified, SplitMethod::Random]
    }
}

impl std::str::FromStr for SplitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thinning" => Ok(SplitMethod::Thinning),
            "stratified" => Ok(SplitMethod::Stratified),
            "random" => Ok(SplitMethod::Random),
            other => Err(Error::invalid(format!("unknown split method {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitPair {
    pub method: SplitMethod,
    pub epsilon: f64,
    pub seed: u64,
    pub train: ContingencyTable,
    pub valid: ContingencyTable,
    pub train_expected: ExpectedCounts,
    pub valid_expected: ExpectedCounts,
    /// Whether each cell exists on the train side. Always true except for random splits.
    pub train_present: Vec<bool>,
    pub valid_present: Vec<bool>,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")))
    }
}

fn with_counts(table: &ContingencyTable, counts: Vec<u64>) -> Result<ContingencyTable> {
    ContingencyTable::from_counts(table.drug_ids().to_vec(), table.ae_ids().to_vec(), counts)
}

/// Draws N¹ ~ Binomial(n, ε) per cell and sets N² = n − N¹.
pub fn thin_counts(table: &ContingencyTable, expected: &ExpectedCounts, epsilon: f64, seed: u64) -> Result<SplitPair> {
    check_epsilon(epsilon)?;
    expected.check_shape(table)?;
    let train: Vec<u64> = table
        .counts()
        .iter()
        .enumerate()
        .map(|(k, &n)| binomial_inv(n, epsilon, counter_uniform(seed, k as u64)))
        .collect();
    let valid: Vec<u64> = table.counts().iter().zip(&train).map(|(n, t)| n - t).collect();
    let cells = table.counts().len();
    Ok(SplitPair {
        method: SplitMethod::Thinning,
        epsilon,
        seed,
        train: with_counts(table, train)?,
        valid: with_counts(table, valid)?,
        train_expected: expected.scaled(epsilon),
        valid_expected: expected.scaled(1.0 - epsilon),
        train_present: vec![true; cells],
        valid_present: vec![true; cells],
    })
}

/// Splits the unit instances of each cell: `floor(ε·n)` go to train plus one
/// more with probability equal to the fractional part. Cells with two or more
/// units keep at least one on each side.
pub fn stratified_split(
    table: &ContingencyTable,
    expected: &ExpectedCounts,
    epsilon: f64,
    seed: u64,
) -> Result<SplitPair> {
    check_epsilon(epsilon)?;
    expected.check_shape(table)?;
    let train: Vec<u64> = table
        .counts()
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let mut target = epsilon * n as f64;
            if (target - target.round()).abs() < 1e-9 {
                target = target.round();
            }
            let base = target.floor();
            let frac = target - base;
            // upper tail of u, as in the binomial inversion, so a one-count
            // cell lands on the same side under both schemes for a given seed
            let extra = u64::from(frac > 0.0 && counter_uniform(seed, k as u64) > 1.0 - frac);
            let t = (base as u64 + extra).min(n);
            if n >= 2 {
                t.clamp(1, n - 1)
            } else {
                t
            }
        })
        .collect();
    let valid: Vec<u64> = table.counts().iter().zip(&train).map(|(n, t)| n - t).collect();
    let cells = table.counts().len();
    Ok(SplitPair {
        method: SplitMethod::Stratified,
        epsilon,
        seed,
        train: with_counts(table, train)?,
        valid: with_counts(table, valid)?,
        train_expected: expected.scaled(epsilon),
        valid_expected: expected.scaled(1.0 - epsilon),
        train_present: vec![true; cells],
        valid_present: vec![true; cells],
    })
}

/// Assigns each whole cell to train with probability ε. A cell is missing
/// (not zero) on the side it was not assigned to.
pub fn random_split(table: &ContingencyTable, expected: &ExpectedCounts, epsilon: f64, seed: u64) -> Result<SplitPair> {
    check_epsilon(epsilon)?;
    expected.check_shape(table)?;
    let train_present: Vec<bool> = (0..table.counts().len())
        .map(|k| counter_uniform(seed, k as u64) < epsilon)
        .collect();
    let valid_present: Vec<bool> = train_present.iter().map(|t| !t).collect();
    let pick = |present: &[bool]| -> Vec<u64> {
        table
            .counts()
            .iter()
            .zip(present)
            .map(|(&n, &p)| if p { n } else { 0 })
            .collect()
    };
    Ok(SplitPair {
        method: SplitMethod::Random,
        epsilon,
        seed,
        train: with_counts(table, pick(&train_present))?,
        valid: with_counts(table, pick(&valid_present))?,
        train_expected: expected.clone(),
        valid_expected: expected.clone(),
        train_present,
        valid_present,
    })
}

pub fn split(
    method: SplitMethod,
    table: &ContingencyTable,
    expected: &ExpectedCounts,
    epsilon: f64,
    seed: u64,
) -> Result<SplitPair> {
    match method {
        SplitMethod::Thinning => thin_counts(table, expected, epsilon, seed),
        SplitMethod::Stratified => stratified_split(table, expected, epsilon, seed),
        SplitMethod::Random => random_split(table, expected, epsilon, seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideCoverage {
    /// Drugs with a positive count on this side.
    pub drugs_present: usize,
    /// AEs with a positive count on this side.
    pub aes_present: usize,
    pub pairs_positive: usize,
    /// Cells absent from this side altogether.
    pub pairs_missing: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub train: SideCoverage,
    pub valid: SideCoverage,
}

fn side(table: &ContingencyTable, present: &[bool]) -> SideCoverage {
    let cols = table.n_aes();
    let mut drugs = vec![false; table.n_drugs()];
    let mut aes = vec![false; cols];
    let mut positive = 0;
    for (k, (&n, &p)) in table.counts().iter().zip(present).enumerate() {
        if p && n > 0 {
            positive += 1;
            drugs[k / cols] = true;
            aes[k % cols] = true;
        }
    }
    SideCoverage {
        drugs_present: drugs.iter().filter(|&&b| b).count(),
        aes_present: aes.iter().filter(|&&b| b).count(),
        pairs_positive: positive,
        pairs_missing: present.iter().filter(|&&p| !p).count(),
    }
}

pub fn coverage_report(pair: &SplitPair) -> CoverageReport {
    CoverageReport {
        train: side(&pair.train, &pair.train_present),
        valid: side(&pair.valid, &pair.valid_present),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(n: u64) -> (ContingencyTable, ExpectedCounts) {
        (
            ContingencyTable::from_counts(vec!["d".into()], vec!["a".into()], vec![n]).unwrap(),
            ExpectedCounts::from_values(1, 1, vec![2.0]).unwrap(),
        )
    }

    #[test]
    fn thinning_edges() {
        let (t, e) = single(7);
        for seed in 0..200 {
            let s = thin_counts(&t, &e, 1.0 - 1e-12, seed).unwrap();
            assert_eq!(s.train.counts()[0], 7);
            assert_eq!(s.valid.counts()[0], 0);
        }
        let (z, e) = single(0);
        let s = thin_counts(&z, &e, 0.4, 3).unwrap();
        assert_eq!((s.train.counts()[0], s.valid.counts()[0]), (0, 0));
        assert!((s.train_expected.values()[0] - 0.8).abs() < 1e-15);
        assert!((s.valid_expected.values()[0] - 1.2).abs() < 1e-15);
        assert!(thin_counts(&z, &e, 1.0, 3).is_err());
        assert!(thin_counts(&z, &e, 0.0, 3).is_err());
    }

    #[test]
    fn single_counts_split_like_thinning() {
        let counts: Vec<u64> = vec![1; 200];
        let t = ContingencyTable::from_counts(
            (0..10).map(|i| format!("d{i}")).collect(),
            (0..20).map(|j| format!("a{j}")).collect(),
            counts,
        )
        .unwrap();
        let e = ExpectedCounts::from_values(10, 20, vec![1.0; 200]).unwrap();
        for eps in [0.3, 0.5, 0.7, 0.9] {
            let a = thin_counts(&t, &e, eps, 8).unwrap();
            let b = stratified_split(&t, &e, eps, 8).unwrap();
            assert_eq!(a.train.counts(), b.train.counts());
        }
    }

    #[test]
    fn stratified_integer_split() {
        let (t, e) = single(10);
        for seed in 0..50 {
            let s = stratified_split(&t, &e, 0.7, seed).unwrap();
            assert_eq!((s.train.counts()[0], s.valid.counts()[0]), (7, 3));
        }
    }

    #[test]
    fn random_split_partitions_cells() {
        let counts: Vec<u64> = (0..40).map(|k| k % 5).collect();
        let t = ContingencyTable::from_counts(
            (0..4).map(|i| format!("d{i}")).collect(),
            (0..10).map(|j| format!("a{j}")).collect(),
            counts.clone(),
        )
        .unwrap();
        let e = ExpectedCounts::from_values(4, 10, vec![1.0; 40]).unwrap();
        let s = random_split(&t, &e, 0.5, 11).unwrap();
        for (k, &want) in counts.iter().enumerate() {
            assert!(s.train_present[k] ^ s.valid_present[k]);
            let n = if s.train_present[k] { s.train.counts()[k] } else { s.valid.counts()[k] };
            assert_eq!(n, want);
        }
        let cov = coverage_report(&s);
        assert_eq!(cov.train.pairs_missing + cov.valid.pairs_missing, 40);

        let th = thin_counts(&t, &e, 0.5, 11).unwrap();
        let cov = coverage_report(&th);
        assert_eq!((cov.train.pairs_missing, cov.valid.pairs_missing), (0, 0));
        let st = stratified_split(&t, &e, 0.5, 11).unwrap();
        assert_eq!(coverage_report(&st).valid.pairs_missing, 0);
    }

    #[test]
    fn random_split_near_one_empties_validation() {
        let (t, e) = single(4);
        let s = random_split(&t, &e, 1.0 - 1e-12, 5).unwrap();
        let cov = coverage_report(&s);
        assert_eq!(cov.valid.pairs_missing, 1);
        assert_eq!(cov.train.pairs_missing, 0);
    }
}
