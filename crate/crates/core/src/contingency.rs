//! Report ingestion and drug × AE contingency tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One individual case safety report.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IcsrReport {
    pub report_id: String,
    pub drugs: BTreeSet<String>,
    pub events: BTreeSet<String>,
}

impl IcsrReport {
    pub fn new<D, E>(report_id: impl Into<String>, drugs: D, events: E) -> Result<Self>
    where
        D: IntoIterator,
        D::Item: Into<String>,
        E: IntoIterator,
        E::Item: Into<String>,
    {
        let report_id = report_id.into();
        let drugs: BTreeSet<String> = drugs.into_iter().map(Into::into).collect();
        let events: BTreeSet<String> = events.into_iter().map(Into::into).collect();
        if drugs.is_empty() || events.is_empty() {
            return Err(Error::invalid(format!(
                "report {report_id} needs at least one drug and one event"
            )));
        }
        Ok(Self {
            report_id,
            drugs,
            events,
        })
    }
}

/// A collection of reports with unique identifiers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportSet {
    reports: Vec<IcsrReport>,
}

impl ReportSet {
    pub fn new(reports: Vec<IcsrReport>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &reports {
            if !seen.insert(r.report_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate report id {}",
                    r.report_id
                )));
            }
        }
        Ok(Self { reports })
    }

    pub fn reports(&self) -> &[IcsrReport] {
        &self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// Rebuilds the set with AE sets reassigned: report `k` receives the
    /// events of report `order[k]`.
    pub(crate) fn with_events_from(&self, order: &[usize]) -> ReportSet {
        let reports = self
            .reports
            .iter()
            .zip(order)
            .map(|(r, &src)| IcsrReport {
                report_id: r.report_id.clone(),
                drugs: r.drugs.clone(),
                events: self.reports[src].events.clone(),
            })
            .collect();
        ReportSet { reports }
    }
}

/// Total map from AE identifier to its group.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyMap {
    ae_to_group: BTreeMap<String, String>,
}

impl OntologyMap {
    pub fn new<I, A, G>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, G)>,
        A: Into<String>,
        G: Into<String>,
    {
        let mut ae_to_group = BTreeMap::new();
        for (ae, group) in pairs {
            let ae = ae.into();
            let group = group.into();
            if let Some(prev) = ae_to_group.insert(ae.clone(), group.clone()) {
                if prev != group {
                    return Err(Error::invalid(format!(
                        "AE {ae} mapped to both {prev} and {group}"
                    )));
                }
            }
        }
        Ok(Self { ae_to_group })
    }

    /// Single group holding every listed AE.
    pub fn single_group<I, A>(aes: I, group: &str) -> Self
    where
        I: IntoIterator<Item = A>,
        A: Into<String>,
    {
        Self {
            ae_to_group: aes.into_iter().map(|a| (a.into(), group.to_string())).collect(),
        }
    }

    pub fn group_of(&self, ae: &str) -> Option<&str> {
        self.ae_to_group.get(ae).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ae_to_group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ae_to_group.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.ae_to_group.iter().map(|(a, g)| (a.as_str(), g.as_str()))
    }

    /// Group → member AEs, both sorted.
    pub fn groups(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (ae, g) in &self.ae_to_group {
            out.entry(g.clone()).or_default().push(ae.clone());
        }
        out
    }

    pub fn restrict_to<'a>(&self, aes: impl IntoIterator<Item = &'a str>) -> OntologyMap {
        let keep: BTreeSet<&str> = aes.into_iter().collect();
        OntologyMap {
            ae_to_group: self
                .ae_to_group
                .iter()
                .filter(|(a, _)| keep.contains(a.as_str()))
                .map(|(a, g)| (a.clone(), g.clone()))
                .collect(),
        }
    }

    /// Group index per column of `table`, groups ordered lexicographically.
    pub fn column_groups(&self, table: &ContingencyTable) -> Result<(Vec<String>, Vec<usize>)> {
        let mut names: Vec<String> = Vec::new();
        let mut lookup: HashMap<&str, usize> = HashMap::new();
        let mut raw = Vec::with_capacity(table.n_aes());
        for ae in table.ae_ids() {
            let g = self.group_of(ae).ok_or_else(|| Error::UnmappedAe(ae.clone()))?;
            raw.push(g);
            if !lookup.contains_key(g) {
                lookup.insert(g, 0);
                names.push(g.to_string());
            }
        }
        names.sort();
        for (k, n) in names.iter().enumerate() {
            lookup.insert(n.as_str(), k);
        }
        let idx = raw.iter().map(|g| lookup[g]).collect();
        Ok((names, idx))
    }
}

/// I × J matrix of report counts with cached margins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContingencyTable {
    drug_ids: Vec<String>,
    ae_ids: Vec<String>,
    counts: Vec<u64>,
    row_margins: Vec<u64>,
    col_margins: Vec<u64>,
    grand_total: u64,
}

impl ContingencyTable {
    /// `counts` is row-major, drugs along rows.
    pub fn from_counts(drug_ids: Vec<String>, ae_ids: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if drug_ids.is_empty() || ae_ids.is_empty() {
            return Err(Error::EmptyTable);
        }
        if counts.len() != drug_ids.len() * ae_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for a {}x{} table",
                counts.len(),
                drug_ids.len(),
                ae_ids.len()
            )));
        }
        let cols = ae_ids.len();
        let mut row_margins = vec![0u64; drug_ids.len()];
        let mut col_margins = vec![0u64; cols];
        for (k, &n) in counts.iter().enumerate() {
            row_margins[k / cols] += n;
            col_margins[k % cols] += n;
        }
        let grand_total = row_margins.iter().sum();
        Ok(Self {
            drug_ids,
            ae_ids,
            counts,
            row_margins,
            col_margins,
            grand_total,
        })
    }

    pub fn n_drugs(&self) -> usize {
        self.drug_ids.len()
    }

    pub fn n_aes(&self) -> usize {
        self.ae_ids.len()
    }

    pub fn drug_ids(&self) -> &[String] {
        &self.drug_ids
    }

    pub fn ae_ids(&self) -> &[String] {
        &self.ae_ids
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, drug: usize, ae: usize) -> u64 {
        self.counts[drug * self.ae_ids.len() + ae]
    }

    pub fn row_margins(&self) -> &[u64] {
        &self.row_margins
    }

    pub fn col_margins(&self) -> &[u64] {
        &self.col_margins
    }

    pub fn grand_total(&self) -> u64 {
        self.grand_total
    }

    pub fn zero_fraction(&self) -> f64 {
        self.counts.iter().filter(|&&n| n == 0).count() as f64 / self.counts.len() as f64
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<ContingencyTable> {
        let ae_ids = cols.iter().map(|&j| self.ae_ids[j].clone()).collect();
        let mut counts = Vec::with_capacity(self.n_drugs() * cols.len());
        for i in 0..self.n_drugs() {
            counts.extend(cols.iter().map(|&j| self.get(i, j)));
        }
        ContingencyTable::from_counts(self.drug_ids.clone(), ae_ids, counts)
    }

    /// Re-indexes onto a fixed roster; identifiers absent here become zero rows or columns.
    pub fn reindex(&self, drug_ids: &[String], ae_ids: &[String]) -> Result<ContingencyTable> {
        let rows: HashMap<&str, usize> = self
            .drug_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.as_str(), i))
            .collect();
        let cols: HashMap<&str, usize> = self
            .ae_ids
            .iter()
            .enumerate()
            .map(|(j, a)| (a.as_str(), j))
            .collect();
        let mut counts = Vec::with_capacity(drug_ids.len() * ae_ids.len());
        for d in drug_ids {
            for a in ae_ids {
                let n = match (rows.get(d.as_str()), cols.get(a.as_str())) {
                    (Some(&i), Some(&j)) => self.get(i, j),
                    _ => 0,
                };
                counts.push(n);
            }
        }
        ContingencyTable::from_counts(drug_ids.to_vec(), ae_ids.to_vec(), counts)
    }
}

/// Counts of what happened during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub n_reports: usize,
    pub n_used: usize,
    pub n_skipped: usize,
    pub n_exact_duplicates: usize,
    /// Σ over reports of |events|, i.e. the total weight before rounding.
    pub total_weight: f64,
}

/// Weighted counting of drug-AE pairs.
///
/// Each report spreads weight `1/|drugs|` over every (drug, AE) pair it
/// contains; the accumulated weight is rounded half away from zero. Weights
/// are accumulated as exact fractions so that ties are detected exactly.
pub fn build_table(
    reports: &ReportSet,
    drug_whitelist: Option<&[String]>,
    ae_whitelist: Option<&[String]>,
) -> Result<(ContingencyTable, IngestSummary)> {
    if reports.is_empty() {
        return Err(Error::NoReports);
    }
    if drug_whitelist.is_some_and(|w| w.is_empty()) || ae_whitelist.is_some_and(|w| w.is_empty()) {
        return Err(Error::invalid("whitelists must be nonempty when given"));
    }
    let drug_ok: Option<BTreeSet<&str>> = drug_whitelist.map(|w| w.iter().map(String::as_str).collect());
    let ae_ok: Option<BTreeSet<&str>> = ae_whitelist.map(|w| w.iter().map(String::as_str).collect());

    // (drug, ae) -> (number of drugs on report -> number of contributions)
    let mut cells: BTreeMap<(&str, &str), BTreeMap<u64, u64>> = BTreeMap::new();
    let mut drugs: BTreeSet<&str> = BTreeSet::new();
    let mut aes: BTreeSet<&str> = BTreeSet::new();
    let mut summary = IngestSummary {
        n_reports: reports.len(),
        ..Default::default()
    };
    let mut seen: HashMap<(&BTreeSet<String>, &BTreeSet<String>), usize> = HashMap::new();

    for r in reports.reports() {
        *seen.entry((&r.drugs, &r.events)).or_default() += 1;
        summary.total_weight += r.events.len() as f64;
        let n_drugs = r.drugs.len() as u64;
        let kept_drugs: Vec<&str> = r
            .drugs
            .iter()
            .map(String::as_str)
            .filter(|d| drug_ok.as_ref().is_none_or(|w| w.contains(d)))
            .collect();
        let kept_events: Vec<&str> = r
            .events
            .iter()
            .map(String::as_str)
            .filter(|e| ae_ok.as_ref().is_none_or(|w| w.contains(e)))
            .collect();
        if kept_drugs.is_empty() || kept_events.is_empty() {
            summary.n_skipped += 1;
            continue;
        }
        summary.n_used += 1;
        for &d in &kept_drugs {
            drugs.insert(d);
            for &e in &kept_events {
                aes.insert(e);
                *cells.entry((d, e)).or_default().entry(n_drugs).or_default() += 1;
            }
        }
    }
    summary.n_exact_duplicates = seen.values().map(|&c| c - 1).sum();

    if drugs.is_empty() {
        return Err(Error::EmptyTable);
    }
    let drug_ids: Vec<String> = drugs.iter().map(|s| s.to_string()).collect();
    let ae_ids: Vec<String> = aes.iter().map(|s| s.to_string()).collect();
    let col_of: HashMap<&str, usize> = aes.iter().enumerate().map(|(j, a)| (*a, j)).collect();
    let row_of: HashMap<&str, usize> = drugs.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut counts = vec![0u64; drug_ids.len() * ae_ids.len()];
    for ((d, e), parts) in &cells {
        counts[row_of[d] * ae_ids.len() + col_of[e]] = round_fraction_sum(parts);
    }
    Ok((ContingencyTable::from_counts(drug_ids, ae_ids, counts)?, summary))
}

// Σ count_k / k rounded half away from zero, computed exactly.
fn round_fraction_sum(parts: &BTreeMap<u64, u64>) -> u64 {
    fn gcd(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let mut num: u128 = 0;
    let mut den: u128 = 1;
    for (&k, &c) in parts {
        let k = k as u128;
        let c = c as u128;
        // num/den + c/k
        let l = den / gcd(den, k) * k;
        num = num * (l / den) + c * (l / k);
        den = l;
        let g = gcd(num, den);
        if g > 1 {
            num /= g;
            den /= g;
        }
    }
    ((2 * num + den) / (2 * den)) as u64
}

/// Drops rare AEs, then groups that are left too small.
pub fn apply_filters(
    table: &ContingencyTable,
    ontology: &OntologyMap,
    min_ae_count: u64,
    min_group_size: usize,
) -> Result<(ContingencyTable, OntologyMap)> {
    let mut survivors: Vec<usize> = Vec::new();
    let mut group_sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for (j, ae) in table.ae_ids().iter().enumerate() {
        let g = ontology.group_of(ae).ok_or_else(|| Error::UnmappedAe(ae.clone()))?;
        if table.col_margins()[j] >= min_ae_count {
            survivors.push(j);
            *group_sizes.entry(g).or_default() += 1;
        }
    }
    let keep: Vec<usize> = survivors
        .into_iter()
        .filter(|&j| {
            let g = ontology.group_of(&table.ae_ids()[j]).expect("checked above");
            group_sizes[g] >= min_group_size
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }
    let filtered = table.select_columns(&keep)?;
    let onto = ontology.restrict_to(filtered.ae_ids().iter().map(String::as_str));
    Ok((filtered, onto))
}

/// Expected counts under drug-AE independence, same layout as the table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedCounts {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ExpectedCounts {
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} expected counts for a {rows}x{cols} table",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("expected counts must be finite and nonnegative"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> ExpectedCounts {
        ExpectedCounts {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> ExpectedCounts {
        let mut values = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            values.extend(cols.iter().map(|&j| self.get(i, j)));
        }
        ExpectedCounts {
            rows: self.rows,
            cols: cols.len(),
            values,
        }
    }

    pub(crate) fn check_shape(&self, table: &ContingencyTable) -> Result<()> {
        if self.rows != table.n_drugs() || self.cols != table.n_aes() {
            return Err(Error::ShapeMismatch(format!(
                "expected counts {}x{} vs table {}x{}",
                self.rows,
                self.cols,
                table.n_drugs(),
                table.n_aes()
            )));
        }
        Ok(())
    }
}

pub fn expected_counts(table: &ContingencyTable) -> Result<ExpectedCounts> {
    let total = table.grand_total();
    if total == 0 {
        return Err(Error::EmptyTable);
    }
    let total = total as f64;
    let mut values = Vec::with_capacity(table.counts().len());
    for &ri in table.row_margins() {
        for &cj in table.col_margins() {
            values.push(ri as f64 * cj as f64 / total);
        }
    }
    ExpectedCounts::from_values(table.n_drugs(), table.n_aes(), values)
}

/// Observed-over-expected ratios and their base-2 logarithm.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportingRatios {
    pub rr: Vec<f64>,
    /// `log2(rr)`; `-inf` for unreported cells.
    pub information: Vec<f64>,
}

pub fn reporting_ratio(table: &ContingencyTable, expected: &ExpectedCounts) -> Result<ReportingRatios> {
    expected.check_shape(table)?;
    let cols = table.n_aes();
    let mut rr = Vec::with_capacity(table.counts().len());
    let mut information = Vec::with_capacity(table.counts().len());
    for (k, (&n, &e)) in table.counts().iter().zip(expected.values()).enumerate() {
        if n == 0 {
            rr.push(0.0);
            information.push(f64::NEG_INFINITY);
            continue;
        }
        if e <= 0.0 {
            return Err(Error::StructuralZero {
                drug: table.drug_ids()[k / cols].clone(),
                ae: table.ae_ids()[k % cols].clone(),
            });
        }
        let ratio = n as f64 / e;
        rr.push(ratio);
        information.push(ratio.log2());
    }
    Ok(ReportingRatios { rr, information })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(id: &str, drugs: &[&str], events: &[&str]) -> IcsrReport {
        IcsrReport::new(id, drugs.iter().copied(), events.iter().copied()).unwrap()
    }

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_drug_report_weights_one() {
        let rs = ReportSet::new(vec![report("r1", &["X1"], &["AE1", "AE2", "AE3"])]).unwrap();
        let (t, s) = build_table(&rs, None, None).unwrap();
        assert_eq!(t.counts(), &[1, 1, 1]);
        assert_eq!(s.total_weight, 3.0);
    }

    #[test]
    fn half_weights_round_away_from_zero() {
        let rs = ReportSet::new(vec![report("r1", &["X2", "X3"], &["AE4", "AE5"])]).unwrap();
        let (t, _) = build_table(&rs, None, None).unwrap();
        assert_eq!(t.counts(), &[1, 1, 1, 1]);
    }

    #[test]
    fn identical_reports_sum_exactly() {
        let rs = ReportSet::new(vec![
            report("a", &["X2", "X3"], &["AE4"]),
            report("b", &["X2", "X3"], &["AE4"]),
        ])
        .unwrap();
        let (t, s) = build_table(&rs, None, None).unwrap();
        assert_eq!(t.counts(), &[1, 1]);
        assert_eq!(s.n_exact_duplicates, 1);
    }

    #[test]
    fn thirds_and_sixths_are_exact() {
        // 1/3 + 1/6 = 1/2 -> 1; floating point would give 0.4999...
        let rs = ReportSet::new(vec![
            report("a", &["A", "B", "C"], &["E"]),
            report("b", &["A", "B", "C", "D", "F", "G"], &["E"]),
        ])
        .unwrap();
        let (t, _) = build_table(&rs, None, None).unwrap();
        assert_eq!(t.get(0, 0), 1);
        assert_eq!(round_fraction_sum(&BTreeMap::from([(3, 1)])), 0);
        assert_eq!(round_fraction_sum(&BTreeMap::from([(3, 2)])), 1);
        assert_eq!(round_fraction_sum(&BTreeMap::from([(4, 6)])), 2);
    }

    #[test]
    fn empty_reportset_errors() {
        let rs = ReportSet::new(vec![]).unwrap();
        assert!(matches!(build_table(&rs, None, None), Err(Error::NoReports)));
    }

    #[test]
    fn filtered_reports_are_skipped_and_counted() {
        let rs = ReportSet::new(vec![
            report("a", &["X1"], &["AE1"]),
            report("b", &["X9"], &["AE1"]),
        ])
        .unwrap();
        let wl = ids(&["X1"]);
        let (t, s) = build_table(&rs, Some(&wl), None).unwrap();
        assert_eq!(t.drug_ids(), &wl[..]);
        assert_eq!(s.n_skipped, 1);
        assert_eq!(s.n_used, 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = report("a", &["X"], &["E"]);
        assert!(ReportSet::new(vec![r.clone(), r]).is_err());
    }

    #[test]
    fn filter_identity_and_recount() {
        let t = ContingencyTable::from_counts(ids(&["D"]), ids(&["A", "B", "C"]), vec![20, 3, 17]).unwrap();
        let onto = OntologyMap::single_group(["A", "B", "C"], "G");
        let (same, _) = apply_filters(&t, &onto, 0, 0).unwrap();
        assert_eq!(same, t);
        let (f, o) = apply_filters(&t, &onto, 15, 0).unwrap();
        assert_eq!(f.ae_ids(), &ids(&["A", "C"])[..]);
        assert_eq!(o.len(), 2);
        assert!(matches!(apply_filters(&t, &onto, 100, 0), Err(Error::EmptyAfterFiltering)));
        assert!(matches!(apply_filters(&t, &onto, 15, 3), Err(Error::EmptyAfterFiltering)));
    }

    #[test]
    fn expected_count_examples() {
        let t = ContingencyTable::from_counts(ids(&["a", "b"]), ids(&["x", "y"]), vec![1; 4]).unwrap();
        let e = expected_counts(&t).unwrap();
        assert_eq!(e.values(), &[1.0; 4]);

        // n1. = 10, n.1 = 6, n.. = 30
        let t = ContingencyTable::from_counts(ids(&["a", "b"]), ids(&["x", "y"]), vec![4, 6, 2, 18]).unwrap();
        let e = expected_counts(&t).unwrap();
        assert!((e.get(0, 0) - 2.0).abs() < 1e-12);

        let z = ContingencyTable::from_counts(ids(&["a"]), ids(&["x"]), vec![0]).unwrap();
        assert!(matches!(expected_counts(&z), Err(Error::EmptyTable)));
    }

    #[test]
    fn ratio_examples() {
        let t = ContingencyTable::from_counts(ids(&["a"]), ids(&["x", "y", "z"]), vec![1, 1, 0]).unwrap();
        let e = ExpectedCounts::from_values(1, 3, vec![0.001, 1.0, 0.5]).unwrap();
        let r = reporting_ratio(&t, &e).unwrap();
        assert!((r.rr[0] - 1000.0).abs() < 1e-9);
        assert!((r.information[0] - 9.965_784_284_662_087).abs() < 1e-9);
        assert_eq!(r.information[1], 0.0);
        assert_eq!(r.rr[2], 0.0);
        assert_eq!(r.information[2], f64::NEG_INFINITY);

        let bad = ExpectedCounts::from_values(1, 3, vec![0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(reporting_ratio(&t, &bad), Err(Error::StructuralZero { .. })));
    }

    fn arb_reports() -> impl Strategy<Value = Vec<IcsrReport>> {
        let drug = prop::sample::select(vec!["D1", "D2", "D3", "D4"]);
        let ae = prop::sample::select(vec!["A1", "A2", "A3", "A4", "A5"]);
        prop::collection::vec(
            (
                prop::collection::btree_set(drug, 1..4),
                prop::collection::btree_set(ae, 1..4),
            ),
            1..40,
        )
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(k, (d, e))| IcsrReport::new(format!("r{k}"), d, e).unwrap())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn margins_and_expected_identity(reports in arb_reports()) {
            let rs = ReportSet::new(reports).unwrap();
            let (t, s) = build_table(&rs, None, None).unwrap();
            let expect: f64 = rs.reports().iter().map(|r| r.events.len() as f64).sum();
            prop_assert_eq!(s.total_weight, expect);
            let rebuilt = ContingencyTable::from_counts(
                t.drug_ids().to_vec(), t.ae_ids().to_vec(), t.counts().to_vec()).unwrap();
            prop_assert_eq!(&rebuilt, &t);
            if t.grand_total() > 0 {
                let e = expected_counts(&t).unwrap();
                let n = t.grand_total() as f64;
                prop_assert!((e.total() - n).abs() <= 1e-9 * n);
            }
        }

        #[test]
        fn filters_are_idempotent(reports in arb_reports(), min_ae in 0u64..6, min_group in 0usize..3) {
            let rs = ReportSet::new(reports).unwrap();
            let (t, _) = build_table(&rs, None, None).unwrap();
            let onto = OntologyMap::new(t.ae_ids().iter().map(|a| {
                let g = if a.as_str() < "A3" { "G1" } else { "G2" };
                (a.clone(), g.to_string())
            })).unwrap();
            if let Ok((once, o1)) = apply_filters(&t, &onto, min_ae, min_group) {
                let (twice, o2) = apply_filters(&once, &o1, min_ae, min_group).unwrap();
                prop_assert_eq!(once, twice);
                prop_assert_eq!(o1, o2);
            }
        }
    }
}
