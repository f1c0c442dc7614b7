//! CSV and JSON readers and writers for every artifact the CLI produces.
//!
//! Floats are written with Rust's shortest round-trip formatting, so files are
//! byte-stable across runs and platforms.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::contingency::{ContingencyTable, ExpectedCounts, IcsrReport, OntologyMap, ReportSet};
use crate::error::{Error, Result};
use crate::gps::GpsSignal;
use crate::metrics::Roc;
use crate::permutation::PermutationResult;
use crate::zgps::ZgpsFit;

/// Version stamped into every manifest and summary JSON; bump on any change of
/// column sets or field names.
pub const SCHEMA_VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| parse_err(path, 1, format!("missing column {name}")))
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(';').map(str::trim).filter(|x| !x.is_empty()).collect()
}

fn record_line(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map_or(fallback, |p| p.line() as usize)
}

/// Reads `report_id, drugs, events` with `;`-separated lists.
pub fn read_reports(path: &Path) -> Result<ReportSet> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let (ci, cd, ce) = (
        column(&headers, "report_id", path)?,
        column(&headers, "drugs", path)?,
        column(&headers, "events", path)?,
    );
    let mut reports = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = record_line(&rec, k + 2);
        let id = rec.get(ci).unwrap_or("");
        if !seen.insert(id.to_string()) {
            return Err(parse_err(path, line, format!("duplicate report_id {id}")));
        }
        let r = IcsrReport::new(
            id,
            split_list(rec.get(cd).unwrap_or("")),
            split_list(rec.get(ce).unwrap_or("")),
        )
        .map_err(|e| parse_err(path, line, e.to_string()))?;
        reports.push(r);
    }
    ReportSet::new(reports)
}

/// Reads `ae_id, group_id`.
pub fn read_ontology(path: &Path) -> Result<OntologyMap> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let (ca, cg) = (column(&headers, "ae_id", path)?, column(&headers, "group_id", path)?);
    let mut pairs = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = record_line(&rec, k + 2);
        let (a, g) = (rec.get(ca).unwrap_or(""), rec.get(cg).unwrap_or(""));
        if a.is_empty() || g.is_empty() {
            return Err(parse_err(path, line, "empty ae_id or group_id"));
        }
        if let Some(prev) = pairs.insert(a.to_string(), g.to_string()) {
            if prev != g {
                return Err(parse_err(path, line, format!("AE {a} mapped to both {prev} and {g}")));
            }
        }
    }
    OntologyMap::new(pairs)
}

/// A long-format table as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTable {
    pub table: ContingencyTable,
    pub expected: ExpectedCounts,
    /// `None` when the file has no group column values.
    pub ontology: Option<OntologyMap>,
    /// False where `n` was empty (a missing cell).
    pub present: Vec<bool>,
}

/// Reads `drug_id, ae_id, group_id, n, E[, RR]`. Every drug × AE cell must be
/// listed exactly once; an empty `n` marks the cell as missing.
pub fn read_long_table(path: &Path) -> Result<LongTable> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let cd = column(&headers, "drug_id", path)?;
    let ca = column(&headers, "ae_id", path)?;
    let cg = column(&headers, "group_id", path)?;
    let cn = column(&headers, "n", path)?;
    let ce = column(&headers, "E", path)?;
    let mut cells: BTreeMap<(String, String), (Option<u64>, f64, usize)> = BTreeMap::new();
    let mut groups: BTreeMap<String, String> = BTreeMap::new();
    let mut any_group = false;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = record_line(&rec, k + 2);
        let d = rec.get(cd).unwrap_or("").to_string();
        let a = rec.get(ca).unwrap_or("").to_string();
        if d.is_empty() || a.is_empty() {
            return Err(parse_err(path, line, "empty drug_id or ae_id"));
        }
        let g = rec.get(cg).unwrap_or("");
        if !g.is_empty() {
            any_group = true;
            if let Some(prev) = groups.insert(a.clone(), g.to_string()) {
                if prev != g {
                    return Err(parse_err(path, line, format!("AE {a} in both {prev} and {g}")));
                }
            }
        }
        let n_raw = rec.get(cn).unwrap_or("");
        let n = if n_raw.is_empty() {
            None
        } else {
            Some(
                n_raw
                    .parse::<u64>()
                    .map_err(|e| parse_err(path, line, format!("n = {n_raw}: {e}")))?,
            )
        };
        let e_raw = rec.get(ce).unwrap_or("");
        let e: f64 = e_raw
            .parse()
            .map_err(|err| parse_err(path, line, format!("E = {e_raw}: {err}")))?;
        if !(e >= 0.0 && e.is_finite()) {
            return Err(parse_err(path, line, format!("E must be finite and nonnegative, got {e}")));
        }
        if cells.insert((d.clone(), a.clone()), (n, e, line)).is_some() {
            return Err(parse_err(path, line, format!("duplicate cell ({d}, {a})")));
        }
    }
    let drugs: Vec<String> = cells.keys().map(|k| k.0.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let aes: Vec<String> = cells.keys().map(|k| k.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if drugs.is_empty() {
        return Err(parse_err(path, 1, "no cells"));
    }
    if cells.len() != drugs.len() * aes.len() {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected {} cells for {} drugs x {} AEs, found {}",
                drugs.len() * aes.len(),
                drugs.len(),
                aes.len(),
                cells.len()
            ),
        ));
    }
    let mut counts = Vec::with_capacity(cells.len());
    let mut expected = Vec::with_capacity(cells.len());
    let mut present = Vec::with_capacity(cells.len());
    // BTreeMap order is drug-major then AE, i.e. row-major
    for (n, e, _) in cells.values() {
        counts.push(n.unwrap_or(0));
        expected.push(*e);
        present.push(n.is_some());
    }
    let ontology = if any_group {
        if let Some(a) = aes.iter().find(|a| !groups.contains_key(*a)) {
            return Err(parse_err(path, 1, format!("AE {a} has no group_id")));
        }
        Some(OntologyMap::new(groups)?)
    } else {
        None
    };
    let (rows, cols) = (drugs.len(), aes.len());
    Ok(LongTable {
        table: ContingencyTable::from_counts(drugs, aes, counts)?,
        expected: ExpectedCounts::from_values(rows, cols, expected)?,
        ontology,
        present,
    })
}

/// Writes a CSV with the given header and rows.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new().from_writer(BufWriter::new(f));
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// `drug_id, ae_id, group_id, n, E, RR`; missing cells have empty `n` and `RR`.
pub fn write_long_table(
    path: &Path,
    table: &ContingencyTable,
    expected: &ExpectedCounts,
    ontology: Option<&OntologyMap>,
    present: Option<&[bool]>,
) -> Result<()> {
    expected.check_shape(table)?;
    let cols = table.n_aes();
    let rows = (0..table.counts().len()).map(|k| {
        let (i, j) = (k / cols, k % cols);
        let ae = &table.ae_ids()[j];
        let e = expected.values()[k];
        let n = table.counts()[k];
        let here = present.is_none_or(|p| p[k]);
        let rr = if !here {
            String::new()
        } else if n == 0 {
            "0".into()
        } else if e > 0.0 {
            fmt_f64(n as f64 / e)
        } else {
            String::new()
        };
        vec![
            table.drug_ids()[i].clone(),
            ae.clone(),
            ontology.and_then(|o| o.group_of(ae)).unwrap_or("").to_string(),
            if here { n.to_string() } else { String::new() },
            fmt_f64(e),
            rr,
        ]
    });
    write_csv(path, &["drug_id", "ae_id", "group_id", "n", "E", "RR"], rows)
}

/// `drug_id, ae_id, n, E, ebgm, q01, q99, is_signal`.
pub fn write_gps_signals(path: &Path, signals: &[GpsSignal]) -> Result<()> {
    let rows = signals.iter().map(|s| {
        vec![
            s.drug_id.clone(),
            s.ae_id.clone(),
            s.n.to_string(),
            fmt_f64(s.expected),
            fmt_f64(s.ebgm),
            fmt_f64(s.lower),
            fmt_f64(s.upper),
            s.is_signal.to_string(),
        ]
    });
    write_csv(
        path,
        &["drug_id", "ae_id", "n", "E", "ebgm", "q01", "q99", "is_signal"],
        rows,
    )
}

/// `drug_id, group_id, p_hat, mu_hat, s_hat` for every fitted group.
pub fn write_zgps_groups(path: &Path, fit: &ZgpsFit) -> Result<()> {
    let mut rows = Vec::new();
    for (i, drug) in fit.drug_ids.iter().enumerate() {
        for (g, group) in fit.group_ids.iter().enumerate() {
            if let Ok(f) = &fit.groups[g] {
                rows.push(vec![
                    drug.clone(),
                    group.clone(),
                    fmt_f64(f.p_hat[i]),
                    fmt_f64(f.mu_hat[i]),
                    fmt_f64(f.s_hat[i]),
                ]);
            }
        }
    }
    write_csv(path, &["drug_id", "group_id", "p_hat", "mu_hat", "s_hat"], rows)
}

/// `drug_id, ae_id, group_id, n, E, lambda_hat, pi_hat`.
pub fn write_zgps_ae(path: &Path, fit: &ZgpsFit, table: &ContingencyTable, expected: &ExpectedCounts) -> Result<()> {
    expected.check_shape(table)?;
    let cols = table.n_aes();
    let rows = (0..table.counts().len()).map(|k| {
        let (i, j) = (k / cols, k % cols);
        let est = fit.estimates[k];
        vec![
            fit.drug_ids[i].clone(),
            fit.ae_ids[j].clone(),
            fit.group_ids[fit.column_group[j]].clone(),
            table.counts()[k].to_string(),
            fmt_f64(expected.values()[k]),
            opt_f64(est.map(|e| e.lambda_hat)),
            opt_f64(est.map(|e| e.pi_hat)),
        ]
    });
    write_csv(
        path,
        &["drug_id", "ae_id", "group_id", "n", "E", "lambda_hat", "pi_hat"],
        rows,
    )
}

/// `replicate, maxS` for the successful replicates.
pub fn write_null(path: &Path, res: &PermutationResult) -> Result<()> {
    let rows = res
        .replicate_ids
        .iter()
        .zip(&res.null_max)
        .map(|(b, v)| vec![b.to_string(), fmt_f64(*v)]);
    write_csv(path, &["replicate", "maxS"], rows)
}

/// `drug_id, group_id, s_hat, q`.
pub fn write_q_values(path: &Path, res: &PermutationResult) -> Result<()> {
    let k = res.group_ids.len();
    let rows = (0..res.s_hat.len()).filter(|&x| !res.s_hat[x].is_nan()).map(|x| {
        vec![
            res.drug_ids[x / k].clone(),
            res.group_ids[x % k].clone(),
            fmt_f64(res.s_hat[x]),
            fmt_f64(res.q_values[x]),
        ]
    });
    write_csv(path, &["drug_id", "group_id", "s_hat", "q"], rows)
}

/// Reads back the q-value CSV as (drug, group) → q.
pub fn read_q_values(path: &Path) -> Result<BTreeMap<(String, String), f64>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let (cd, cg, cq) = (
        column(&headers, "drug_id", path)?,
        column(&headers, "group_id", path)?,
        column(&headers, "q", path)?,
    );
    let mut out = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = record_line(&rec, k + 2);
        let q_raw = rec.get(cq).unwrap_or("");
        let q: f64 = q_raw
            .parse()
            .map_err(|e| parse_err(path, line, format!("q = {q_raw}: {e}")))?;
        out.insert(
            (rec.get(cd).unwrap_or("").to_string(), rec.get(cg).unwrap_or("").to_string()),
            q,
        );
    }
    Ok(out)
}

/// `fpr, tpr, threshold`.
pub fn write_roc(path: &Path, roc: &Roc) -> Result<()> {
    let rows = roc
        .points
        .iter()
        .map(|p| vec![fmt_f64(p.fpr), fmt_f64(p.tpr), fmt_f64(p.threshold)]);
    write_csv(path, &["fpr", "tpr", "threshold"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = ContingencyTable::from_counts(
            vec!["D1".into(), "D2".into()],
            vec!["A1".into(), "A2".into(), "A3".into()],
            vec![3, 0, 1, 2, 5, 0],
        )
        .unwrap();
        let e = crate::contingency::expected_counts(&t).unwrap();
        let o = OntologyMap::new([("A1", "G1"), ("A2", "G1"), ("A3", "G2")]).unwrap();
        let present = [true, true, false, true, true, true];
        write_long_table(&p, &t, &e, Some(&o), Some(&present)).unwrap();
        let back = read_long_table(&p).unwrap();
        assert_eq!(back.present, present);
        assert_eq!(back.ontology.as_ref(), Some(&o));
        assert_eq!(back.expected, e);
        let mut expect = t.counts().to_vec();
        expect[2] = 0;
        assert_eq!(back.table.counts(), expect.as_slice());
    }

    #[test]
    fn report_parsing_errors_carry_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "report_id,drugs,events\nR1,X1,A1;A2\nR2,,A1\n").unwrap();
        match read_reports(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "report_id,drugs,events\nR1,X1; X2 ,A1;A2\nR1,X1,A1\n").unwrap();
        assert!(matches!(read_reports(&p), Err(Error::Parse { line: 3, .. })));
        std::fs::write(&p, "report_id,drugs,events\nR1,X1; X2 ,A1;A2;A1\n").unwrap();
        let rs = read_reports(&p).unwrap();
        assert_eq!(rs.reports()[0].drugs.len(), 2);
        assert_eq!(rs.reports()[0].events.len(), 2);
    }

    #[test]
    fn float_format_is_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 12345.678] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(2.0), "2");
    }
}
