mod support;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pvsignal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvsignal")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    s(&p)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

// Two drugs on one report split its weight: n(D1,A1) = 0.5 + 1 rounds to 2,
// n(D2,A1) = 0.5 rounds away from zero to 1.
const REPORTS: &str = "report_id,drugs,events\nR1,D1;D2,A1\nR2,D1,A1;A2\nR3,D2,A2\n";
const ONTOLOGY: &str = "ae_id,group_id\nA1,G1\nA2,G1\n";

#[test]
fn ingest_weights_and_expected_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (r, o) = (write(d, "r.csv", REPORTS), write(d, "o.csv", ONTOLOGY));
    let out = d.join("ing");
    let res = pvsignal(&[
        "ingest",
        "--reports",
        &r,
        "--ontology",
        &o,
        "--min-ae-count",
        "1",
        "--min-group-size",
        "1",
        "--out",
        &s(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let mut rdr = csv::Reader::from_path(out.join("table.csv")).unwrap();
    let rows: Vec<(String, String, u64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].to_string(), r[3].parse().unwrap(), r[4].parse().unwrap())
        })
        .collect();
    // margins: rows 3, 2; columns 3, 2; total 5
    let want = [
        ("D1", "A1", 2, 1.8),
        ("D1", "A2", 1, 1.2),
        ("D2", "A1", 1, 1.2),
        ("D2", "A2", 1, 0.8),
    ];
    assert_eq!(rows.len(), 4);
    for ((d, a, n, e), w) in rows.iter().zip(want) {
        assert_eq!((d.as_str(), a.as_str(), *n), (w.0, w.1, w.2));
        assert!((e - w.3).abs() < 1e-12);
    }
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["command"], "ingest");
    assert_eq!(m["config"]["min_ae_count"], "1");
}

#[test]
fn exit_codes_by_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = s(&d.join("x"));
    // usage
    assert_eq!(pvsignal(&["fit-gps"]).status.code(), Some(2));
    assert_eq!(pvsignal(&["--help"]).status.code(), Some(0));
    // missing seed is a configuration error
    let table = write(d, "t.csv", "drug_id,ae_id,group_id,n,E\nD1,A1,G1,1,1\n");
    assert_eq!(pvsignal(&["thin", "--table", &table, "--out", &out]).status.code(), Some(2));
    assert_eq!(
        pvsignal(&["thin", "--table", &table, "--seed", "1", "--epsilon", "1.5", "--out", &out])
            .status
            .code(),
        Some(2)
    );
    // unreadable and malformed inputs are data errors
    assert_eq!(
        pvsignal(&["fit-gps", "--table", &s(&d.join("nope.csv")), "--out", &out]).status.code(),
        Some(3)
    );
    let bad = write(d, "bad.csv", "report_id,drugs,events\nR1,D1,A1\nR1,D2,A2\n");
    let onto = write(d, "o.csv", ONTOLOGY);
    let res = pvsignal(&["ingest", "--reports", &bad, "--ontology", &onto, "--out", &out]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains(":3"));
}

#[test]
fn config_file_fills_unset_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let table = write(
        d,
        "t.csv",
        "drug_id,ae_id,group_id,n,E\nD1,A1,G1,4,2\nD1,A2,G1,3,2.5\nD2,A1,G1,0,2\nD2,A2,G1,5,2.5\n",
    );
    let conf = write(d, "c.conf", "# split settings\nmethod = stratified\nepsilon = 0.25\nseed = 8\n");
    let out = d.join("a");
    let res = pvsignal(&["--config", &conf, "thin", "--table", &table, "--epsilon", "0.5", "--out", &s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let split = read_json(&out.join("split.json"));
    assert_eq!(split["method"], "stratified");
    assert_eq!(split["epsilon"], 0.5);
    assert_eq!(split["seed"], 8);

    let conf = write(d, "bad.conf", "epsilon = 0.5\nseeed = 8\n");
    let res = pvsignal(&["--config", &conf, "thin", "--table", &table, "--seed", "1", "--out", &s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("seeed"));
}

#[test]
fn rerun_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (reports, onto) = pvsignal::simulate::null_reports(
        &pvsignal::simulate::NullReportConfig {
            n_reports: 150,
            n_drugs: 3,
            group_sizes: vec![3, 3],
        },
        5,
    )
    .unwrap();
    support::write_inputs(d, &reports, &onto);
    let first = d.join("perm");
    let res = pvsignal(&[
        "permute",
        "--reports",
        &s(&d.join("reports.csv")),
        "--ontology",
        &s(&d.join("ontology.csv")),
        "--min-ae-count",
        "1",
        "--min-group-size",
        "1",
        "--n-permutations",
        "19",
        "--seed",
        "3",
        "--out",
        &s(&first),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let null = std::fs::read_to_string(first.join("null_maxS.csv")).unwrap();
    assert_eq!(null.lines().count(), 1 + 19);

    let second = d.join("again");
    let res = pvsignal(&["rerun", &s(&first.join("manifest.json")), "--out", &s(&second)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(support::output_files(&first), support::output_files(&second));
    assert_eq!(
        read_json(&first.join("manifest.json"))["args"],
        read_json(&second.join("manifest.json"))["args"]
    );
}

#[test]
fn report_joins_gps_and_zgps() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut body = String::from("drug_id,ae_id,group_id,n,E\n");
    for i in 0..4 {
        for j in 0..10 {
            let n = (i * 7 + j * 3) % 5 + usize::from(i == 0 && j < 3) * 12;
            body.push_str(&format!("D{i},A{j},G{},{n},{}\n", j / 5, 1.0 + (j % 3) as f64 * 0.5));
        }
    }
    let table = write(d, "t.csv", &body);
    let (gps, zgps, rep) = (d.join("gps"), d.join("zgps"), d.join("rep"));
    for args in [
        vec!["fit-gps", "--table", &table, "--out", &s(&gps)],
        vec!["fit-zgps", "--table", &table, "--out", &s(&zgps)],
        vec!["report", "--gps", &s(&gps), "--zgps", &s(&zgps), "--out", &s(&rep)],
    ] {
        let res = pvsignal(&args);
        assert!(res.status.success(), "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
    }
    let summary = read_json(&rep.join("report.json"));
    assert_eq!(summary["n_cells"], 40);
    let r = summary["pearson_ebgm_lambda_hat"].as_f64().unwrap();
    assert!(r > 0.0 && r <= 1.0);
    let text = std::fs::read_to_string(rep.join("report.csv")).unwrap();
    assert!(text.starts_with("drug_id,ae_id,group_id,n,E,ebgm,q01,gps_signal,lambda_hat,q,zgps_signal\n"));
    assert_eq!(text.lines().count(), 41);
}
