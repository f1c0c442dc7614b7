mod support;

use std::collections::BTreeMap;

use approx::assert_relative_eq;
use proptest::prelude::*;
use pvsignal::contingency::{expected_counts, reporting_ratio, ContingencyTable, IcsrReport, ReportSet};
use pvsignal::gps::{fit_gps, gps_marginal_loglik, gps_posterior, nb_logpmf, GpsHyper};
use pvsignal::metrics::classification_metrics;
use pvsignal::permutation::{permute_reports, q_values};
use pvsignal::thinning::{split, SplitMethod};
use pvsignal::zgps::{eb_lambda, zinb_logpmf};

fn arb_table() -> impl Strategy<Value = ContingencyTable> {
    (1usize..5, 1usize..7)
        .prop_flat_map(|(i, j)| (Just(i), Just(j), prop::collection::vec(0u64..30, i * j)))
        .prop_filter_map("empty margin", |(i, j, mut counts)| {
            // keep every row and column reported at least once
            for r in 0..i {
                counts[r * j + r % j] += 1;
            }
            for c in 0..j {
                counts[(c % i) * j + c] += 1;
            }
            ContingencyTable::from_counts(
                (0..i).map(|k| format!("D{k}")).collect(),
                (0..j).map(|k| format!("A{k}")).collect(),
                counts,
            )
            .ok()
        })
}

fn arb_theta() -> impl Strategy<Value = GpsHyper> {
    (0.05f64..5.0, 0.05f64..5.0, 0.05f64..5.0, 0.05f64..5.0, 0.01f64..0.99)
        .prop_map(|(a1, b1, a2, b2, w)| GpsHyper::new(a1, b1, a2, b2, w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_conserves_or_partitions(table in arb_table(), eps in 0.05f64..0.95, seed in any::<u64>()) {
        let e = expected_counts(&table).unwrap();
        for m in SplitMethod::all() {
            let pair = split(m, &table, &e, eps, seed).unwrap();
            for k in 0..table.counts().len() {
                let (a, b, n) = (pair.train.counts()[k], pair.valid.counts()[k], table.counts()[k]);
                match m {
                    SplitMethod::Random => {
                        prop_assert!(pair.train_present[k] != pair.valid_present[k]);
                        let kept = if pair.train_present[k] { a } else { b };
                        prop_assert_eq!(kept, n);
                    }
                    _ => {
                        prop_assert_eq!(a + b, n);
                        prop_assert!(pair.train_present[k] && pair.valid_present[k]);
                    }
                }
                if m == SplitMethod::Stratified && n >= 2 {
                    prop_assert!(a > 0 && b > 0, "n={} split {}+{}", n, a, b);
                }
            }
            if m == SplitMethod::Thinning {
                for (t, v) in pair.train_expected.values().iter().zip(e.values()) {
                    assert_relative_eq!(*t, eps * v, max_relative = 1e-12);
                }
                for (t, v) in pair.valid_expected.values().iter().zip(e.values()) {
                    assert_relative_eq!(*t, (1.0 - eps) * v, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn reporting_ratio_definition(table in arb_table()) {
        let e = expected_counts(&table).unwrap();
        let rr = reporting_ratio(&table, &e).unwrap();
        for k in 0..table.counts().len() {
            let n = table.counts()[k];
            if n == 0 {
                prop_assert_eq!(rr.rr[k], 0.0);
                prop_assert_eq!(rr.information[k], f64::NEG_INFINITY);
            } else {
                assert_relative_eq!(rr.rr[k], n as f64 / e.values()[k], max_relative = 1e-12);
                assert_relative_eq!(rr.information[k], rr.rr[k].log2(), max_relative = 1e-12, epsilon = 1e-12);
            }
        }
        assert_relative_eq!(e.total(), table.grand_total() as f64, max_relative = 1e-12);
    }

    #[test]
    fn eb_lambda_closed_form(n in 0u64..50, e in 0.01f64..50.0, p in 0.0f64..0.99, mu in 0.05f64..10.0, r in 0.05f64..100.0) {
        let est = eb_lambda(n, e, p, mu, r);
        prop_assert!(est.lambda_hat >= 0.0);
        if n > 0 {
            prop_assert_eq!(est.pi_hat, 0.0);
            assert_relative_eq!(est.lambda_hat, mu * (r + n as f64) / (r + e * mu), max_relative = 1e-12);
        } else {
            let nb0 = (r / (r + e * mu)).powf(r);
            let pi = p / (p + (1.0 - p) * nb0);
            assert_relative_eq!(est.pi_hat, pi, max_relative = 1e-10);
            prop_assert!((0.0..=1.0).contains(&est.pi_hat));
        }
    }

    #[test]
    fn zinb_pmf_normalises(e in 0.05f64..5.0, p in 0.0f64..0.9, mu in 0.1f64..3.0, r in 0.3f64..50.0) {
        let total: f64 = (0..2000u64).map(|n| zinb_logpmf(n, e, r, p, mu).exp()).sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-9);
        let mean: f64 = (0..2000u64).map(|n| n as f64 * zinb_logpmf(n, e, r, p, mu).exp()).sum();
        assert_relative_eq!(mean, (1.0 - p) * e * mu, max_relative = 1e-8);
    }

    #[test]
    fn nb_pmf_normalises(shape in 0.1f64..10.0, q in 0.01f64..0.9) {
        let total: f64 = (0..4000u64).map(|n| nb_logpmf(n, shape, q).exp()).sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn gps_posterior_invariants(theta in arb_theta(), n in 0u64..60, e in 0.05f64..30.0, prob in 0.001f64..0.999) {
        let post = gps_posterior(n, e, &theta);
        prop_assert!((0.0..=1.0).contains(&post.omega_star));
        prop_assert_eq!(post.ebgm, post.eb_log2.exp2());
        let q = post.quantile(prob).unwrap();
        prop_assert!((post.cdf(q) - prob).abs() <= 1e-8);
    }

    #[test]
    fn q_values_bounds_and_order(null in prop::collection::vec(0.0f64..5.0, 1..60), stats in prop::collection::vec(0.0f64..5.0, 1..20)) {
        let observed = stats.iter().cloned().fold(f64::MIN, f64::max);
        let q = q_values(&stats, observed, &null);
        let floor = 1.0 / (null.len() + 1) as f64;
        for (a, qa) in stats.iter().zip(&q) {
            prop_assert!(*qa >= floor && *qa <= 1.0);
            for (b, qb) in stats.iter().zip(&q) {
                if a < b {
                    prop_assert!(qa >= qb);
                }
            }
        }
    }

    #[test]
    fn f1_identity(pred in prop::collection::vec(0.0f64..3.0, 2..60), seed in any::<u64>()) {
        let obs: Vec<Option<u64>> = pred.iter().enumerate().map(|(k, _)| Some((seed >> (k % 64)) & 1)).collect();
        let pred: Vec<Option<f64>> = pred.into_iter().map(Some).collect();
        let m = classification_metrics(&pred, &obs, 0.5).unwrap();
        prop_assert_eq!(m.n_missing, 0);
        if m.precision + m.sensitivity > 0.0 {
            assert_relative_eq!(m.f1, 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity), max_relative = 1e-12);
        }
    }
}

fn arb_report_set() -> impl Strategy<Value = ReportSet> {
    let drug = prop::sample::select(vec!["D1", "D2", "D3"]);
    let ae = prop::sample::select(vec!["A1", "A2", "A3", "A4"]);
    prop::collection::vec((prop::collection::btree_set(drug, 1..3), prop::collection::btree_set(ae, 1..4)), 2..30)
        .prop_map(|v| {
            let reports = v
                .into_iter()
                .enumerate()
                .map(|(k, (d, e))| IcsrReport::new(format!("R{k}"), d, e).unwrap())
                .collect();
            ReportSet::new(reports).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_moves_only_event_sets(reports in arb_report_set(), seed in any::<u64>()) {
        let permuted = permute_reports(&reports, seed).unwrap();
        let mut before: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        let mut after = before.clone();
        for (a, b) in reports.reports().iter().zip(permuted.reports()) {
            prop_assert_eq!(&a.report_id, &b.report_id);
            prop_assert_eq!(&a.drugs, &b.drugs);
            *before.entry(a.events.iter().cloned().collect()).or_default() += 1;
            *after.entry(b.events.iter().cloned().collect()).or_default() += 1;
        }
        prop_assert_eq!(before, after);
    }

    #[test]
    fn single_drug_column_margins_survive_permutation(reports in arb_report_set(), seed in any::<u64>()) {
        let single: Vec<IcsrReport> = reports
            .reports()
            .iter()
            .map(|r| IcsrReport::new(r.report_id.clone(), r.drugs.iter().take(1).cloned(), r.events.clone()).unwrap())
            .collect();
        let reports = ReportSet::new(single).unwrap();
        let permuted = permute_reports(&reports, seed).unwrap();
        let (a, _) = pvsignal::build_table(&reports, None, None).unwrap();
        let (b, _) = pvsignal::build_table(&permuted, None, None).unwrap();
        let margins = |t: &ContingencyTable| -> BTreeMap<String, u64> {
            t.ae_ids().iter().cloned().zip(t.col_margins().iter().copied()).collect()
        };
        prop_assert_eq!(margins(&a), margins(&b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gps_fit_never_worse_than_start(table in arb_table()) {
        let e = expected_counts(&table).unwrap();
        let init = GpsHyper::default();
        let start = gps_marginal_loglik(&table, &e, &init).unwrap();
        let fit = fit_gps(&table, &e, &init, 1e-8, 500).unwrap();
        prop_assert!(fit.loglik >= start - 1e-9);
        // cell order does not enter the likelihood
        let mut rev = table.counts().to_vec();
        rev.reverse();
        let mut rev_e = e.values().to_vec();
        rev_e.reverse();
        let t2 = ContingencyTable::from_counts(table.drug_ids().to_vec(), table.ae_ids().to_vec(), rev).unwrap();
        let e2 = pvsignal::contingency::ExpectedCounts::from_values(table.n_drugs(), table.n_aes(), rev_e).unwrap();
        let l2 = gps_marginal_loglik(&t2, &e2, &fit.theta).unwrap();
        assert_relative_eq!(l2, fit.loglik, max_relative = 1e-12);
    }
}

#[test]
fn quadrature_oracle_matches_closed_gamma_moment() {
    // the oracle integrates a plain gamma density to one and recovers its mean
    let (shape, rate) = (2.5, 1.7);
    let logf = |k: f64| move |t: f64| support::log_gamma_pdf(t.exp(), shape, rate) + (1.0 + k) * t;
    let z = support::integrate_log_scale(logf(0.0), (shape / rate).ln(), 0.01);
    let m = support::integrate_log_scale(logf(1.0), (shape / rate).ln(), 0.01);
    assert_relative_eq!(z, 1.0, max_relative = 1e-12);
    assert_relative_eq!(m, shape / rate, max_relative = 1e-12);
}
