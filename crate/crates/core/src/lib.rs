//! Signal detection for spontaneous adverse-event reporting data.
//!
//! GPS/EBGM shrinkage of drug-AE reporting ratios, the zero-inflated
//! negative binomial zGPS.AO model for AE groups, maxS permutation
//! inference, data thinning for validation, and the simulation harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cli;
pub mod contingency;
pub mod error;
pub mod gps;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod permutation;
pub mod rng;
pub mod simulate;
pub mod thinning;
pub mod validation;
pub mod zgps;

pub use contingency::{
    apply_filters, build_table, expected_counts, reporting_ratio, ContingencyTable, ExpectedCounts, IcsrReport,
    IngestSummary, OntologyMap, ReportSet, ReportingRatios,
};
pub use error::{Error, ErrorKind, Result};
pub use gps::{fit_gps, gps_marginal_loglik, gps_posterior, gps_signals, GpsFit, GpsHyper};
pub use zgps::{eb_lambda, fit_all_groups, fit_zinb_group, ZgpsFit, ZinbGroupFit, ZinbOptions};
