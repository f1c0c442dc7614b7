//! Command-line front end.
//!
//! Every option can come from a flag, from a `key = value` config file, or
//! from its default, in that order of precedence. Each run writes a
//! `manifest.json` holding the fully resolved argument list, so
//! `pvsignal rerun <manifest>` regenerates the directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::contingency::{apply_filters, build_table, expected_counts, OntologyMap};
use crate::error::{Error, ErrorKind, Result};
use crate::gps::{fit_gps, gps_signals, GpsHyper};
use crate::io::{self, fmt_f64, write_csv, write_json, SCHEMA_VERSION};
use crate::metrics::pearson_correlation;
use crate::permutation::{null_distribution, zgps_signals, MaxStatistic, Pipeline, ShufflePermuter};
use crate::simulate::{simulation_i, simulation_ii, Scenario, SimIConfig, SimIIConfig, SIM1_GROUP_SIZES};
use crate::thinning::{coverage_report, split, SplitMethod};
use crate::validation::{validate, ValidationConfig};
use crate::zgps::{fit_all_groups_masked, ZinbOptions};

#[derive(Debug, Parser)]
#[command(name = "pvsignal", version, about = "Drug-AE signal detection with GPS and zGPS.AO")]
pub struct Cli {
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// `key = value` file supplying option values not given as flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the filtered drug x AE table from reports and an AE ontology.
    Ingest(IngestArgs),
    /// Fit the Gamma-Poisson Shrinker and flag signals.
    FitGps(FitGpsArgs),
    /// Fit the zero-inflated model per AE group.
    FitZgps(FitZgpsArgs),
    /// maxS permutation null, q-values and zGPS signals.
    Permute(PermuteArgs),
    /// Split a table into train and validation parts.
    Thin(ThinArgs),
    /// Evaluate split methods over epsilons and seeds.
    Validate(ValidateArgs),
    /// Run a simulation study.
    Simulate(SimulateArgs),
    /// Combine GPS and zGPS outputs into one signal report.
    Report(ReportArgs),
    /// Re-run the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub reports: Option<PathBuf>,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub min_ae_count: Option<u64>,
    #[arg(long)]
    pub min_group_size: Option<usize>,
    /// Comma-separated drug identifiers to keep.
    #[arg(long)]
    pub drug_whitelist: Option<String>,
    #[arg(long)]
    pub ae_whitelist: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitGpsArgs {
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Starting hyperparameters `alpha1,beta1,alpha2,beta2,omega`.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub rr_threshold: Option<f64>,
    #[arg(long)]
    pub lower_prob: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitZgpsArgs {
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Needed when the table has no group_id values.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Hold the dispersion at this value.
    #[arg(long)]
    pub fixed_r: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PermuteArgs {
    #[arg(long)]
    pub reports: Option<PathBuf>,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub min_ae_count: Option<u64>,
    #[arg(long)]
    pub min_group_size: Option<usize>,
    #[arg(long)]
    pub drug_whitelist: Option<String>,
    #[arg(long)]
    pub ae_whitelist: Option<String>,
    #[arg(long)]
    pub n_permutations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `group_rate` (max s-hat) or `ae_rate` (max lambda-hat).
    #[arg(long)]
    pub statistic: Option<String>,
    #[arg(long)]
    pub rr_threshold: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ThinArgs {
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// `thinning`, `stratified` or `random`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Comma-separated subset of thinning, stratified, random.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub epsilons: Option<String>,
    /// Comma-separated seeds, or a range `a..b` (inclusive).
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// `standard`, `no_dispersion` (Simulation I) or `comparison` (Simulation II).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Simulation I group sizes, comma-separated.
    #[arg(long)]
    pub group_sizes: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub zero_target: Option<f64>,
    #[arg(long)]
    pub pilot_datasets: Option<usize>,
    #[arg(long)]
    pub drug_sigma: Option<f64>,
    #[arg(long)]
    pub ae_sigma: Option<f64>,
    #[arg(long)]
    pub signal_threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of `fit-gps`.
    #[arg(long)]
    pub gps: Option<PathBuf>,
    /// Output directory of `fit-zgps` or `permute`.
    #[arg(long)]
    pub zgps: Option<PathBuf>,
    /// Output directory of `permute`, for q-values.
    #[arg(long)]
    pub permute: Option<PathBuf>,
    #[arg(long)]
    pub rr_threshold: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    /// A manifest.json written by an earlier run.
    pub manifest: PathBuf,
    /// Output directory; defaults to the manifest's own directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit code of an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

/// Parses `args` (without the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("pvsignal")).chain(args.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.workers {
            if n == 0 {
                return Err(Error::invalid("--workers must be positive"));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::invalid(format!("thread pool: {e}")))?
    };
    let settings = Settings::load(cli.config.as_deref())?;
    let workers = pool.current_num_threads();
    pool.install(|| dispatch(cli.command, &settings, workers))
}

fn dispatch(command: Command, s: &Settings, workers: usize) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(a, s, workers),
        Command::FitGps(a) => cmd_fit_gps(a, s, workers),
        Command::FitZgps(a) => cmd_fit_zgps(a, s, workers),
        Command::Permute(a) => cmd_permute(a, s, workers),
        Command::Thin(a) => cmd_thin(a, s, workers),
        Command::Validate(a) => cmd_validate(a, s, workers),
        Command::Simulate(a) => cmd_simulate(a, s, workers),
        Command::Report(a) => cmd_report(a, s, workers),
        Command::Rerun(a) => cmd_rerun(a, workers),
    }
}

// ---------------------------------------------------------------------------
// Option resolution

/// Values from the config file, with bookkeeping of which keys were consumed.
struct Settings {
    source: Option<PathBuf>,
    values: BTreeMap<String, (String, usize)>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            for (k, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::InvalidArgument(format!(
                    "{}:{}: expected key = value",
                    p.display(),
                    k + 1
                )))?;
                let key = normalize_key(key.trim());
                values.insert(key, (value.trim().to_string(), k + 1));
            }
        }
        Ok(Self {
            source: path.map(Path::to_path_buf),
            values,
        })
    }

    fn resolver(&self) -> Resolver<'_> {
        Resolver {
            settings: self,
            used: BTreeSet::new(),
            args: Vec::new(),
            config: serde_json::Map::new(),
        }
    }
}

fn normalize_key(k: &str) -> String {
    match k {
        "J" | "j" => "group_sizes".into(),
        other => other.replace('-', "_"),
    }
}

/// Resolves options in flag > config > default order and records the result
/// as a canonical argument list.
struct Resolver<'a> {
    settings: &'a Settings,
    used: BTreeSet<String>,
    args: Vec<String>,
    config: serde_json::Map<String, Value>,
}

impl Resolver<'_> {
    fn config_value<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.settings.values.get(key) {
            None => Ok(None),
            Some((raw, line)) => raw.parse::<T>().map(Some).map_err(|e| {
                Error::InvalidArgument(format!(
                    "{}:{line}: {key} = {raw}: {e}",
                    self.settings.source.as_deref().unwrap_or(Path::new("config")).display()
                ))
            }),
        }
    }

    fn record(&mut self, key: &str, text: String) {
        self.used.insert(key.to_string());
        self.args.push(format!("--{}", key.replace('_', "-")));
        self.args.push(text.clone());
        self.config.insert(key.to_string(), Value::String(text));
    }

    fn opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + ToString,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.config_value(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v.to_string());
        } else {
            self.used.insert(key.to_string());
        }
        Ok(v)
    }

    fn or<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + ToString,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.config_value(key)?.unwrap_or(default),
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + ToString,
        T::Err: Display,
    {
        self.opt(key, flag)?
            .ok_or_else(|| Error::InvalidArgument(format!("--{} is required", key.replace('_', "-"))))
    }

    fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        let p: String = self.required(key, flag.map(|p| p.to_string_lossy().into_owned()))?;
        Ok(PathBuf::from(p))
    }

    fn opt_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        Ok(self
            .opt(key, flag.map(|p| p.to_string_lossy().into_owned()))?
            .map(PathBuf::from))
    }

    /// Fails on config keys this command does not understand.
    fn finish(self, command: &str) -> Result<Invocation> {
        if let Some((k, (_, line))) = self.settings.values.iter().find(|(k, _)| !self.used.contains(*k)) {
            return Err(Error::InvalidArgument(format!(
                "{}:{line}: unknown key {k} for {command}",
                self.settings.source.as_deref().unwrap_or(Path::new("config")).display()
            )));
        }
        let mut args = vec![command.to_string()];
        args.extend(self.args);
        Ok(Invocation {
            command: command.to_string(),
            args,
            config: Value::Object(self.config),
        })
    }
}

struct Invocation {
    command: String,
    args: Vec<String>,
    config: Value,
}

fn parse_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| Error::InvalidArgument(format!("{what} {s}: {e}"))))
        .collect()
}

fn parse_seeds(raw: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = raw.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| Error::invalid(format!("seed range {raw}: {e}")))?;
        let b: u64 = b.trim().parse().map_err(|e| Error::invalid(format!("seed range {raw}: {e}")))?;
        if b < a {
            return Err(Error::invalid(format!("empty seed range {raw}")));
        }
        return Ok((a..=b).collect());
    }
    parse_list(raw, "seed")
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool: &'static str,
    tool_version: &'static str,
    command: &'a str,
    /// Complete argument list, without `--out`, `--workers` and `--config`.
    args: &'a [String],
    config: &'a Value,
    outputs: &'a [&'a str],
    /// Recorded for information only; outputs do not depend on it.
    workers: usize,
}

fn write_manifest(out: &Path, inv: &Invocation, outputs: &[&str], workers: usize) -> Result<()> {
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            schema_version: SCHEMA_VERSION,
            tool: "pvsignal",
            tool_version: env!("CARGO_PKG_VERSION"),
            command: &inv.command,
            args: &inv.args,
            config: &inv.config,
            outputs,
            workers,
        },
    )
}

fn with_schema(mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    v
}

fn zinb_options(r: &mut Resolver, tol: Option<f64>, max_iter: Option<usize>) -> Result<ZinbOptions> {
    let d = ZinbOptions::default();
    Ok(ZinbOptions {
        tol: r.or("tol", tol, d.tol)?,
        max_iter: r.or("max_iter", max_iter, d.max_iter)?,
        ..d
    })
}

fn whitelist(raw: Option<String>) -> Result<Option<Vec<String>>> {
    match raw {
        None => Ok(None),
        Some(s) => {
            let v: Vec<String> = parse_list(&s, "identifier")?;
            if v.is_empty() {
                return Err(Error::invalid("whitelists must not be empty"));
            }
            Ok(Some(v))
        }
    }
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_ingest(a: IngestArgs, s: &Settings, workers: usize) -> Result<()> {
    let mut r = s.resolver();
    let reports_path = r.path("reports", a.reports)?;
    let ontology_path = r.path("ontology", a.ontology)?;
    let min_ae = r.or("min_ae_count", a.min_ae_count, 15)?;
    let min_group = r.or("min_group_size", a.min_group_size, 15)?;
    let dw = whitelist(r.opt("drug_whitelist", a.drug_whitelist)?)?;
    let aw = whitelist(r.opt("ae_whitelist", a.ae_whitelist)?)?;
    let inv = r.finish("ingest")?;

    let reports = io::read_reports(&reports_path)?;
    let ontology = io::read_ontology(&ontology_path)?;
    let (raw, summary) = build_table(&reports, dw.as_deref(), aw.as_deref())?;
    let (table, onto) = apply_filters(&raw, &ontology, min_ae, min_group)?;
    let expected = expected_counts(&table)?;

    prepare_out(&a.out)?;
    io::write_long_table(&a.out.join("table.csv"), &table, &expected, Some(&onto), None)?;
    write_json(
        &a.out.join("ingest_summary.json"),
        &with_schema(json!({
            "reports": summary,
            "n_drugs": table.n_drugs(),
            "n_aes_before_filtering": raw.n_aes(),
            "n_aes": table.n_aes(),
            "n_groups": onto.groups().len(),
            "grand_total": table.grand_total(),
            "zero_fraction": table.zero_fraction(),
        })),
    )?;
    write_manifest(&a.out, &inv, &["table.csv", "ingest_summary.json"], workers)
}

fn read_table_with_ontology(
    table_path: &Path,
    ontology_path: Option<&Path>,
) -> Result<(io::LongTable, OntologyMap)> {
    let lt = io::read_long_table(table_path)?;
    let onto = match (ontology_path, &lt.ontology) {
        (Some(p), _) => io::read_ontology(p)?,
        (None, Some(o)) => o.clone(),
        (None, None) => {
            return Err(Error::invalid(format!(
                "{} has no group_id values; pass --ontology",
                table_path.display()
            )))
        }
    };
    Ok((lt, onto))
}

fn cmd_fit_gps(a: FitGpsArgs, s: &Settings, workers: usize) -> Result<()> {
    let mut r = s.resolver();
    let table_path = r.path("table", a.table)?;
    let d = GpsHyper::default();
    let init_raw = r.or(
        "init",
        a.init,
        join(&[d.alpha1, d.beta1, d.alpha2, d.beta2, d.omega].map(fmt_f64)),
    )?;
    let tol = r.or("tol", a.tol, 1e-8)?;
    let max_iter = r.or("max_iter", a.max_iter, 2000)?;
    let rr = r.or("rr_threshold", a.rr_threshold, 2.0)?;
    let lower = r.or("lower_prob", a.lower_prob, 0.01)?;
    let inv = r.finish("fit-gps")?;

    let init: Vec<f64> = parse_list(&init_raw, "init value")?;
    if init.len() != 5 {
        return Err(Error::invalid("--init needs five values alpha1,beta1,alpha2,beta2,omega"));
    }
    let init = GpsHyper::new(init[0], init[1], init[2], init[3], init[4])?;
    let lt = io::read_long_table(&table_path)?;
    if lt.present.iter().any(|p| !p) {
        return Err(Error::invalid("fit-gps needs a table without missing cells"));
    }
    let fit = fit_gps(&lt.table, &lt.expected, &init, tol, max_iter)?;
    let signals = gps_signals(&lt.table, &lt.expected, &fit.theta, rr, lower)?;

    prepare_out(&a.out)?;
    io::write_gps_signals(&a.out.join("gps_signals.csv"), &signals)?;
    write_json(
        &a.out.join("gps_fit.json"),
        &with_schema(json!({
            "fit": fit,
            "n_signals": signals.iter().filter(|x| x.is_signal).count(),
            "rr_threshold": rr,
            "lower_prob": lower,
        })),
    )?;
    write_manifest(&a.out, &inv, &["gps_signals.csv", "gps_fit.json"], workers)
}

fn zgps_fit_summary(fit: &crate::zgps::ZgpsFit) -> Value {
    let groups: Vec<Value> = fit
        .group_ids
        .iter()
        .zip(&fit.groups)
        .map(|(g, f)| match f {
            Ok(f) => json!({
                "group_id": g,
                "r_hat": f.r_hat,
                "loglik": f.loglik,
                "converged": f.converged,
                "poisson_like": f.poisson_like,
            }),
            Err(e) => json!({ "group_id": g, "error": e }),
        })
        .collect();
    json!({ "groups": groups, "all_converged": fit.all_converged() })
}

fn cmd_fit_zgps(a: FitZgpsArgs, s: &Settings, workers: usize) -> Result<()> {
    let mut r = s.resolver();
    let table_path = r.path("table", a.table)?;
    let onto_path = r.opt_path("ontology", a.ontology)?;
    let mut opts = zinb_options(&mut r, a.tol, a.max_iter)?;
    opts.fixed_r = r.opt("fixed_r", a.fixed_r)?;
    let inv = r.finish("fit-zgps")?;

    let (lt, onto) = read_table_with_ontology(&table_path, onto_path.as_deref())?;
    let mask = lt.present.iter().any(|p| !p).then_some(lt.present.as_slice());
    let fit = fit_all_groups_masked(&lt.table, &lt.expected, &onto, mask, &opts)?;

    prepare_out(&a.out)?;
    io::write_zgps_groups(&a.out.join("zgps_groups.csv"), &fit)?;
    io::write_zgps_ae(&a.out.join("zgps_ae.csv"), &fit, &lt.table, &lt.expected)?;
    write_json(&a.out.join("zgps_fit.json"), &with_schema(zgps_fit_summary(&fit)))?;
    write_manifest(&a.out, &inv, &["zgps_groups.csv", "zgps_ae.csv", "zgps_fit.json"], workers)
}

fn cmd_permute(a: PermuteArgs, s: &Settings, workers: usize) -> Result<()> {
    let mut r = s.resolver();
    let reports_path = r.path("reports", a.reports)?;
    let ontology_path = r.path("ontology", a.ontology)?;
    let min_ae = r.or("min_ae_count", a.min_ae_count, 15)?;
    let min_group = r.or("min_group_size", a.min_group_size, 15)?;
    let dw = whitelist(r.opt("drug_whitelist", a.drug_whitelist)?)?;
    let aw = whitelist(r.opt("ae_whitelist", a.ae_whitelist)?)?;
    let n_perm = r.or("n_permutations", a.n_permutations, 4000)?;
    let seed: u64 = r.required("seed", a.seed)?;
    let statistic = match r.or("statistic", a.statistic, "group_rate".to_string())?.as_str() {
        "group_rate" => MaxStatistic::GroupRate,
        "ae_rate" => MaxStatistic::AeRate,
        other => return Err(Error::invalid(format!("unknown statistic {other}"))),
    };
    let rr = r.or("rr_threshold", a.rr_threshold, 2.0)?;
    let alpha = r.or("alpha", a.alpha, 0.05)?;
    let opts = zinb_options(&mut r, a.tol, a.max_iter)?;
    let inv = r.finish("permute")?;

    let reports = io::read_reports(&reports_path)?;
    let ontology = io::read_ontology(&ontology_path)?;
    let (raw, _) = build_table(&reports, dw.as_deref(), aw.as_deref())?;
    let (table, onto) = apply_filters(&raw, &ontology, min_ae, min_group)?;
    let mut pipeline = Pipeline::for_observed(&table, &onto, opts);
    pipeline.drug_whitelist = dw;
    pipeline.ae_whitelist = aw;
    pipeline.statistic = statistic;
    let (fit, res) = null_distribution(&reports, &pipeline, n_perm, seed, &ShufflePermuter)?;
    let signals = zgps_signals(&fit, &res.q_values, rr, alpha)?;
    let expected = expected_counts(&table)?;

    prepare_out(&a.out)?;
    io::write_null(&a.out.join("null_maxS.csv"), &res)?;
    io::write_q_values(&a.out.join("q_values.csv"), &res)?;
    io::write_zgps_groups(&a.out.join("zgps_groups.csv"), &fit)?;
    io::write_zgps_ae(&a.out.join("zgps_ae.csv"), &fit, &table, &expected)?;
    write_csv(
        &a.out.join("group_signals.csv"),
        &["drug_id", "group_id", "s_hat", "q", "is_concern"],
        signals.groups.iter().map(|g| {
            vec![
                g.drug_id.clone(),
                g.group_id.clone(),
                fmt_f64(g.s_hat),
                fmt_f64(g.q),
                g.is_concern.to_string(),
            ]
        }),
    )?;
    write_csv(
        &a.out.join("ae_signals.csv"),
        &["drug_id", "ae_id", "group_id", "lambda_hat", "q", "is_signal"],
        signals.ae.iter().map(|x| {
            vec![
                x.drug_id.clone(),
                x.ae_id.clone(),
                x.group_id.clone(),
                fmt_f64(x.lambda_hat),
                fmt_f64(x.q),
                x.is_signal.to_string(),
            ]
        }),
    )?;
    write_json(
        &a.out.join("permutation.json"),
        &with_schema(json!({
            "statistic": res.statistic,
            "observed_max": res.observed_max,
            "n_permutations": res.n_permutations,
            "failed_replicates": res.failed_replicates,
            "n_group_concerns": signals.groups.iter().filter(|g| g.is_concern).count(),
            "n_ae_signals": signals.ae.iter().filter(|x| x.is_signal).count(),
            "fit": zgps_fit_summary(&fit),
        })),
    )?;
    write_manifest(
        &a.out,
        &inv,
        &[
            "null_maxS.csv",
            "q_values.csv",
            "zgps_groups.csv",
            "zgps_ae.csv",
            "group_signals.csv",
            "ae_signals.csv",
            "permutation.json",
        ],
        workers,
    )
}

fn cmd_thin(a: ThinArgs, s: &Settings, workers: usize) -> Result<()> {
    let mut r = s.resolver();
    let table_path = r.path("table", a.table)?;
    let method: SplitMethod = r.or("method", a.method, "thinning".to_string())?.parse()?;
    let eps = r.or("epsilon", a.epsilon, 0.5)?;
    let seed: u64 = r.required("seed", a.seed)?;
    let inv = r.finish("thin")?;

    let lt = io::read_long_table(&table_path)?;
    if lt.present.iter().any(|p| !p) {
        return Err(Error::invalid("thin needs a table without missing cells"));
    }
    let pair = split(method, &lt.table, &lt.expected, eps, seed)?;
    let cov = coverage_report(&pair);

    prepare_out(&a.out)?;
    let onto = lt.ontology.as_ref();
    io::write_long_table(
        &a.out.join("train.csv"),
        &pair.train,
        &pair.train_expected,
        onto,
        Some(&pair.train_present),
    )?;
    io::write_long_table(
        &a.out.join("valid.csv"),
        &pair.valid,
        &pair.valid_expected,
        onto,
        Some(&pair.valid_present),
    )?;
    write_json(
        &a.out.join("split.json"),
        &with_schema(json!({
            "method": method,
            "epsilon": eps,
            "seed": seed,
            "coverage": cov,
        })),
    )?;
    write_manifest(&a.out, &inv, &["train.csv", "valid.csv", "split.json"], workers)
}

fn cmd_validate(a: ValidateArgs, s: &Settings, workers: usize) -> Result<()> {
    let mut r = s.resolver();
    let table_path = r.path("table", a.table)?;
    let onto_path = r.opt_path("ontology", a.ontology)?;
    let d = ValidationConfig::default();
    let methods_raw = r.or(
        "methods",
        a.methods,
        d.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
    )?;
    let eps_raw = r.or("epsilons", a.epsilons, join(&d.epsilons))?;
    let seeds_raw = r.or("seeds", a.seeds, "123..132".to_string())?;
    let threshold = r.or("threshold", a.threshold, d.threshold)?;
    let zinb = zinb_options(&mut r, a.tol, a.max_iter)?;
    let inv = r.finish("validate")?;

    let cfg = ValidationConfig {
        methods: parse_list(&methods_raw, "method")?,
        epsilons: parse_list(&eps_raw, "epsilon")?,
        seeds: parse_seeds(&seeds_raw)?,
        threshold,
        zinb,
    };
    let (lt, onto) = read_table_with_ontology(&table_path, onto_path.as_deref())?;
    if lt.present.iter().any(|p| !p) {
        return Err(Error::invalid("validate needs a table without missing cells"));
    }
    let rep = validate(&lt.table, &lt.expected, &onto, &cfg)?;

    prepare_out(&a.out)?;
    let metric_header = [
        "method",
        "epsilon",
        "seed",
        "mse",
        "auc",
        "accuracy",
        "sensitivity",
        "specificity",
        "precision",
        "f1",
        "f1_defined",
        "n_evaluated",
        "n_missing",
        "error",
    ];
    write_csv(
        &a.out.join("validation_runs.csv"),
        &metric_header,
        rep.runs.iter().map(|run| {
            let mut row = vec![run.method.as_str().to_string(), fmt_f64(run.epsilon), run.seed.to_string()];
            match &run.metrics {
                Some(m) => row.extend([
                    fmt_f64(m.mse),
                    fmt_f64(m.auc),
                    fmt_f64(m.accuracy),
                    fmt_f64(m.sensitivity),
                    fmt_f64(m.specificity),
                    fmt_f64(m.precision),
                    fmt_f64(m.f1),
                    m.f1_defined.to_string(),
                    m.n_evaluated.to_string(),
                    m.n_missing.to_string(),
                    String::new(),
                ]),
                None => {
                    row.extend(std::iter::repeat_n(String::new(), 10));
                    row.push(run.error.clone().unwrap_or_default());
                }
            }
            row
        }),
    )?;
    write_csv(
        &a.out.join("validation_summary.csv"),
        &[
            "method",
            "epsilon",
            "n_runs",
            "n_failed",
            "mse",
            "auc",
            "accuracy",
            "sensitivity",
            "specificity",
            "precision",
            "f1",
            "n_evaluated",
            "n_missing",
        ],
        rep.summary.iter().map(|x| {
            vec![
                x.method.as_str().to_string(),
                fmt_f64(x.epsilon),
                x.n_runs.to_string(),
                x.n_failed.to_string(),
                fmt_f64(x.mse),
                fmt_f64(x.auc),
                fmt_f64(x.accuracy),
                fmt_f64(x.sensitivity),
                fmt_f64(x.specificity),
                fmt_f64(x.precision),
                fmt_f64(x.f1),
                fmt_f64(x.n_evaluated),
                fmt_f64(x.n_missing),
            ]
        }),
    )?;
    let mut outputs: Vec<String> = vec!["validation_runs.csv".into(), "validation_summary.csv".into()];
    for c in &rep.roc {
        if let Some(roc) = &c.roc {
            let name = format!("roc_{}_{}.csv", c.method.as_str(), fmt_f64(c.epsilon));
            io::write_roc(&a.out.join(&name), roc)?;
            outputs.push(name);
        }
    }
    write_json(
        &a.out.join("validation.json"),
        &with_schema(json!({
            "summary": rep.summary,
            "auc_pooled": rep.roc.iter().map(|c| json!({
                "method": c.method,
                "epsilon": c.epsilon,
                "auc": c.roc.as_ref().map(|r| r.auc),
            })).collect::<Vec<_>>(),
            "runs": rep.runs,
        })),
    )?;
    outputs.push("validation.json".into());
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(&a.out, &inv, &names, workers)
}

fn cmd_simulate(a: SimulateArgs, s: &Settings, workers: usize) -> Result<()> {
    let mut r = s.resolver();
    let scenario = r.required("scenario", a.scenario)?;
    let seed: u64 = r.required("seed", a.seed)?;
    let iterations = r.or("iterations", a.iterations, 1000)?;
    match scenario.as_str() {
        "standard" | "no_dispersion" => {
            let sc: Scenario = scenario.parse()?;
            let sizes_raw = r.or("group_sizes", a.group_sizes, join(&SIM1_GROUP_SIZES))?;
            let inv = r.finish("simulate")?;
            let sizes: Vec<usize> = parse_list(&sizes_raw, "group size")?;
            if sizes.is_empty() {
                return Err(Error::invalid("need at least one group size"));
            }
            let opts = ZinbOptions::default();
            let results = sizes
                .iter()
                .map(|&j| {
                    simulation_i(
                        &SimIConfig {
                            scenario: sc,
                            group_size: j,
                            iterations,
                            seed,
                        },
                        &opts,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            prepare_out(&a.out)?;
            let mut rows = Vec::new();
            for res in &results {
                for it in &res.iterations {
                    rows.push(vec![
                        sc.as_str().to_string(),
                        res.config.group_size.to_string(),
                        it.iteration.to_string(),
                        fmt_f64(it.group_mse),
                        fmt_f64(it.ae_mse),
                        fmt_f64(it.r_hat),
                        it.converged.to_string(),
                        it.error.clone().unwrap_or_default(),
                    ]);
                }
            }
            write_csv(
                &a.out.join("iterations.csv"),
                &[
                    "scenario",
                    "group_size",
                    "iteration",
                    "group_mse",
                    "ae_mse",
                    "r_hat",
                    "converged",
                    "error",
                ],
                rows,
            )?;
            let summary: Vec<Value> = results
                .iter()
                .map(|res| {
                    json!({
                        "group_size": res.config.group_size,
                        "median_group_mse": res.median_group_mse,
                        "median_ae_mse": res.median_ae_mse,
                        "mean_group_mse": res.mean_group_mse,
                        "mean_ae_mse": res.mean_ae_mse,
                        "n_failed": res.n_failed,
                    })
                })
                .collect();
            write_json(
                &a.out.join("summary.json"),
                &with_schema(json!({
                    "scenario": sc,
                    "iterations": iterations,
                    "seed": seed,
                    "by_group_size": summary,
                })),
            )?;
            write_manifest(&a.out, &inv, &["iterations.csv", "summary.json"], workers)
        }
        "comparison" => {
            let d = SimIIConfig::default();
            let cfg = SimIIConfig {
                iterations,
                seed,
                zero_target: r.or("zero_target", a.zero_target, d.zero_target)?,
                pilot_datasets: r.or("pilot_datasets", a.pilot_datasets, d.pilot_datasets)?,
                drug_sigma: r.or("drug_sigma", a.drug_sigma, d.drug_sigma)?,
                ae_sigma: r.or("ae_sigma", a.ae_sigma, d.ae_sigma)?,
                signal_threshold: r.or("signal_threshold", a.signal_threshold, d.signal_threshold)?,
                ..d
            };
            let inv = r.finish("simulate")?;
            let res = simulation_ii(&cfg, &ZinbOptions::default())?;
            prepare_out(&a.out)?;
            write_csv(
                &a.out.join("iterations.csv"),
                &[
                    "iteration",
                    "zero_fraction",
                    "n_true_signals",
                    "zgps_mse",
                    "gps_mse",
                    "error",
                ],
                res.iterations.iter().map(|it| {
                    vec![
                        it.iteration.to_string(),
                        fmt_f64(it.zero_fraction),
                        it.n_true_signals.to_string(),
                        fmt_f64(it.zgps_mse),
                        fmt_f64(it.gps_mse),
                        it.error.clone().unwrap_or_default(),
                    ]
                }),
            )?;
            let mut outputs = vec!["iterations.csv", "summary.json"];
            if let Some(roc) = &res.zgps_roc {
                io::write_roc(&a.out.join("roc_zgps.csv"), roc)?;
                outputs.push("roc_zgps.csv");
            }
            if let Some(roc) = &res.gps_roc {
                io::write_roc(&a.out.join("roc_gps.csv"), roc)?;
                outputs.push("roc_gps.csv");
            }
            write_json(
                &a.out.join("summary.json"),
                &with_schema(json!({
                    "config": res.config,
                    "e_scale": res.e_scale,
                    "mean_zero_fraction": res.mean_zero_fraction,
                    "mean_zgps_mse": res.mean_zgps_mse,
                    "mean_gps_mse": res.mean_gps_mse,
                    "zgps_auc": res.zgps_roc.as_ref().map(|r| r.auc),
                    "gps_auc": res.gps_roc.as_ref().map(|r| r.auc),
                    "n_failed": res.n_failed,
                })),
            )?;
            write_manifest(&a.out, &inv, &outputs, workers)
        }
        other => Err(Error::invalid(format!(
            "unknown scenario {other}; expected standard, no_dispersion or comparison"
        ))),
    }
}

/// Rows of a CSV keyed by column name.
fn read_rows(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut rdr = csv::Reader::from_reader(f);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(headers.iter().map(str::to_string).zip(rec.iter().map(str::to_string)).collect());
    }
    Ok(out)
}

fn field_f64(row: &BTreeMap<String, String>, key: &str, path: &Path, line: usize) -> Result<Option<f64>> {
    match row.get(key).map(String::as_str) {
        None | Some("") => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{key} = {v}: {e}"),
        }),
    }
}

#[derive(Default)]
struct ReportCell {
    group_id: String,
    n: String,
    e: String,
    ebgm: Option<f64>,
    q01: Option<f64>,
    gps_signal: Option<bool>,
    lambda_hat: Option<f64>,
    q: Option<f64>,
}

fn cmd_report(a: ReportArgs, s: &Settings, workers: usize) -> Result<()> {
    let mut r = s.resolver();
    let gps_dir = r.opt_path("gps", a.gps)?;
    let zgps_dir = r.opt_path("zgps", a.zgps)?;
    let perm_dir = r.opt_path("permute", a.permute)?;
    let rr = r.or("rr_threshold", a.rr_threshold, 2.0)?;
    let alpha = r.or("alpha", a.alpha, 0.05)?;
    let inv = r.finish("report")?;
    if gps_dir.is_none() && zgps_dir.is_none() {
        return Err(Error::invalid("report needs --gps and/or --zgps"));
    }

    let mut cells: BTreeMap<(String, String), ReportCell> = BTreeMap::new();
    if let Some(dir) = &gps_dir {
        let path = dir.join("gps_signals.csv");
        for (k, row) in read_rows(&path)?.into_iter().enumerate() {
            let key = (row["drug_id"].clone(), row["ae_id"].clone());
            let c = cells.entry(key).or_default();
            c.n = row.get("n").cloned().unwrap_or_default();
            c.e = row.get("E").cloned().unwrap_or_default();
            c.ebgm = field_f64(&row, "ebgm", &path, k + 2)?;
            c.q01 = field_f64(&row, "q01", &path, k + 2)?;
            c.gps_signal = row.get("is_signal").map(|v| v == "true");
        }
    }
    if let Some(dir) = &zgps_dir {
        let path = dir.join("zgps_ae.csv");
        for (k, row) in read_rows(&path)?.into_iter().enumerate() {
            let key = (row["drug_id"].clone(), row["ae_id"].clone());
            let c = cells.entry(key).or_default();
            c.group_id = row.get("group_id").cloned().unwrap_or_default();
            c.n = row.get("n").cloned().unwrap_or_default();
            c.e = row.get("E").cloned().unwrap_or_default();
            c.lambda_hat = field_f64(&row, "lambda_hat", &path, k + 2)?;
        }
    }
    if let Some(dir) = &perm_dir {
        let q = io::read_q_values(&dir.join("q_values.csv"))?;
        for ((drug, _), c) in cells.iter_mut() {
            c.q = q.get(&(drug.clone(), c.group_id.clone())).copied();
        }
    }

    let zgps_signal = |c: &ReportCell| -> Option<bool> {
        let l = c.lambda_hat?;
        Some(l > rr && c.q? < alpha)
    };
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for c in cells.values() {
        if let (Some(e), Some(l)) = (c.ebgm, c.lambda_hat) {
            x.push(e);
            y.push(l);
        }
    }
    let pearson = match pearson_correlation(&x, &y) {
        Ok(v) => Some(v),
        Err(Error::ZeroVariance) | Err(Error::InvalidArgument(_)) => None,
        Err(e) => return Err(e),
    };
    let opt_bool = |b: Option<bool>| b.map(|b| b.to_string()).unwrap_or_default();
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();

    prepare_out(&a.out)?;
    write_csv(
        &a.out.join("report.csv"),
        &[
            "drug_id",
            "ae_id",
            "group_id",
            "n",
            "E",
            "ebgm",
            "q01",
            "gps_signal",
            "lambda_hat",
            "q",
            "zgps_signal",
        ],
        cells.iter().map(|((d, ae), c)| {
            vec![
                d.clone(),
                ae.clone(),
                c.group_id.clone(),
                c.n.clone(),
                c.e.clone(),
                opt(c.ebgm),
                opt(c.q01),
                opt_bool(c.gps_signal),
                opt(c.lambda_hat),
                opt(c.q),
                opt_bool(zgps_signal(c)),
            ]
        }),
    )?;
    let n_gps = cells.values().filter(|c| c.gps_signal == Some(true)).count();
    let n_z = cells.values().filter(|c| zgps_signal(c) == Some(true)).count();
    let n_both = cells
        .values()
        .filter(|c| c.gps_signal == Some(true) && zgps_signal(c) == Some(true))
        .count();
    write_json(
        &a.out.join("report.json"),
        &with_schema(json!({
            "n_cells": cells.len(),
            "n_gps_signals": n_gps,
            "n_zgps_signals": n_z,
            "n_both": n_both,
            "pearson_ebgm_lambda_hat": pearson,
            "rr_threshold": rr,
            "alpha": alpha,
        })),
    )?;
    write_manifest(&a.out, &inv, &["report.csv", "report.json"], workers)
}

fn cmd_rerun(a: RerunArgs, workers: usize) -> Result<()> {
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| Error::Io {
        path: a.manifest.clone(),
        source: e,
    })?;
    let m: Value = serde_json::from_str(&text)?;
    let args: Vec<String> = m
        .get("args")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::invalid("manifest has no args list"))?
        .iter()
        .map(|v| v.as_str().map(str::to_string))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::invalid("manifest args must be strings"))?;
    let out = match a.out {
        Some(o) => o,
        None => a
            .manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let mut argv = vec!["pvsignal".to_string()];
    argv.extend(args);
    argv.push("--out".into());
    argv.push(out.to_string_lossy().into_owned());
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::invalid(format!("manifest args: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(Error::invalid("a manifest cannot record a rerun"));
    }
    dispatch(cli.command, &Settings::load(None)?, workers)
}
