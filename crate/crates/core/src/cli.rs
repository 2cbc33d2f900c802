//! Command-line front end: `analyze`, `describe` and `datasets`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or configuration,
//! 3 numerical failure (EM, sampler initialisation, ESS).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{builtin_dataset, load_study_set, BuiltinDataset, DataError, Endpoint, StudySet};
use crate::ess::{EssError, EssResult};
use crate::inference::{exec::configure_threads, map_indexed, ChainSpec, Execution};
use crate::methods::{ehss_for, fit, Method, MethodConfigs, MethodError, PosteriorResult};
use crate::report::{emit, Format, Report, ReportError, RunInfo};

/// R̂ at or above this value triggers a convergence warning.
pub const RHAT_WARN: f64 = 1.01;

pub const THREADS_ENV: &str = "BORROWBENCH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "borrowbench", version, about = "Bayesian dynamic borrowing from multiple historical controls")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit borrowing methods to a dataset and write the borrowing report.
    Analyze(AnalyzeArgs),
    /// Borrowing mechanism and summary interpretation of a method.
    Describe {
        /// Method label, e.g. mem or pbm_hs.
        method: String,
    },
    /// List the bundled datasets.
    Datasets,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnalyzeArgs {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundled dataset name (see `datasets`).
    #[arg(long, conflicts_with = "data")]
    pub builtin: Option<String>,
    /// CSV file of arm-level summaries.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Endpoint of the CSV file: binary or continuous.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Comma-separated method labels, or `all`.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reference SD for continuous ELIR (default: current-control SD).
    #[arg(long = "sigma-ref")]
    pub sigma_ref: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated output formats: json, csv, svg.
    #[arg(long)]
    pub format: Option<String>,
}

/// Method selection in a config file: `"all"` or a list of labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodSelection {
    Named(String),
    List(Vec<String>),
}

/// Run configuration file. Keys other than the ones below are per-method
/// override blocks (`map`, `dpm_map`, `dmpp`, `uip`, `pbm_hs`, `mem`, `dpm`,
/// `ddpm`, `mixture`) merged into the case-study defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<Endpoint>,
    #[serde(default)]
    pub methods: Option<MethodSelection>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub sigma_ref: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub formats: Option<Vec<String>>,
    /// Chain settings; missing fields keep their defaults.
    #[serde(default)]
    pub chains: Option<serde_json::Value>,
    #[serde(flatten)]
    pub overrides: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) | CliError::UnknownMethod(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Validation(format!("data: {e}"))
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io { .. } => CliError::Io(e.to_string()),
            ReportError::UnknownFormat(_) => CliError::Validation(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn method_error(method: Method, e: MethodError) -> CliError {
    let msg = format!("{method}: {e}");
    match e {
        MethodError::Data(_) | MethodError::InvalidConfig(_) | MethodError::TooManySources(..) => CliError::Validation(msg),
        MethodError::Em(EssError::MissingSigmaRef) => CliError::Validation(msg),
        MethodError::Em(_) | MethodError::Inference(_) => CliError::Numerical(msg),
    }
}

fn ess_error(method: Method, e: EssError) -> CliError {
    let msg = format!("{method}: EHSS: {e}");
    match e {
        EssError::MissingSigmaRef => CliError::Validation(msg),
        _ => CliError::Numerical(msg),
    }
}

/// Fully resolved analysis: every default filled in.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub dataset_name: String,
    pub data: StudySet,
    pub methods: Vec<Method>,
    pub spec: ChainSpec,
    pub configs: MethodConfigs,
    pub sigma_ref: Option<f64>,
    pub out: PathBuf,
    pub formats: Vec<Format>,
}

fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
}

fn parse_formats(items: &[String]) -> Result<Vec<Format>, CliError> {
    let mut out = Vec::new();
    for f in items.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
        let f: Format = f.parse()?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        return Err(CliError::Validation("format: at least one of json, csv, svg is required".into()));
    }
    Ok(out)
}

fn parse_methods(sel: &MethodSelection) -> Result<Vec<Method>, CliError> {
    let joined = match sel {
        MethodSelection::Named(s) => s.clone(),
        MethodSelection::List(v) => v.join(","),
    };
    Method::parse_list(&joined).map_err(|e| CliError::UnknownMethod(e.0))
}

/// Merge the config file (if any) and the flags, load the data and resolve
/// every default.
pub fn resolve(args: &AnalyzeArgs) -> Result<ResolvedRun, CliError> {
    let file = match &args.config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    let endpoint = match (&args.endpoint, file.endpoint) {
        (Some(s), _) => Some(s.parse::<Endpoint>().map_err(|e| CliError::Validation(format!("endpoint: {e}")))?),
        (None, e) => e,
    };
    let builtin = args.builtin.clone().or(if args.data.is_some() { None } else { file.builtin.clone() });
    let data_path = args.data.clone().or(if args.builtin.is_some() { None } else { file.data.clone() });
    let (dataset_name, data) = match (builtin, data_path) {
        (Some(_), Some(_)) => return Err(CliError::Validation("give either a builtin dataset or a data file, not both".into())),
        (Some(name), None) => {
            let d = builtin_dataset(&name)?;
            if endpoint.is_some_and(|e| e != d.endpoint()) {
                return Err(CliError::Validation(format!("endpoint: {name} is a {} dataset", d.endpoint())));
            }
            (name, d)
        }
        (None, Some(path)) => {
            let endpoint = endpoint.ok_or_else(|| CliError::Validation("endpoint: required with a data file".into()))?;
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            (path.display().to_string(), load_study_set(&text, endpoint)?)
        }
        (None, None) => return Err(CliError::Validation("dataset: pass --builtin <name> or --data <csv>".into())),
    };

    let methods = match (&args.methods, &file.methods) {
        (Some(s), _) => parse_methods(&MethodSelection::Named(s.clone()))?,
        (None, Some(sel)) => parse_methods(sel)?,
        (None, None) => Method::CANONICAL.to_vec(),
    };

    let mut spec_value = serde_json::to_value(ChainSpec::default()).map_err(|e| CliError::Validation(e.to_string()))?;
    if let Some(c) = &file.chains {
        crate::methods::merge_json(&mut spec_value, c);
    }
    let mut spec: ChainSpec = serde_json::from_value(spec_value).map_err(|e| CliError::Validation(format!("chains: {e}")))?;
    if let Some(seed) = args.seed.or(file.seed) {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| CliError::Validation(format!("chains: {e}")))?;

    let overrides = serde_json::Value::Object(file.overrides.clone());
    let configs = MethodConfigs::with_overrides(&data, &overrides).map_err(CliError::Validation)?;

    let sigma_ref = match data.endpoint() {
        Endpoint::Binary => None,
        Endpoint::Continuous => {
            let s = args
                .sigma_ref
                .or(file.sigma_ref)
                .or_else(|| data.current_control().arm.as_continuous().map(|c| c.sd));
            match s {
                Some(v) if v > 0.0 && v.is_finite() => Some(v),
                Some(v) => return Err(CliError::Validation(format!("sigma_ref: must be positive, got {v}"))),
                None => return Err(CliError::Validation("sigma_ref: required for a continuous endpoint".into())),
            }
        }
    };

    let formats = match (&args.format, &file.formats) {
        (Some(f), _) => parse_formats(std::slice::from_ref(f))?,
        (None, Some(f)) => parse_formats(f)?,
        (None, None) => vec![Format::Json, Format::Csv, Format::Svg],
    };
    let out = args
        .out
        .clone()
        .or(file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("borrowbench-out"));

    Ok(ResolvedRun {
        dataset_name,
        data,
        methods,
        spec,
        configs,
        sigma_ref,
        out,
        formats,
    })
}

/// Fitted results and EHSS of a resolved run.
pub struct Analysis {
    pub results: Vec<PosteriorResult>,
    pub ess: BTreeMap<Method, EssResult>,
    pub seconds: BTreeMap<Method, f64>,
}

/// Fit every method (concurrently) and compute EHSS for the borrowing ones.
pub fn execute(run: &ResolvedRun) -> Result<Analysis, CliError> {
    let outcomes = map_indexed(run.methods.len(), Execution::Parallel, |i| {
        let m = run.methods[i];
        let t = Instant::now();
        let r = fit(m, &run.data, &run.configs, &run.spec).map_err(|e| method_error(m, e))?;
        let ess = if m.is_borrowing() {
            Some(ehss_for(&r, &run.data, run.sigma_ref, &run.configs, &run.spec).map_err(|e| ess_error(m, e))?)
        } else {
            None
        };
        Ok::<_, CliError>((r, ess, t.elapsed().as_secs_f64()))
    });
    let mut analysis = Analysis {
        results: Vec::new(),
        ess: BTreeMap::new(),
        seconds: BTreeMap::new(),
    };
    for o in outcomes {
        let (r, ess, secs) = o?;
        analysis.seconds.insert(r.method, secs);
        if let Some(e) = ess {
            analysis.ess.insert(r.method, e);
        }
        analysis.results.push(r);
    }
    analysis.results.sort_by_key(|r| r.method);
    Ok(analysis)
}

pub fn run_info(run: &ResolvedRun) -> RunInfo {
    RunInfo {
        dataset: run.dataset_name.clone(),
        endpoint: run.data.endpoint(),
        seed: run.spec.seed,
        chains: run.spec,
        sigma_ref: run.sigma_ref,
        methods: run.methods.clone(),
        configs: run.configs.clone(),
        generator: crate::inference::rng::GENERATOR.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// One summary line: effect mean [95% CrI], EHSS, max R̂.
pub fn summary_line(r: &PosteriorResult, ess: Option<&EssResult>) -> String {
    let ehss = ess.map_or_else(|| "-".to_string(), |e| format!("{:.1}", e.ehss));
    let rhat = r.max_rhat().map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    format!(
        "{:<13} effect {:>8.3} [{:>8.3}, {:>8.3}]  EHSS {:>7}  max R-hat {}",
        r.method.label(),
        r.effect.mean,
        r.effect.lower,
        r.effect.upper,
        ehss,
        rhat
    )
}

pub fn analyze(args: &AnalyzeArgs) -> Result<Vec<PathBuf>, CliError> {
    let run = resolve(args)?;
    info!(
        "{}: {} methods, seed {}, {} chains x {} draws",
        run.dataset_name,
        run.methods.len(),
        run.spec.seed,
        run.spec.n_chains,
        run.spec.n_keep
    );
    let started = Instant::now();
    let analysis = execute(&run)?;
    for r in &analysis.results {
        println!("{}", summary_line(r, analysis.ess.get(&r.method)));
        for d in r.diagnostics.iter().filter(|d| d.rhat >= RHAT_WARN) {
            warn!("{}: R-hat {:.3} for {} (>= {RHAT_WARN})", r.method, d.rhat, d.name);
        }
        for w in &r.warnings {
            warn!("{}: {w}", r.method);
        }
        if analysis.ess.get(&r.method).is_some_and(|e| e.negative) {
            warn!("{}: negative EHSS", r.method);
        }
    }
    let report = Report::assemble(run_info(&run), &analysis.results, &analysis.ess)?;
    let mut written = Vec::new();
    for f in &run.formats {
        written.extend(emit(&report, *f, &run.out)?);
    }
    let timing = serde_json::json!({
        "total_seconds": started.elapsed().as_secs_f64(),
        "method_seconds": analysis.seconds.iter().map(|(m, s)| (m.label().to_string(), *s)).collect::<BTreeMap<_, _>>(),
        "finished_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    });
    let meta = run.out.join("metadata.json");
    std::fs::write(&meta, format!("{timing:#}\n")).map_err(|e| CliError::Io(format!("cannot write {}: {e}", meta.display())))?;
    written.push(meta);
    Ok(written)
}

/// Borrowing mechanism and summary interpretation of one method.
pub struct MethodProfile {
    pub mechanism: &'static str,
    pub conflict_component: &'static str,
    pub overall: &'static str,
    pub source_specific: &'static str,
}

pub fn profile(method: Method) -> MethodProfile {
    match method {
        Method::CurrentOnly => MethodProfile {
            mechanism: "none: reference analysis of the current trial alone",
            conflict_component: "not applicable",
            overall: "EHSS not reported (no historical information is borrowed)",
            source_specific: "not applicable",
        },
        Method::Map | Method::RobustMap | Method::DpmMap => MethodProfile {
            mechanism: "exchangeability and robustification: a meta-analytic predictive prior for the current control",
            conflict_component: "heterogeneity parameters; robust component",
            overall: "EHSS",
            source_specific: "not directly defined",
        },
        Method::Dmpp => MethodProfile {
            mechanism: "discounting of historical likelihoods by source-specific power parameters",
            conflict_component: "source-specific power parameter gamma_k",
            overall: "EHSS",
            source_specific: "posterior gamma_k, a 0-1 borrowing parameter",
        },
        Method::PbmHs => MethodProfile {
            mechanism: "shrinkage of source-specific potential bias (horseshoe prior)",
            conflict_component: "potential bias beta_k and shrinkage parameters",
            overall: "EHSS",
            source_specific: "posterior beta_k and shrinkage parameters as conflict/compatibility summaries, not borrowing amounts",
        },
        Method::Uip => MethodProfile {
            mechanism: "construction of an informative prior from unit information",
            conflict_component: "not directly defined",
            overall: "EHSS; posterior M as information incorporated through the constructed prior",
            source_specific: "posterior M*w_k as source-specific contribution to the constructed prior (sample-size units, not a 0-1 borrowing probability)",
        },
        Method::Mem => MethodProfile {
            mechanism: "Bayesian model averaging over exchangeability patterns",
            conflict_component: "inclusion of each historical source in exchangeability patterns",
            overall: "EHSS",
            source_specific: "posterior exchangeability probability p_EX,k",
        },
        Method::Dpm | Method::Ddpm => MethodProfile {
            mechanism: "borrowing through clustering of historical and current control parameters",
            conflict_component: "latent cluster allocation indicators c_CC and c_k",
            overall: "EHSS",
            source_specific: "similarity and borrowing index SBI_k (posterior probability of sharing the current control's cluster)",
        },
    }
}

pub fn describe(label: &str) -> Result<String, CliError> {
    let method: Method = label.parse().map_err(|_| CliError::UnknownMethod(label.to_string()))?;
    let p = profile(method);
    Ok(format!(
        "{} ({})\n  borrowing mechanism:        {}\n  conflict-related component: {}\n  overall summary:            {}\n  source-specific summary:    {}\n",
        method.display_name(),
        method.label(),
        p.mechanism,
        p.conflict_component,
        p.overall,
        p.source_specific
    ))
}

pub fn datasets() -> String {
    let mut s = String::new();
    for d in BuiltinDataset::ALL {
        let set = d.load();
        s.push_str(&format!(
            "{:<16} {:<10} K={}  n_CC={}  {}\n",
            d.name(),
            d.endpoint().to_string(),
            set.k(),
            set.n_cc(),
            d.description()
        ));
    }
    s
}

/// Thread cap from `BORROWBENCH_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Run a parsed command line and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = thread_cap() {
        configure_threads(n);
    }
    let outcome = match &cli.command {
        Command::Analyze(args) => analyze(args).map(|paths| {
            for p in paths {
                info!("wrote {}", p.display());
            }
        }),
        Command::Describe { method } => describe(method).map(|text| print!("{text}")),
        Command::Datasets => {
            print!("{}", datasets());
            Ok(())
        }
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
