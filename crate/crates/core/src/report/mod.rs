//! Report assembly: forest-plot rows with EHSS, the source-level borrowing
//! heatmap, and JSON/CSV/SVG emission.
//!
//! `results.json` is a pure function of the inputs (no timestamps), so two
//! runs with the same configuration and seed produce identical bytes.

mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Endpoint;
use crate::ess::EssResult;
use crate::inference::{ChainSpec, ParamDiagnostic};
use crate::methods::{DrawSummary, Method, MethodConfigs, PosteriorResult, SourceSummary};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no EHSS result for borrowing method {0}")]
    MissingEss(Method),
    #[error("no method with a 0-1 source-level summary (dmpp, mem, dpm, ddpm) was run")]
    NoEligibleMethods,
    #[error("unknown output format '{0}' (expected json, csv or svg)")]
    UnknownFormat(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialisation failed: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

impl FromStr for Format {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            _ => Err(ReportError::UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRow {
    pub method: Method,
    pub effect_mean: f64,
    /// Type-7 2.5% quantile of the effect draws.
    pub ci_low: f64,
    /// Type-7 97.5% quantile of the effect draws.
    pub ci_high: f64,
    pub ehss: Option<f64>,
}

/// Forest rows: `current_only` first, then the other methods in reporting
/// order. Every borrowing method needs an entry in `ess`.
pub fn forest_data(results: &[PosteriorResult], ess: &BTreeMap<Method, EssResult>) -> Result<Vec<ForestRow>, ReportError> {
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        let ehss = if r.method.is_borrowing() {
            Some(ess.get(&r.method).ok_or(ReportError::MissingEss(r.method))?.ehss)
        } else {
            None
        };
        rows.push(ForestRow {
            method: r.method,
            effect_mean: r.effect.mean,
            ci_low: r.effect.lower,
            ci_high: r.effect.upper,
            ehss,
        });
    }
    rows.sort_by_key(|row| row.method);
    Ok(rows)
}

/// Source-level 0-1 summaries of DMPP, MEM, DPM and DDPM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMatrix {
    pub methods: Vec<Method>,
    pub sources: Vec<String>,
    /// One row per method, one column per source.
    pub values: Vec<Vec<f64>>,
    /// Legend per method row; the scales differ in meaning.
    pub semantics: Vec<String>,
}

const HEATMAP_METHODS: [Method; 4] = [Method::Dmpp, Method::Mem, Method::Dpm, Method::Ddpm];

/// Heatmap over the eligible methods among `results`, in the order dmpp,
/// mem, dpm, ddpm. Other methods are skipped: their source summaries are
/// either absent or not 0-1 borrowing quantities.
pub fn borrowing_heatmap_data(results: &[PosteriorResult]) -> Result<HeatmapMatrix, ReportError> {
    let mut rows: Vec<&PosteriorResult> = HEATMAP_METHODS
        .iter()
        .filter_map(|m| results.iter().find(|r| r.method == *m))
        .filter(|r| r.source_summaries.iter().all(|s| s.kind.is_unit_interval()))
        .filter(|r| !r.source_summaries.is_empty())
        .collect();
    rows.dedup_by_key(|r| r.method);
    let first = rows.first().ok_or(ReportError::NoEligibleMethods)?;
    let sources: Vec<String> = first.source_summaries.iter().map(|s| s.source.clone()).collect();
    let values = rows
        .iter()
        .map(|r| {
            sources
                .iter()
                .map(|src| r.summary_for(src).map_or(f64::NAN, |s| s.value.clamp(0.0, 1.0)))
                .collect()
        })
        .collect();
    let semantics = rows
        .iter()
        .map(|r| r.source_summaries[0].kind.semantics().to_string())
        .collect();
    Ok(HeatmapMatrix {
        methods: rows.iter().map(|r| r.method).collect(),
        sources,
        values,
        semantics,
    })
}

/// Per-method section of `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub name: String,
    pub theta_cc: DrawSummary,
    pub theta_ct: DrawSummary,
    pub effect: DrawSummary,
    pub ess: Option<EssResult>,
    pub source_summaries: Vec<SourceSummary>,
    pub diagnostics: Vec<ParamDiagnostic>,
    pub warnings: Vec<String>,
    pub details: BTreeMap<String, f64>,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub dataset: String,
    pub endpoint: Endpoint,
    pub seed: u64,
    pub chains: ChainSpec,
    pub sigma_ref: Option<f64>,
    pub methods: Vec<Method>,
    pub configs: MethodConfigs,
    pub generator: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run: RunInfo,
    pub forest: Vec<ForestRow>,
    pub heatmap: Option<HeatmapMatrix>,
    pub methods: Vec<MethodReport>,
}

impl Report {
    pub fn assemble(run: RunInfo, results: &[PosteriorResult], ess: &BTreeMap<Method, EssResult>) -> Result<Self, ReportError> {
        let forest = forest_data(results, ess)?;
        let heatmap = match borrowing_heatmap_data(results) {
            Ok(h) => Some(h),
            Err(ReportError::NoEligibleMethods) => None,
            Err(e) => return Err(e),
        };
        let mut methods: Vec<MethodReport> = results
            .iter()
            .map(|r| MethodReport {
                method: r.method,
                name: r.method.display_name().to_string(),
                theta_cc: r.theta_cc,
                theta_ct: r.theta_ct,
                effect: r.effect,
                ess: ess.get(&r.method).cloned(),
                source_summaries: r.source_summaries.clone(),
                diagnostics: r.diagnostics.clone(),
                warnings: r.warnings.clone(),
                details: r.details.clone(),
            })
            .collect();
        methods.sort_by_key(|m| m.method);
        Ok(Self {
            run,
            forest,
            heatmap,
            methods,
        })
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| ReportError::Serialize(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

/// Six significant digits, shortest form.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(x);
    rounded.to_string()
}

fn write(path: PathBuf, content: &[u8]) -> Result<PathBuf, ReportError> {
    fs::write(&path, content).map_err(|source| ReportError::Io { path: path.clone(), source })?;
    Ok(path)
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| ReportError::Serialize(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| ReportError::Serialize(e.to_string()))?;
    }
    w.into_inner().map_err(|e| ReportError::Serialize(e.to_string()))
}

pub fn forest_csv(rows: &[ForestRow]) -> Result<Vec<u8>, ReportError> {
    csv_bytes(
        &["method", "effect_mean", "ci_low", "ci_high", "ehss"],
        rows.iter()
            .map(|r| {
                vec![
                    r.method.label().to_string(),
                    sig6(r.effect_mean),
                    sig6(r.ci_low),
                    sig6(r.ci_high),
                    r.ehss.map(sig6).unwrap_or_default(),
                ]
            })
            .collect(),
    )
}

pub fn heatmap_csv(h: &HeatmapMatrix) -> Result<Vec<u8>, ReportError> {
    let mut rows = Vec::new();
    for (i, m) in h.methods.iter().enumerate() {
        for (j, s) in h.sources.iter().enumerate() {
            rows.push(vec![m.label().to_string(), s.clone(), sig6(h.values[i][j]), h.semantics[i].clone()]);
        }
    }
    csv_bytes(&["method", "source", "value", "semantics"], rows)
}

/// Write `report` into `dir` in the given format and return the paths written.
/// JSON goes to `results.json`; CSV to `forest.csv` (and `heatmap.csv` when
/// an eligible method ran); SVG to `forest.svg` (and `heatmap.svg`).
pub fn emit(report: &Report, format: Format, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    match format {
        Format::Json => out.push(write(dir.join("results.json"), report.to_json()?.as_bytes())?),
        Format::Csv => {
            out.push(write(dir.join("forest.csv"), &forest_csv(&report.forest)?)?);
            if let Some(h) = &report.heatmap {
                out.push(write(dir.join("heatmap.csv"), &heatmap_csv(h)?)?);
            }
        }
        Format::Svg => {
            out.push(write(dir.join("forest.svg"), svg::forest(&report.forest, report.run.endpoint).as_bytes())?);
            if let Some(h) = &report.heatmap {
                out.push(write(dir.join("heatmap.svg"), svg::heatmap(h).as_bytes())?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BuiltinDataset;
    use crate::ess::posterior_ehss;
    use crate::methods::{fit, fit_dpm_with_state, DpmConfig, MethodConfigs, PriorComponent, SummaryKind};
    use proptest::prelude::*;

    fn quick() -> ChainSpec {
        ChainSpec {
            n_chains: 2,
            n_warmup: 300,
            n_keep: 1000,
            ..ChainSpec::with_seed(4)
        }
    }

    fn run_info(cfgs: &MethodConfigs, methods: Vec<Method>) -> RunInfo {
        RunInfo {
            dataset: "as_binary".into(),
            endpoint: Endpoint::Binary,
            seed: 4,
            chains: quick(),
            sigma_ref: None,
            methods,
            configs: cfgs.clone(),
            generator: crate::inference::rng::GENERATOR.into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    #[test]
    fn current_only_row_and_missing_ess() {
        let d = BuiltinDataset::AsBinary.load();
        let cfgs = MethodConfigs::defaults(&d);
        let spec = ChainSpec::with_seed(3);
        let cur = fit(Method::CurrentOnly, &d, &cfgs, &spec).unwrap();
        let rows = forest_data(std::slice::from_ref(&cur), &BTreeMap::new()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].effect_mean - 0.35).abs() < 0.02);
        assert!(rows[0].ehss.is_none());
        assert!(rows[0].ci_low <= rows[0].effect_mean && rows[0].effect_mean <= rows[0].ci_high);

        let mem = fit(Method::Mem, &d, &cfgs, &spec).unwrap();
        let err = forest_data(&[mem.clone(), cur.clone()], &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, ReportError::MissingEss(Method::Mem)));

        let ess = posterior_ehss(&mem.theta_cc_draws, Endpoint::Binary, 6, None, &cfgs.mixture).unwrap();
        let rows = forest_data(&[mem, cur], &BTreeMap::from([(Method::Mem, ess.clone())])).unwrap();
        assert_eq!(rows[0].method, Method::CurrentOnly);
        assert_eq!(rows[1].ehss, Some(ess.ehss));
        assert!(forest_data(&[], &BTreeMap::new()).unwrap().is_empty());
    }

    #[test]
    fn heatmap_restriction() {
        let d = BuiltinDataset::AsBinary.load();
        let cfgs = MethodConfigs::defaults(&d);
        let map = fit(Method::Map, &d, &cfgs, &quick()).unwrap();
        let mem = fit(Method::Mem, &d, &cfgs, &quick()).unwrap();
        let uip = fit(Method::Uip, &d, &cfgs, &quick()).unwrap();
        assert!(matches!(
            borrowing_heatmap_data(&[map.clone(), uip.clone()]),
            Err(ReportError::NoEligibleMethods)
        ));
        let h = borrowing_heatmap_data(&[map, uip, mem]).unwrap();
        assert_eq!(h.methods, vec![Method::Mem]);
        assert_eq!(h.values[0].len(), 8);
        let min = h.values[0].iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(h.values[0][6], min);
        assert_eq!(h.semantics.len(), 1);
    }

    #[test]
    fn single_cluster_dpm_row_is_one() {
        let d = BuiltinDataset::AsBinary.load();
        let cfg = DpmConfig {
            fixed_concentration: Some(1e-9),
            base: PriorComponent::Beta { a: 1.0, b: 1.0 },
            ..MethodConfigs::defaults(&d).dpm
        };
        let (r, _) = fit_dpm_with_state(&d, &cfg, &quick()).unwrap();
        let h = borrowing_heatmap_data(&[r]).unwrap();
        assert!(h.values[0].iter().all(|&v| v == 1.0), "{:?}", h.values);
    }

    #[test]
    fn json_round_trip_and_csv_schema() {
        let d = BuiltinDataset::AsBinary.load();
        let cfgs = MethodConfigs::defaults(&d);
        let methods = vec![Method::CurrentOnly, Method::Mem];
        let results: Vec<PosteriorResult> = methods.iter().map(|&m| fit(m, &d, &cfgs, &quick()).unwrap()).collect();
        let ess = posterior_ehss(&results[1].theta_cc_draws, Endpoint::Binary, 6, None, &cfgs.mixture).unwrap();
        let report = Report::assemble(run_info(&cfgs, methods), &results, &BTreeMap::from([(Method::Mem, ess)])).unwrap();
        let json = report.to_json().unwrap();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_json().unwrap(), json);
        assert_eq!(back.forest, report.forest);
        assert_eq!(back.heatmap, report.heatmap);

        let dir = tempfile::tempdir().unwrap();
        for f in [Format::Json, Format::Csv, Format::Svg] {
            emit(&report, f, dir.path()).unwrap();
        }
        let heat = fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
        assert_eq!(heat.lines().next().unwrap(), "method,source,value,semantics");
        assert_eq!(heat.lines().count(), 1 + 8);
        let forest = fs::read_to_string(dir.path().join("forest.csv")).unwrap();
        assert_eq!(forest.lines().count(), 1 + 2);
        assert!(fs::read_to_string(dir.path().join("forest.svg")).unwrap().starts_with("<svg"));
        assert!(dir.path().join("heatmap.svg").exists());
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(269.31234), "269.312");
        assert_eq!(sig6(-2.0), "-2");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1234567.0), "1234570");
    }

    #[test]
    fn unknown_format_rejected() {
        assert!("pdf".parse::<Format>().is_err());
        assert_eq!("SVG".parse::<Format>().unwrap(), Format::Svg);
    }

    fn synthetic(method: Method, d: &crate::data::StudySet, shift: f64, spread: f64, values: &[f64]) -> PosteriorResult {
        let cc: Vec<f64> = (0..200).map(|i| 0.3 + spread * ((i * 37 % 200) as f64 / 200.0 - 0.5)).collect();
        let ct: Vec<f64> = (0..200).map(|i| 0.3 + shift + spread * ((i * 91 % 200) as f64 / 200.0 - 0.5)).collect();
        let mut r = PosteriorResult::new(method, d, cc, ct);
        let kind = match method {
            Method::Dmpp => Some(SummaryKind::PowerParameter),
            Method::Mem => Some(SummaryKind::ExchangeabilityProbability),
            Method::Dpm | Method::Ddpm => Some(SummaryKind::Sbi),
            Method::Uip => Some(SummaryKind::UipContribution),
            Method::PbmHs => Some(SummaryKind::PotentialBias),
            _ => None,
        };
        if let Some(kind) = kind {
            let scale = if kind.is_unit_interval() { 1.0 } else { 80.0 };
            r.source_summaries = d
                .historical_labels()
                .into_iter()
                .zip(values)
                .map(|(source, v)| SourceSummary {
                    source,
                    kind,
                    value: v * scale,
                    median: None,
                    lower: None,
                    upper: None,
                    prob_conflict: None,
                    prob_positive: None,
                })
                .collect();
        }
        r
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn heatmap_bounded_and_forest_ci_contains_mean(
            picks in prop::collection::btree_set(0usize..10, 1..10),
            values in prop::collection::vec(0.0f64..=1.0, 8),
            shift in -0.5f64..0.5,
            spread in 0.0f64..0.6,
        ) {
            let d = BuiltinDataset::AsBinary.load();
            let methods: Vec<Method> = picks.into_iter().map(|i| Method::ALL[i]).collect();
            let results: Vec<PosteriorResult> = methods.iter().map(|&m| synthetic(m, &d, shift, spread, &values)).collect();
            let ess: BTreeMap<Method, EssResult> = methods
                .iter()
                .filter(|m| m.is_borrowing())
                .map(|&m| {
                    (m, EssResult {
                        ess_post: 20.0,
                        ehss: 14.0,
                        n_cc: 6,
                        sigma_ref: None,
                        n_draws_used: 200,
                        n_draws_excluded: 0,
                        negative: false,
                        mixture: crate::ess::MixtureApprox::from_beta(crate::conjugate::BetaParams { a: 4.0, b: 16.0 }),
                    })
                })
                .collect();
            for row in forest_data(&results, &ess).unwrap() {
                prop_assert!(row.ci_low <= row.effect_mean && row.effect_mean <= row.ci_high);
            }
            match borrowing_heatmap_data(&results) {
                Ok(h) => {
                    prop_assert!(h.methods.iter().all(|m| HEATMAP_METHODS.contains(m)));
                    prop_assert!(h.values.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
                }
                Err(ReportError::NoEligibleMethods) => {
                    prop_assert!(!methods.iter().any(|m| HEATMAP_METHODS.contains(m)));
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
