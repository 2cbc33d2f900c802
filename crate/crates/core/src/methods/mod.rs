//! Borrowing methods. Every `fit_*` function takes a [`StudySet`], its
//! configuration and a [`ChainSpec`] and returns a [`PosteriorResult`] with
//! posterior draws of the current-control parameter, the treatment parameter
//! and the treatment effect.
//!
//! Borrowing only touches the control arm. The treatment arm always gets the
//! same independent conjugate analysis on a method-independent stream, so its
//! draws are identical across methods for a given seed.

mod common;
mod config;
mod current;
mod dmpp;
mod dp;
mod map;
mod mem;
mod pbm;
mod uip;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Endpoint, StudySet};
use crate::ess::EssError;
use crate::inference::{ChainSpec, InferenceError, ParamDiagnostic};

pub use common::{summarize, treatment_draws, DrawSummary};
pub use config::{
    merge_json,
    DdpmConfig, DmppConfig, DpmConfig, DpmMapConfig, MapConfig, MemConfig, MethodConfigs, PbmConfig, PriorComponent,
    UipConfig,
};
pub use current::fit_current_only;
pub use dmpp::{dmpp_log_gamma_posterior, fit_dmpp};
pub use dp::{compute_sbi, fit_ddpm, fit_ddpm_with_state, fit_dpm, fit_dpm_with_state, DpState};
pub use map::{fit_dpm_map, fit_map, fit_robust_map, map_prior, map_prior_dpm, MapPrior};
pub use mem::{fit_mem, mem_pattern_log_prior, mem_state, MemState};
pub use pbm::fit_pbm_hs;
pub use uip::{fit_uip, uip_prior_moments};

#[derive(Debug, Error)]
pub enum MethodError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Em(#[from] EssError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("too many historical sources for exact enumeration: {0} (maximum {1})")]
    TooManySources(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CurrentOnly,
    Map,
    RobustMap,
    DpmMap,
    Dmpp,
    Uip,
    PbmHs,
    Mem,
    Dpm,
    Ddpm,
}

impl Method {
    /// Every method, in reporting order.
    pub const ALL: [Method; 10] = [
        Method::CurrentOnly,
        Method::Map,
        Method::RobustMap,
        Method::DpmMap,
        Method::Dmpp,
        Method::Uip,
        Method::PbmHs,
        Method::Mem,
        Method::Dpm,
        Method::Ddpm,
    ];

    /// The set run by `--methods all`: the reference analysis and the eight
    /// case-study methods.
    pub const CANONICAL: [Method; 9] = [
        Method::CurrentOnly,
        Method::Map,
        Method::DpmMap,
        Method::Dmpp,
        Method::Uip,
        Method::PbmHs,
        Method::Mem,
        Method::Dpm,
        Method::Ddpm,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::CurrentOnly => "current_only",
            Method::Map => "map",
            Method::RobustMap => "robust_map",
            Method::DpmMap => "dpm_map",
            Method::Dmpp => "dmpp",
            Method::Uip => "uip",
            Method::PbmHs => "pbm_hs",
            Method::Mem => "mem",
            Method::Dpm => "dpm",
            Method::Ddpm => "ddpm",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            Method::CurrentOnly => "Current only",
            Method::Map => "MAP",
            Method::RobustMap => "Robust MAP",
            Method::DpmMap => "DPM-MAP",
            Method::Dmpp => "DMPP",
            Method::Uip => "UIP",
            Method::PbmHs => "HS",
            Method::Mem => "MEM",
            Method::Dpm => "DPM",
            Method::Ddpm => "DDPM",
        }
    }

    pub fn is_borrowing(&self) -> bool {
        *self != Method::CurrentOnly
    }

    /// Stream tag. Robust MAP shares the MAP tag for its first stage.
    pub(crate) fn tag(&self) -> u16 {
        *self as u16 + 1
    }

    /// Parse a comma-separated list, or `all`.
    pub fn parse_list(s: &str) -> Result<Vec<Method>, MethodParseError> {
        if s.trim() == "all" {
            return Ok(Method::CANONICAL.to_vec());
        }
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(MethodParseError(s.to_string()));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown method '{0}'")]
pub struct MethodParseError(pub String);

impl FromStr for Method {
    type Err = MethodParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.label() == norm)
            .or(match norm.as_str() {
                "hs" | "pbm" => Some(Method::PbmHs),
                "current" => Some(Method::CurrentOnly),
                _ => None,
            })
            .ok_or_else(|| MethodParseError(s.to_string()))
    }
}

/// What a per-source summary measures. The scales are not comparable across
/// kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryKind {
    /// DMPP power parameter γ_k.
    PowerParameter,
    /// MEM posterior exchangeability probability p_EX,k.
    ExchangeabilityProbability,
    /// DPM/DDPM similarity and borrowing index.
    Sbi,
    /// UIP `M w_k`: contribution to the constructed prior, in sample-size units.
    UipContribution,
    /// PBM potential bias β_k: a conflict/compatibility summary.
    PotentialBias,
}

impl SummaryKind {
    pub fn semantics(&self) -> &'static str {
        match self {
            SummaryKind::PowerParameter => "posterior mean of the source-specific power parameter",
            SummaryKind::ExchangeabilityProbability => "posterior exchangeability probability",
            SummaryKind::Sbi => "posterior probability of shared clustering with the current control (SBI)",
            SummaryKind::UipContribution => "contribution to constructed prior (M*w_k, sample-size units)",
            SummaryKind::PotentialBias => "potential bias (conflict/compatibility summary, not a borrowing amount)",
        }
    }

    /// Whether the summary is a 0-1 borrowing or compatibility quantity.
    pub fn is_unit_interval(&self) -> bool {
        matches!(
            self,
            SummaryKind::PowerParameter | SummaryKind::ExchangeabilityProbability | SummaryKind::Sbi
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub source: String,
    pub kind: SummaryKind,
    /// Posterior mean (the exact probability for MEM and SBI).
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    /// PBM only: posterior `Pr(|β_k| > δ_conflict)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prob_conflict: Option<f64>,
    /// PBM only: posterior `Pr(β_k > 0)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prob_positive: Option<f64>,
}

impl SourceSummary {
    pub(crate) fn scalar(source: &str, kind: SummaryKind, value: f64) -> Self {
        Self {
            source: source.to_string(),
            kind,
            value,
            median: None,
            lower: None,
            upper: None,
            prob_conflict: None,
            prob_positive: None,
        }
    }

    pub(crate) fn from_draws(source: &str, kind: SummaryKind, draws: &[f64]) -> Self {
        let s = summarize(draws);
        Self {
            median: Some(s.median),
            lower: Some(s.lower),
            upper: Some(s.upper),
            ..Self::scalar(source, kind, s.mean)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorResult {
    pub method: Method,
    pub endpoint: Endpoint,
    /// Probability scale for binary, endpoint units for continuous.
    #[serde(skip)]
    pub theta_cc_draws: Vec<f64>,
    #[serde(skip)]
    pub theta_ct_draws: Vec<f64>,
    /// `theta_ct_draws - theta_cc_draws`, elementwise.
    #[serde(skip)]
    pub effect_draws: Vec<f64>,
    pub theta_cc: DrawSummary,
    pub theta_ct: DrawSummary,
    pub effect: DrawSummary,
    pub source_summaries: Vec<SourceSummary>,
    /// R̂ and MC-ESS of the sampled parameters; empty for exact methods.
    pub diagnostics: Vec<ParamDiagnostic>,
    pub warnings: Vec<String>,
    /// Method-specific scalars (for example the posterior mean of UIP's `M`).
    pub details: BTreeMap<String, f64>,
}

impl PosteriorResult {
    pub(crate) fn new(method: Method, data: &StudySet, theta_cc: Vec<f64>, theta_ct: Vec<f64>) -> Self {
        assert_eq!(theta_cc.len(), theta_ct.len(), "control and treatment draw counts differ");
        let effect: Vec<f64> = theta_ct.iter().zip(&theta_cc).map(|(t, c)| t - c).collect();
        Self {
            method,
            endpoint: data.endpoint(),
            theta_cc: summarize(&theta_cc),
            theta_ct: summarize(&theta_ct),
            effect: summarize(&effect),
            theta_cc_draws: theta_cc,
            theta_ct_draws: theta_ct,
            effect_draws: effect,
            source_summaries: Vec::new(),
            diagnostics: Vec::new(),
            warnings: Vec::new(),
            details: BTreeMap::new(),
        }
    }

    pub fn max_rhat(&self) -> Option<f64> {
        self.diagnostics
            .iter()
            .map(|d| d.rhat)
            .filter(|r| r.is_finite())
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }

    pub fn min_chain_ess(&self) -> Option<f64> {
        self.diagnostics
            .iter()
            .map(|d| d.ess)
            .fold(None, |acc, e| Some(acc.map_or(e, |a: f64| a.min(e))))
    }

    pub fn summary_for(&self, source: &str) -> Option<&SourceSummary> {
        self.source_summaries.iter().find(|s| s.source == source)
    }

    pub fn source_values(&self) -> Vec<f64> {
        self.source_summaries.iter().map(|s| s.value).collect()
    }
}

/// Fit one method with its configuration from `cfgs`.
pub fn fit(method: Method, data: &StudySet, cfgs: &MethodConfigs, spec: &ChainSpec) -> Result<PosteriorResult, MethodError> {
    spec.validate()?;
    match method {
        Method::CurrentOnly => fit_current_only(data, spec),
        Method::Map => fit_map(data, &cfgs.map, &cfgs.mixture, spec),
        Method::RobustMap => fit_robust_map(data, &cfgs.map, &cfgs.mixture, spec),
        Method::DpmMap => fit_dpm_map(data, &cfgs.dpm_map, &cfgs.mixture, spec),
        Method::Dmpp => fit_dmpp(data, &cfgs.dmpp, spec),
        Method::Uip => fit_uip(data, &cfgs.uip, spec),
        Method::PbmHs => fit_pbm_hs(data, &cfgs.pbm_hs, spec),
        Method::Mem => fit_mem(data, &cfgs.mem, spec),
        Method::Dpm => fit_dpm(data, &cfgs.dpm, spec),
        Method::Ddpm => fit_ddpm(data, &cfgs.ddpm, spec),
    }
}

/// EHSS of a fitted result: mixture approximation of the current-control
/// draws and ELIR ESS, with the EM seed tied to the run seed. `sigma_ref` is
/// used for continuous endpoints only.
pub fn ehss_for(
    result: &PosteriorResult,
    data: &StudySet,
    sigma_ref: Option<f64>,
    cfgs: &MethodConfigs,
    spec: &ChainSpec,
) -> Result<crate::ess::EssResult, EssError> {
    let sigma = match data.endpoint() {
        Endpoint::Binary => None,
        Endpoint::Continuous => sigma_ref,
    };
    crate::ess::posterior_ehss(
        &result.theta_cc_draws,
        data.endpoint(),
        data.n_cc(),
        sigma,
        &common::em_for(&cfgs.mixture, spec),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_parsing() {
        assert_eq!("pbm_hs".parse::<Method>().unwrap(), Method::PbmHs);
        assert_eq!("DPM-MAP".parse::<Method>().unwrap(), Method::DpmMap);
        assert!("bogus".parse::<Method>().is_err());
        let all = Method::parse_list("all").unwrap();
        assert_eq!(all.len(), 9);
        assert_eq!(all[0], Method::CurrentOnly);
        assert!(!all.contains(&Method::RobustMap));
        assert_eq!(
            Method::parse_list("mem, current_only,mem").unwrap(),
            vec![Method::Mem, Method::CurrentOnly]
        );
    }

    #[test]
    fn tags_are_distinct() {
        let mut tags: Vec<u16> = Method::ALL.iter().map(|m| m.tag()).collect();
        tags.sort();
        tags.dedup();
        assert_eq!(tags.len(), Method::ALL.len());
        assert!(tags.iter().all(|&t| t > 0));
    }
}
