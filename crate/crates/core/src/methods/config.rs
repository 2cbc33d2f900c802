//! Per-method hyperparameters. Defaults reproduce the case-study settings;
//! endpoint-dependent defaults come from [`MethodConfigs::defaults`].

use serde::{Deserialize, Serialize};

use crate::conjugate::{BetaParams, NormalParams};
use crate::data::Endpoint;
use crate::ess::EmConfig;

/// Vague normal prior N(0, 100²) used for continuous control and treatment
/// parameters.
pub const VAGUE_NORMAL: NormalParams = NormalParams { m: 0.0, v: 1e4 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum PriorComponent {
    Beta { a: f64, b: f64 },
    Normal { mean: f64, var: f64 },
}

impl PriorComponent {
    pub fn vague(endpoint: Endpoint) -> Self {
        match endpoint {
            Endpoint::Binary => PriorComponent::Beta { a: 1.0, b: 1.0 },
            Endpoint::Continuous => PriorComponent::Normal {
                mean: VAGUE_NORMAL.m,
                var: VAGUE_NORMAL.v,
            },
        }
    }

    pub fn beta(&self) -> Option<BetaParams> {
        match *self {
            PriorComponent::Beta { a, b } => Some(BetaParams { a, b }),
            PriorComponent::Normal { .. } => None,
        }
    }

    pub fn normal(&self) -> Option<NormalParams> {
        match *self {
            PriorComponent::Normal { mean, var } => Some(NormalParams { m: mean, v: var }),
            PriorComponent::Beta { .. } => None,
        }
    }

    pub fn endpoint(&self) -> Endpoint {
        match self {
            PriorComponent::Beta { .. } => Endpoint::Binary,
            PriorComponent::Normal { .. } => Endpoint::Continuous,
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            PriorComponent::Beta { a, b } => a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
            PriorComponent::Normal { mean, var } => mean.is_finite() && var > 0.0 && var.is_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    /// Half-normal scale of the between-trial standard deviation τ_MA.
    pub tau_prior_scale: f64,
    /// Prior of the overall mean μ_MA (logit scale for binary).
    pub mu_prior: NormalParams,
    pub mixture_components: usize,
    /// Robust MAP weight w_R.
    pub robust_weight: f64,
    pub robust_component: PriorComponent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpmMapConfig {
    /// Truncation level L of the stick-breaking mixture. `L = 1` collapses
    /// the model to the MAP hierarchy.
    pub truncation: usize,
    pub stick_prior: BetaParams,
    /// Half-normal scale of each component standard deviation τ*_l.
    pub tau_component_scale: f64,
    pub mu_prior: NormalParams,
    pub mixture_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmppConfig {
    pub mu_pp_prior: BetaParams,
    /// κ_PP ~ LogNormal(kappa_log_mean, kappa_log_sd²).
    pub kappa_log_mean: f64,
    pub kappa_log_sd: f64,
    pub initial_prior: PriorComponent,
    /// Diagnostic mode: hold every γ_k at this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UipConfig {
    /// Dirichlet parameters ν_k.
    pub dirichlet_weights: Vec<f64>,
    /// Upper bound of the uniform prior on M.
    pub m_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PbmConfig {
    /// Reporting threshold δ_conflict for `Pr(|β_k| > δ)`, on the analysis scale.
    pub conflict_threshold: f64,
    /// Continuous only; binary uses a uniform prior on the control probability.
    pub theta_prior: NormalParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemConfig {
    /// Prior on the common inclusion probability, integrated out.
    pub inclusion_prior: BetaParams,
    /// Prior of each exchangeability group's parameter.
    pub vague_prior: PriorComponent,
    pub max_sources: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpmConfig {
    /// M ~ Gamma(shape, scale).
    pub concentration_shape: f64,
    pub concentration_scale: f64,
    pub base: PriorComponent,
    /// Diagnostic mode: hold M at this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_concentration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpmConfig {
    pub truncation: usize,
    pub concentration_shape: f64,
    pub concentration_scale: f64,
    pub base: PriorComponent,
    /// Diagnostic mode: one weight vector for both groups.
    pub shared_weights: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_concentration: Option<f64>,
}

/// Resolved configuration of every method for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfigs {
    pub map: MapConfig,
    pub dpm_map: DpmMapConfig,
    pub dmpp: DmppConfig,
    pub uip: UipConfig,
    pub pbm_hs: PbmConfig,
    pub mem: MemConfig,
    pub dpm: DpmConfig,
    pub ddpm: DdpmConfig,
    /// Mixture EM used for MAP-type priors and for ELIR.
    pub mixture: EmConfig,
}

/// Half-normal scale of between-trial SDs for the continuous case study:
/// half a representative ADAS-cog standard deviation of 6.77.
pub const CONTINUOUS_TAU_SCALE: f64 = 6.77 / 2.0;

impl MethodConfigs {
    /// Case-study defaults for `data`. Data-dependent entries: UIP Dirichlet
    /// weights `min(1, n_k / n_CC)` (binary) or 1 (continuous), UIP upper
    /// bound `Σ n_k`, and the continuous DP base `N(pooled mean, (5 sd_CC)²)`.
    pub fn defaults(data: &crate::data::StudySet) -> Self {
        let endpoint = data.endpoint();
        let vague = PriorComponent::vague(endpoint);
        let (tau_scale, mu_prior, conflict) = match endpoint {
            Endpoint::Binary => (1.0, NormalParams { m: 0.0, v: 100.0 }, 0.5),
            Endpoint::Continuous => (CONTINUOUS_TAU_SCALE, VAGUE_NORMAL, 2.0),
        };
        let n_cc = data.n_cc() as f64;
        let dirichlet_weights = data
            .historical()
            .iter()
            .map(|h| match endpoint {
                Endpoint::Binary => (h.arm.n() as f64 / n_cc).min(1.0),
                Endpoint::Continuous => 1.0,
            })
            .collect();
        let base = dp_base(data);
        Self {
            map: MapConfig {
                tau_prior_scale: tau_scale,
                mu_prior,
                mixture_components: 3,
                robust_weight: 0.5,
                robust_component: vague,
            },
            dpm_map: DpmMapConfig {
                truncation: 10,
                stick_prior: BetaParams::UNIFORM,
                tau_component_scale: tau_scale,
                mu_prior,
                mixture_components: 3,
            },
            dmpp: DmppConfig {
                mu_pp_prior: BetaParams::UNIFORM,
                kappa_log_mean: 2f64.ln(),
                kappa_log_sd: 1.0,
                initial_prior: vague,
                fixed_gamma: None,
            },
            uip: UipConfig {
                dirichlet_weights,
                m_upper: data.total_historical_n() as f64,
            },
            pbm_hs: PbmConfig {
                conflict_threshold: conflict,
                theta_prior: VAGUE_NORMAL,
            },
            mem: MemConfig {
                inclusion_prior: BetaParams::UNIFORM,
                vague_prior: vague,
                max_sources: 20,
            },
            dpm: DpmConfig {
                concentration_shape: 1.0,
                concentration_scale: 5.0,
                base,
                fixed_concentration: None,
            },
            ddpm: DdpmConfig {
                truncation: 10,
                concentration_shape: 1.0,
                concentration_scale: 5.0,
                base,
                shared_weights: false,
                fixed_concentration: None,
            },
            mixture: EmConfig::default(),
        }
    }

    /// Defaults with a JSON object of overrides merged in (objects merge
    /// recursively, other values replace).
    pub fn with_overrides(data: &crate::data::StudySet, overrides: &serde_json::Value) -> Result<Self, String> {
        let mut base = serde_json::to_value(Self::defaults(data)).map_err(|e| e.to_string())?;
        merge_json(&mut base, overrides);
        serde_json::from_value(base).map_err(|e| format!("method configuration: {e}"))
    }
}

/// DP base measure: Beta(1,1) for binary; for continuous a normal centred at
/// the sample-size weighted mean of all control arms with standard deviation
/// five times the current-control SD.
fn dp_base(data: &crate::data::StudySet) -> PriorComponent {
    match data.endpoint() {
        Endpoint::Binary => PriorComponent::Beta { a: 1.0, b: 1.0 },
        Endpoint::Continuous => {
            let arms: Vec<_> = data
                .historical()
                .iter()
                .chain(std::iter::once(data.current_control()))
                .filter_map(|a| a.arm.as_continuous().copied())
                .collect();
            let n: f64 = arms.iter().map(|a| a.n as f64).sum();
            let mean = arms.iter().map(|a| a.n as f64 * a.mean).sum::<f64>() / n;
            let sd_ref = data.current_control().arm.as_continuous().map_or(1.0, |a| a.sd);
            PriorComponent::Normal {
                mean,
                var: (5.0 * sd_ref).powi(2),
            }
        }
    }
}

pub fn merge_json(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
