//! Multisource exchangeability model by exact enumeration of all `2^K`
//! exchangeability patterns.
//!
//! Pattern `Ω` is a bitmask over sources (bit k set: source k is exchangeable
//! with the current control). Its prior integrates a Beta(a, b) inclusion
//! probability: `Pr(Ω) = B(a + s, b + K - s) / B(a, b)` with `s = |Ω|`. Its
//! marginal pools the current control with the included sources under one
//! vague prior; each excluded source gets its own copy of that prior.
//! Binary marginals use beta kernels without binomial coefficients: every arm
//! contributes its own coefficient to every pattern, so they cancel.

use serde::{Deserialize, Serialize};

use crate::conjugate::{
    beta_kernel_log_marginal, normal_group_log_marginal, normal_known_var_log_marginal, BetaParams,
};
use crate::data::{Arm, StudySet};
use crate::inference::ChainSpec;
use crate::math::{ln_beta, log_sum_exp};

use super::common::{beta_draw, categorical, exact_draws, normal_draw, treatment_draws};
use super::config::{MemConfig, PriorComponent};
use super::{Method, MethodError, PosteriorResult, SourceSummary, SummaryKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemState {
    pub k: usize,
    /// Inclusion bitmask of each pattern, in increasing order `0..2^K`.
    pub patterns: Vec<u32>,
    pub pattern_log_prior: Vec<f64>,
    pub pattern_log_marginal: Vec<f64>,
    /// Normalised by subtracting the log-sum-exp.
    pub pattern_posterior: Vec<f64>,
    /// Normalised by shifting to the maximum and dividing by the sum.
    pub pattern_posterior_direct: Vec<f64>,
    /// Conjugate posterior of θ_CC under each pattern.
    pub pattern_theta: Vec<PriorComponent>,
    pub p_ex: Vec<f64>,
}

impl MemState {
    pub fn includes(pattern: u32, source: usize) -> bool {
        pattern >> source & 1 == 1
    }
}

/// `log Pr(Ω)` for a pattern with `s` of `k` sources included.
pub fn mem_pattern_log_prior(k: usize, s: usize, inclusion: BetaParams) -> f64 {
    ln_beta(inclusion.a + s as f64, inclusion.b + (k - s) as f64) - ln_beta(inclusion.a, inclusion.b)
}

pub fn mem_state(data: &StudySet, cfg: &MemConfig) -> Result<MemState, MethodError> {
    let k = data.k();
    if k > cfg.max_sources || k > 30 {
        return Err(MethodError::TooManySources(k, cfg.max_sources.min(30)));
    }
    if cfg.vague_prior.endpoint() != data.endpoint() || !cfg.vague_prior.is_valid() {
        return Err(MethodError::InvalidConfig("MEM prior does not match the endpoint".into()));
    }
    let cc = data.current_control().arm;
    let hist: Vec<Arm> = data.historical().iter().map(|h| h.arm).collect();
    let n_patterns = 1usize << k;
    let patterns: Vec<u32> = (0..n_patterns as u32).collect();

    // independent marginal of each source under its own prior
    let solo: Vec<f64> = hist.iter().map(|a| arm_group(&cfg.vague_prior, &[*a]).0).collect();

    let mut log_prior = Vec::with_capacity(n_patterns);
    let mut log_marg = Vec::with_capacity(n_patterns);
    let mut theta = Vec::with_capacity(n_patterns);
    for &p in &patterns {
        let s = p.count_ones() as usize;
        log_prior.push(mem_pattern_log_prior(k, s, cfg.inclusion_prior));
        let mut group = vec![cc];
        let mut lm = 0.0;
        for (j, a) in hist.iter().enumerate() {
            if MemState::includes(p, j) {
                group.push(*a);
            } else {
                lm += solo[j];
            }
        }
        let (g, post) = arm_group(&cfg.vague_prior, &group);
        log_marg.push(lm + g);
        theta.push(post);
    }
    let log_post: Vec<f64> = log_prior.iter().zip(&log_marg).map(|(a, b)| a + b).collect();
    let lse = log_sum_exp(&log_post);
    let pattern_posterior: Vec<f64> = log_post.iter().map(|l| (l - lse).exp()).collect();
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_post.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    let pattern_posterior_direct: Vec<f64> = unnorm.iter().map(|u| u / total).collect();
    let p_ex = (0..k)
        .map(|j| {
            patterns
                .iter()
                .zip(&pattern_posterior)
                .filter(|(p, _)| MemState::includes(**p, j))
                .map(|(_, w)| w)
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
        .collect();
    Ok(MemState {
        k,
        patterns,
        pattern_log_prior: log_prior,
        pattern_log_marginal: log_marg,
        pattern_posterior,
        pattern_posterior_direct,
        pattern_theta: theta,
        p_ex,
    })
}

/// Log marginal of arms sharing one parameter under `prior` (binary: kernel
/// only), and the resulting posterior.
fn arm_group(prior: &PriorComponent, arms: &[Arm]) -> (f64, PriorComponent) {
    match *prior {
        PriorComponent::Beta { a, b } => {
            let (mut s, mut f) = (0.0, 0.0);
            for arm in arms {
                let x = arm.as_binary().expect("binary arm");
                s += x.y as f64;
                f += x.failures() as f64;
            }
            (
                beta_kernel_log_marginal(BetaParams { a, b }, s, f),
                PriorComponent::Beta { a: a + s, b: b + f },
            )
        }
        PriorComponent::Normal { mean, var } => {
            let obs: Vec<(f64, f64)> = arms
                .iter()
                .map(|arm| {
                    let c = arm.as_continuous().expect("continuous arm");
                    (c.mean, c.se())
                })
                .collect();
            let prior = crate::conjugate::NormalParams { m: mean, v: var };
            if obs.len() == 1 {
                let (m, se) = obs[0];
                let post = crate::conjugate::normal_posterior_update(prior, m, se);
                return (
                    normal_known_var_log_marginal(prior, m, se),
                    PriorComponent::Normal { mean: post.m, var: post.v },
                );
            }
            let (lm, post) = normal_group_log_marginal(prior, &obs);
            (lm, PriorComponent::Normal { mean: post.m, var: post.v })
        }
    }
}

/// Exact MEM posterior: θ_CC is drawn by first drawing a pattern from its
/// posterior, then θ_CC from that pattern's conjugate posterior.
pub fn fit_mem(data: &StudySet, cfg: &MemConfig, spec: &ChainSpec) -> Result<PosteriorResult, MethodError> {
    spec.validate()?;
    let state = mem_state(data, cfg)?;
    let cc = exact_draws(spec, Method::Mem.tag(), |rng| {
        let i = categorical(rng, &state.pattern_posterior);
        match state.pattern_theta[i] {
            PriorComponent::Beta { a, b } => beta_draw(rng, a, b),
            PriorComponent::Normal { mean, var } => normal_draw(rng, crate::conjugate::NormalParams { m: mean, v: var }),
        }
    });
    let mut r = PosteriorResult::new(Method::Mem, data, cc, treatment_draws(data, spec));
    r.source_summaries = data
        .historical()
        .iter()
        .zip(&state.p_ex)
        .map(|(h, &p)| SourceSummary::scalar(&h.label, SummaryKind::ExchangeabilityProbability, p))
        .collect();
    r.details.insert("patterns".into(), state.patterns.len() as f64);
    let map = state
        .pattern_posterior
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (i, &w)| if w > acc.1 { (i, w) } else { acc });
    r.details.insert("map_pattern_probability".into(), map.1);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BinaryArm, BuiltinDataset, LabeledArm};
    use crate::math::ln_choose;

    fn cfg(data: &StudySet) -> MemConfig {
        super::super::MethodConfigs::defaults(data).mem
    }

    #[test]
    fn pattern_prior_values() {
        // K = 2, one included: B(2, 2) = 1/6
        assert!((mem_pattern_log_prior(2, 1, BetaParams::UNIFORM).exp() - 1.0 / 6.0).abs() < 1e-15);
        // sum over all 2^8 patterns is one
        let total: f64 = (0..=8)
            .map(|s| ln_choose(8, s as u64).exp() * mem_pattern_log_prior(8, s, BetaParams::UNIFORM).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_case_study_pex() {
        let d = BuiltinDataset::AsBinary.load();
        let st = mem_state(&d, &cfg(&d)).unwrap();
        assert_eq!(st.patterns.len(), 256);
        let prior_total: f64 = st.pattern_log_prior.iter().map(|l| l.exp()).sum();
        assert!((prior_total - 1.0).abs() < 1e-12);
        let post_total: f64 = st.pattern_posterior.iter().sum();
        assert!((post_total - 1.0).abs() < 1e-12);
        for (a, b) in st.pattern_posterior.iter().zip(&st.pattern_posterior_direct) {
            assert!((a - b).abs() < 1e-12);
        }
        let argmin = (0..8).min_by(|&i, &j| st.p_ex[i].total_cmp(&st.p_ex[j])).unwrap();
        assert_eq!(argmin, 6, "H7 least exchangeable: {:?}", st.p_ex);
        // p_EX,7 is well below the others
        assert!(st.p_ex[6] < 0.5 && st.p_ex.iter().enumerate().all(|(i, &p)| i == 6 || p > 0.7));
    }

    #[test]
    fn pex_matches_brute_force_with_coefficients() {
        // Including per-arm binomial coefficients must not change p_EX.
        let d = BuiltinDataset::AsBinary.load();
        let st = mem_state(&d, &cfg(&d)).unwrap();
        let arms: Vec<BinaryArm> = d.binary_historical().unwrap();
        let cc = *d.current_control().arm.as_binary().unwrap();
        let coef: f64 = arms.iter().chain(std::iter::once(&cc)).map(|a| ln_choose(a.n, a.y)).sum();
        let lp: Vec<f64> = st
            .pattern_log_prior
            .iter()
            .zip(&st.pattern_log_marginal)
            .map(|(a, b)| a + b + coef)
            .collect();
        let lse = log_sum_exp(&lp);
        let p0: f64 = st
            .patterns
            .iter()
            .zip(&lp)
            .filter(|(p, _)| MemState::includes(**p, 0))
            .map(|(_, l)| (l - lse).exp())
            .sum();
        assert!((p0 - st.p_ex[0]).abs() < 1e-12);
    }

    #[test]
    fn too_many_sources() {
        let arms: Vec<LabeledArm> = (0..21)
            .map(|i| LabeledArm {
                label: format!("H{i}"),
                arm: Arm::Binary(BinaryArm::new(10, 3).unwrap()),
            })
            .collect();
        let cc = LabeledArm {
            label: "CC".into(),
            arm: Arm::Binary(BinaryArm::new(10, 3).unwrap()),
        };
        let ct = LabeledArm { label: "CT".into(), ..cc.clone() };
        let d = StudySet::new(crate::data::Endpoint::Binary, arms, cc, ct).unwrap();
        assert!(matches!(mem_state(&d, &cfg(&d)), Err(MethodError::TooManySources(21, 20))));
    }

    #[test]
    fn continuous_pex_in_unit_interval() {
        let d = BuiltinDataset::AdcsContinuous.load();
        let st = mem_state(&d, &cfg(&d)).unwrap();
        assert!(st.p_ex.iter().all(|p| (0.0..=1.0).contains(p)));
        // sources far from the current control are rarely exchangeable
        assert!(st.p_ex[0] < 0.1 && st.p_ex[1] < 0.1);
    }
}
