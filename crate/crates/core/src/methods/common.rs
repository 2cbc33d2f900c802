use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conjugate::{normal_posterior_update, BetaParams, NormalParams};
use crate::data::{Arm, StudySet};
use crate::ess::EmConfig;
use crate::inference::{map_indexed, stream_rng, ChainOutput, ChainRng, ChainSpec, ParamDiagnostic, Purpose};
use crate::math::{mean, quantile_sorted};

use super::config::VAGUE_NORMAL;

/// Mean, SD and type-7 median and central 95% interval of a draw sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawSummary {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn summarize(draws: &[f64]) -> DrawSummary {
    if draws.is_empty() {
        return DrawSummary {
            mean: f64::NAN,
            sd: f64::NAN,
            median: f64::NAN,
            lower: f64::NAN,
            upper: f64::NAN,
        };
    }
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    DrawSummary {
        mean: mean(draws),
        sd: if draws.len() > 1 { crate::math::variance(draws).sqrt() } else { 0.0 },
        median: quantile_sorted(&s, 0.5),
        lower: quantile_sorted(&s, 0.025),
        upper: quantile_sorted(&s, 0.975),
    }
}

pub(crate) fn beta_draw(rng: &mut ChainRng, a: f64, b: f64) -> f64 {
    let x: f64 = Beta::new(a, b).expect("valid beta shapes").sample(rng);
    // keep strictly inside (0, 1) for logit-scale consumers
    x.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub(crate) fn normal_draw(rng: &mut ChainRng, p: NormalParams) -> f64 {
    p.m + p.v.sqrt() * rng.sample::<f64, _>(StandardNormal)
}

/// Index drawn from unnormalised log weights, by cumulative sums in index
/// order.
pub(crate) fn categorical_log(rng: &mut ChainRng, log_w: &[f64]) -> usize {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    categorical(rng, &w)
}

pub(crate) fn categorical(rng: &mut ChainRng, w: &[f64]) -> usize {
    let total: f64 = w.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            return i;
        }
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(w.len() - 1)
}

/// `spec.n_keep` independent draws per chain on `(Exact, tag, chain)`
/// streams, concatenated in chain order.
pub(crate) fn exact_draws<F>(spec: &ChainSpec, tag: u16, sampler: F) -> Vec<f64>
where
    F: Fn(&mut ChainRng) -> f64 + Sync + Send,
{
    map_indexed(spec.n_chains, spec.execution, |chain| {
        let mut rng = stream_rng(spec.seed, Purpose::Exact, tag, chain as u32);
        (0..spec.n_keep).map(|_| sampler(&mut rng)).collect::<Vec<f64>>()
    })
    .concat()
}

/// Conjugate posterior of a binary arm under Beta(1,1).
pub(crate) fn binary_posterior(arm: &Arm) -> BetaParams {
    let b = arm.as_binary().expect("binary arm");
    BetaParams {
        a: 1.0 + b.y as f64,
        b: 1.0 + b.failures() as f64,
    }
}

/// Conjugate posterior of a continuous arm mean under N(0, 100²).
pub(crate) fn continuous_posterior(arm: &Arm) -> NormalParams {
    let c = arm.as_continuous().expect("continuous arm");
    normal_posterior_update(VAGUE_NORMAL, c.mean, c.se())
}

/// Treatment-arm posterior draws: Beta(1,1) or N(0, 100²) prior updated with
/// the treatment arm, on a stream shared by all methods.
pub fn treatment_draws(data: &StudySet, spec: &ChainSpec) -> Vec<f64> {
    let arm = &data.current_treatment().arm;
    map_indexed(spec.n_chains, spec.execution, |chain| {
        let mut rng = stream_rng(spec.seed, Purpose::Treatment, 0, chain as u32);
        match arm {
            Arm::Binary(_) => {
                let p = binary_posterior(arm);
                (0..spec.n_keep).map(|_| beta_draw(&mut rng, p.a, p.b)).collect::<Vec<f64>>()
            }
            Arm::Continuous(_) => {
                let p = continuous_posterior(arm);
                (0..spec.n_keep).map(|_| normal_draw(&mut rng, p)).collect()
            }
        }
    })
    .concat()
}

/// EM settings for one fit: the configured seed offset is combined with the
/// run seed, and execution follows the chain spec.
pub(crate) fn em_for(cfg: &EmConfig, spec: &ChainSpec) -> EmConfig {
    EmConfig {
        seed: spec.seed ^ cfg.seed,
        execution: spec.execution,
        ..*cfg
    }
}

/// R̂ / MC-ESS for the named parameters of a chain run.
pub(crate) fn diagnostics_for(out: &ChainOutput, names: &[String]) -> Vec<ParamDiagnostic> {
    names
        .iter()
        .filter_map(|n| out.diagnose(n).and_then(Result::ok))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BuiltinDataset;

    #[test]
    fn categorical_follows_weights() {
        let mut rng = stream_rng(1, Purpose::Exact, 0, 0);
        let w = [0.2, 0.0, 0.8];
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[categorical(&mut rng, &w)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 20_000.0 - 0.2).abs() < 0.01);
        let mut rng = stream_rng(1, Purpose::Exact, 0, 0);
        assert_eq!(categorical_log(&mut rng, &[-1e9, 0.0]), 1);
    }

    #[test]
    fn treatment_draws_conjugate() {
        let d = BuiltinDataset::AsBinary.load();
        let spec = ChainSpec {
            n_chains: 2,
            n_keep: 20_000,
            ..ChainSpec::with_seed(4)
        };
        let t = treatment_draws(&d, &spec);
        assert_eq!(t.len(), 40_000);
        // Beta(15, 10): mean 0.6, sd 0.096
        assert!((mean(&t) - 0.6).abs() < 3.0 * 0.096 / 200.0);
    }

    #[test]
    fn summary_interval_contains_mean() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 100.0]);
        assert!(s.lower <= s.mean && s.mean <= s.upper);
        assert_eq!(s.median, 3.0);
    }
}
