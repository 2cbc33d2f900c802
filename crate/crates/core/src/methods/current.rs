use crate::data::{Endpoint, StudySet};
use crate::inference::ChainSpec;

use super::common::{beta_draw, binary_posterior, continuous_posterior, exact_draws, normal_draw, treatment_draws};
use super::{Method, MethodError, PosteriorResult};

/// Reference analysis without borrowing: the current control alone, under
/// Beta(1,1) or N(0, 100²), sampled exactly.
pub fn fit_current_only(data: &StudySet, spec: &ChainSpec) -> Result<PosteriorResult, MethodError> {
    spec.validate()?;
    let arm = &data.current_control().arm;
    let tag = Method::CurrentOnly.tag();
    let cc = match data.endpoint() {
        Endpoint::Binary => {
            let p = binary_posterior(arm);
            exact_draws(spec, tag, |rng| beta_draw(rng, p.a, p.b))
        }
        Endpoint::Continuous => {
            let p = continuous_posterior(arm);
            exact_draws(spec, tag, |rng| normal_draw(rng, p))
        }
    };
    Ok(PosteriorResult::new(Method::CurrentOnly, data, cc, treatment_draws(data, spec)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::{normal_posterior_update, NormalParams};
    use crate::data::BuiltinDataset;

    fn spec() -> ChainSpec {
        ChainSpec {
            n_chains: 4,
            n_keep: 10_000,
            ..ChainSpec::with_seed(21)
        }
    }

    #[test]
    fn binary_conjugate_means() {
        let r = fit_current_only(&BuiltinDataset::AsBinary.load(), &spec()).unwrap();
        // Beta(2,6) sd 0.1443; Beta(15,10) sd 0.0961; 40000 draws
        assert!((r.theta_cc.mean - 0.25).abs() < 4.0 * 0.1443 / 200.0);
        assert!((r.theta_ct.mean - 0.6).abs() < 4.0 * 0.0961 / 200.0);
        assert!((r.effect.mean - 0.35).abs() < 0.02);
        assert!(r.source_summaries.is_empty());
        assert!(r.diagnostics.is_empty());
        for ((e, t), c) in r.effect_draws.iter().zip(&r.theta_ct_draws).zip(&r.theta_cc_draws) {
            assert_eq!(*e, t - c);
        }
    }

    #[test]
    fn continuous_conjugate_mean() {
        let r = fit_current_only(&BuiltinDataset::AdcsContinuous.load(), &spec()).unwrap();
        let oracle = normal_posterior_update(NormalParams { m: 0.0, v: 1e4 }, 4.8, 6.3 / 55f64.sqrt());
        assert!((oracle.m - 4.7997).abs() < 1e-4);
        assert!((r.theta_cc.mean - oracle.m).abs() < 0.02);
    }
}
