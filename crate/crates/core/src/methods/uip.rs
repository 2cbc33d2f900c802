//! Unit information prior.
//!
//! The control-arm prior has mean `Σ w_k θ̂_k` and variance
//! `1 / (M Σ w_k I_U(θ̂_k))`, where `I_U` is the unit information of one
//! observation (`1/(p(1-p))` binary, `1/sd²` continuous), `w ~ Dirichlet(ν)`
//! and `M ~ Unif(0, U)` is the borrowed sample size. Binary priors are
//! moment-matched to a beta. θ_CC is integrated out for the (w, M) updates
//! and drawn conjugately each iteration.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::conjugate::{BetaParams, NormalParams};
use crate::data::{Arm, StudySet};
use crate::inference::{run_chains, ChainKernel, ChainRng, ChainSpec, RandomWalk};
use crate::math::{ln_beta, ln_gamma, logistic, normal_log_pdf};

use super::common::{beta_draw, diagnostics_for, normal_draw, treatment_draws};
use super::config::UipConfig;
use super::{Method, MethodError, PosteriorResult, SourceSummary, SummaryKind};

/// `(μ, τ²)` of the unit information prior for source estimates `est` with
/// unit informations `info`, weights `w` and borrowed sample size `m`.
pub fn uip_prior_moments(est: &[f64], info: &[f64], w: &[f64], m: f64) -> (f64, f64) {
    let mu = est.iter().zip(w).map(|(e, w)| e * w).sum();
    let total: f64 = info.iter().zip(w).map(|(i, w)| i * w).sum();
    (mu, 1.0 / (m * total))
}

/// Stick-breaking map from unconstrained `y ∈ R^{K-1}` to the simplex, with
/// the log Jacobian. `y = 0` gives equal weights.
fn simplex(y: &[f64]) -> (Vec<f64>, f64) {
    let k = y.len() + 1;
    let mut w = Vec::with_capacity(k);
    let mut rest = 1.0f64;
    let mut log_jac = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let z = logistic(yi - ((k - i - 1) as f64).ln());
        log_jac += z.ln() + (1.0 - z).ln() + rest.ln();
        w.push(rest * z);
        rest *= 1.0 - z;
    }
    w.push(rest);
    (w, log_jac)
}

fn dirichlet_log(w: &[f64], nu: &[f64]) -> f64 {
    let norm = ln_gamma(nu.iter().sum()) - nu.iter().map(|&v| ln_gamma(v)).sum::<f64>();
    norm + w.iter().zip(nu).map(|(&x, &v)| (v - 1.0) * x.ln()).sum::<f64>()
}

#[derive(Debug, Clone, Copy)]
enum ControlPrior {
    Beta(BetaParams),
    Normal(NormalParams),
}

#[derive(Debug, Clone)]
struct UipModel {
    est: Vec<f64>,
    info: Vec<f64>,
    nu: Vec<f64>,
    log_upper: f64,
    cc: Arm,
}

impl UipModel {
    /// Control prior for (w, M), and whether the beta moment match failed.
    fn prior(&self, w: &[f64], m: f64) -> (ControlPrior, bool) {
        let (mu, t2) = uip_prior_moments(&self.est, &self.info, w, m);
        match self.cc {
            Arm::Binary(_) => match BetaParams::from_moments(mu, t2) {
                Some(p) => (ControlPrior::Beta(p), false),
                None => (ControlPrior::Beta(BetaParams::UNIFORM), true),
            },
            Arm::Continuous(_) => (ControlPrior::Normal(NormalParams { m: mu, v: t2 }), false),
        }
    }

    fn log_marginal(&self, prior: ControlPrior) -> f64 {
        match (prior, self.cc) {
            (ControlPrior::Beta(p), Arm::Binary(x)) => {
                let (y, f) = (x.y as f64, x.failures() as f64);
                ln_beta(p.a + y, p.b + f) - ln_beta(p.a, p.b)
            }
            (ControlPrior::Normal(p), Arm::Continuous(x)) => normal_log_pdf(x.mean, p.m, p.v + x.se() * x.se()),
            _ => unreachable!(),
        }
    }

    /// Log target over (y, log M), including both Jacobians.
    fn log_target(&self, y: &[f64], log_m: f64) -> f64 {
        if log_m >= self.log_upper {
            return f64::NEG_INFINITY;
        }
        let (w, log_jac) = simplex(y);
        if w.iter().any(|&x| !(x > 0.0)) {
            return f64::NEG_INFINITY;
        }
        let (prior, _) = self.prior(&w, log_m.exp());
        self.log_marginal(prior) + dirichlet_log(&w, &self.nu) + log_jac + log_m
    }
}

struct UipChain {
    model: UipModel,
    y: Vec<f64>,
    log_m: f64,
    theta: f64,
    fallback: bool,
    y_rw: Vec<RandomWalk>,
    m_rw: RandomWalk,
}

fn reflect(x: f64, upper: f64) -> f64 {
    if x > upper {
        2.0 * upper - x
    } else {
        x
    }
}

impl ChainKernel for UipChain {
    fn param_names(&self) -> Vec<String> {
        let k = self.y.len() + 1;
        let mut v = vec!["theta".to_string(), "m".into(), "fallback".into()];
        v.extend((1..=k).map(|i| format!("w[{i}]")));
        v.extend((1..=k).map(|i| format!("mw[{i}]")));
        v
    }

    fn sweep(&mut self, rng: &mut ChainRng) {
        for i in 0..self.y.len() {
            let mut y = self.y.clone();
            let (model, log_m) = (&self.model, self.log_m);
            let mut f = |v: f64| {
                y[i] = v;
                model.log_target(&y, log_m)
            };
            let lp = f(self.y[i]);
            self.y[i] = self.y_rw[i].step(self.y[i], lp, &mut f, rng).0;
        }

        // random walk on log M reflected at log U
        let upper = self.model.log_upper;
        let (model, y) = (&self.model, &self.y);
        let f = |v: f64| model.log_target(y, reflect(v, upper));
        let lp = f(self.log_m);
        self.log_m = reflect(self.m_rw.step(self.log_m, lp, f, rng).0, upper);

        let (w, _) = simplex(&self.y);
        let (prior, fallback) = self.model.prior(&w, self.log_m.exp());
        self.fallback = fallback;
        self.theta = match (prior, self.model.cc) {
            (ControlPrior::Beta(p), Arm::Binary(x)) => {
                beta_draw(rng, p.a + x.y as f64, p.b + x.failures() as f64)
            }
            (ControlPrior::Normal(p), Arm::Continuous(x)) => {
                let se2 = x.se() * x.se();
                let v = 1.0 / (1.0 / p.v + 1.0 / se2);
                normal_draw(rng, NormalParams { m: v * (p.m / p.v + x.mean / se2), v })
            }
            _ => unreachable!(),
        };
    }

    fn end_warmup(&mut self) {
        self.y_rw.iter_mut().for_each(RandomWalk::end_warmup);
        self.m_rw.end_warmup();
    }

    fn record(&self, out: &mut Vec<f64>) {
        let (w, _) = simplex(&self.y);
        let m = self.log_m.exp();
        out.extend([self.theta, m, if self.fallback { 1.0 } else { 0.0 }]);
        out.extend(&w);
        out.extend(w.iter().map(|x| m * x));
    }

    fn acceptance(&self) -> Vec<f64> {
        let k = self.y.len() + 1;
        let mut v = vec![1.0, self.m_rw.acceptance_rate(), 1.0];
        v.extend(std::iter::repeat_n(1.0, 2 * k));
        v
    }
}

fn build_model(data: &StudySet, cfg: &UipConfig) -> (UipModel, Vec<String>) {
    let mut warnings = Vec::new();
    let (est, info): (Vec<f64>, Vec<f64>) = data
        .historical()
        .iter()
        .map(|h| match h.arm {
            Arm::Binary(b) => {
                let mut p = b.rate();
                if b.y == 0 || b.y == b.n {
                    p = (b.y as f64 + 0.5) / (b.n as f64 + 1.0);
                    warnings.push(format!("{}: observed rate {} corrected to {p:.4}", h.label, b.rate()));
                }
                (p, 1.0 / (p * (1.0 - p)))
            }
            Arm::Continuous(c) => (c.mean, 1.0 / (c.sd * c.sd)),
        })
        .unzip();
    let model = UipModel {
        est,
        info,
        nu: cfg.dirichlet_weights.clone(),
        log_upper: cfg.m_upper.ln(),
        cc: data.current_control().arm,
    };
    (model, warnings)
}

pub fn fit_uip(data: &StudySet, cfg: &UipConfig, spec: &ChainSpec) -> Result<PosteriorResult, MethodError> {
    spec.validate()?;
    let k = data.k();
    if cfg.dirichlet_weights.len() != k || cfg.dirichlet_weights.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(MethodError::InvalidConfig(format!("UIP needs {k} positive Dirichlet weights")));
    }
    if !(cfg.m_upper > 0.0 && cfg.m_upper.is_finite()) {
        return Err(MethodError::InvalidConfig("UIP upper bound on M must be positive".into()));
    }
    let (model, mut warnings) = build_model(data, cfg);

    let out = run_chains(spec, Method::Uip.tag(), |chain, rng| {
        let y: Vec<f64> = (0..k - 1)
            .map(|_| if chain == 0 { 0.0 } else { 0.5 * rng.sample::<f64, _>(StandardNormal) })
            .collect();
        UipChain {
            model: model.clone(),
            y,
            log_m: model.log_upper + (0.1 + 0.5 * rng.random::<f64>()).ln(),
            theta: 0.0,
            fallback: false,
            y_rw: (0..k - 1).map(|_| RandomWalk::new(0.5)).collect(),
            m_rw: RandomWalk::new(0.5),
        }
    });

    let mut r = PosteriorResult::new(Method::Uip, data, out.pooled("theta").expect("theta"), treatment_draws(data, spec));
    r.source_summaries = data
        .historical()
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let draws = out.pooled(&format!("mw[{}]", i + 1)).expect("mw");
            SourceSummary::from_draws(&h.label, SummaryKind::UipContribution, &draws)
        })
        .collect();
    let mut names = vec!["theta".to_string(), "m".into()];
    names.extend((1..=k).map(|i| format!("w[{i}]")));
    r.diagnostics = diagnostics_for(&out, &names);
    let fallbacks = out.pooled("fallback").expect("fallback").iter().filter(|&&x| x > 0.0).count();
    if fallbacks > 0 {
        warnings.push(format!("beta moment match invalid in {fallbacks} iterations: Beta(1,1) used"));
    }
    r.details.insert("moment_match_fallbacks".into(), fallbacks as f64);
    r.details.insert("m_mean".into(), crate::math::mean(&out.pooled("m").expect("m")));
    r.warnings = warnings;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BuiltinDataset;
    use crate::methods::MethodConfigs;

    #[test]
    fn moments_formulas() {
        let (mu, _) = uip_prior_moments(&[0.2, 0.4], &[1.0, 1.0], &[0.5, 0.5], 1.0);
        assert!((mu - 0.3).abs() < 1e-15);
        let (_, t2) = uip_prior_moments(&[0.5], &[4.0], &[1.0], 10.0);
        assert!((t2 - 0.025).abs() < 1e-15);
        let b = BetaParams::from_moments(0.3, 0.01).unwrap();
        assert!((b.a - 6.0).abs() < 1e-12 && (b.b - 14.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_map_and_jacobian() {
        let (w, _) = simplex(&[0.0, 0.0, 0.0]);
        for x in &w {
            assert!((x - 0.25).abs() < 1e-15);
        }
        let y = [0.3, -1.2, 2.0];
        let (w, lj) = simplex(&y);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // Jacobian of (y) -> (w_1..w_{K-1}) is lower triangular
        let h = 1e-6;
        let mut det = 1.0;
        for i in 0..3 {
            let mut up = y;
            let mut dn = y;
            up[i] += h;
            dn[i] -= h;
            det *= (simplex(&up).0[i] - simplex(&dn).0[i]) / (2.0 * h);
        }
        assert!((det.ln() - lj).abs() < 1e-6);
    }

    #[test]
    fn reflection_stays_below_bound() {
        assert_eq!(reflect(2.5, 2.0), 1.5);
        assert_eq!(reflect(1.0, 2.0), 1.0);
    }

    #[test]
    fn binary_run_contributions_positive() {
        let d = BuiltinDataset::AsBinary.load();
        let cfg = MethodConfigs::defaults(&d).uip;
        let spec = ChainSpec {
            n_chains: 2,
            n_warmup: 500,
            n_keep: 2000,
            ..ChainSpec::with_seed(2)
        };
        let r = fit_uip(&d, &cfg, &spec).unwrap();
        assert_eq!(r.source_summaries.len(), 8);
        assert!(r.source_summaries.iter().all(|s| s.value > 0.0 && s.value < 513.0));
        assert!(r.theta_cc.mean > 0.15 && r.theta_cc.mean < 0.35);
    }

    /// Posterior means of (M w_1..M w_K, M) by importance sampling from the
    /// prior with weights m_CC(w, M).
    fn prior_importance_means(d: &StudySet, cfg: &UipConfig, n: usize) -> Vec<f64> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Gamma};
        let (model, _) = build_model(d, cfg);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let gammas: Vec<Gamma<f64>> = cfg.dirichlet_weights.iter().map(|&v| Gamma::new(v, 1.0).unwrap()).collect();
        let (mut samples, mut logw) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let g: Vec<f64> = gammas.iter().map(|d| d.sample(&mut rng)).collect();
            let total: f64 = g.iter().sum();
            let m = cfg.m_upper * rng.random::<f64>();
            let w: Vec<f64> = g.iter().map(|x| x / total).collect();
            logw.push(model.log_marginal(model.prior(&w, m).0));
            samples.push(w.iter().map(|x| m * x).chain([m]).collect::<Vec<f64>>());
        }
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        (0..samples[0].len())
            .map(|j| samples.iter().zip(&w).map(|(s, w)| s[j] * w).sum::<f64>() / total)
            .collect()
    }

    #[test]
    fn posterior_matches_prior_importance_sampling() {
        let spec = ChainSpec {
            n_chains: 4,
            n_warmup: 1000,
            n_keep: 10_000,
            ..ChainSpec::with_seed(8)
        };
        for ds in [BuiltinDataset::AsBinary, BuiltinDataset::AdcsContinuous] {
            let d = ds.load();
            let cfg = MethodConfigs::defaults(&d).uip;
            let oracle = prior_importance_means(&d, &cfg, 400_000);
            let r = fit_uip(&d, &cfg, &spec).unwrap();
            let ours: Vec<f64> = r.source_summaries.iter().map(|s| s.value).chain([r.details["m_mean"]]).collect();
            let scale = cfg.m_upper;
            for (o, m) in oracle.iter().zip(&ours) {
                assert!((o - m).abs() < 0.01 * scale, "{}: oracle {oracle:?} vs {ours:?}", ds.name());
            }
        }
    }
}
