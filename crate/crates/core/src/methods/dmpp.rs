//! Dependent modified power prior.
//!
//! Each source likelihood is raised to a power `γ_k ∈ (0, 1)` and the power
//! prior is normalised by `C(γ) = ∫ π₀(θ) Π_k L_k(θ)^{γ_k} dθ`, closed form
//! under conjugate π₀. The powers share a Beta(μκ, (1-μ)κ) prior with
//! μ ~ Beta and log κ ~ Normal.
//!
//! θ is integrated out for the γ updates: with the current control included,
//! `p(γ | D) ∝ m_CC(γ) Π_k Beta(γ_k; μκ, (1-μ)κ)`, where `m_CC(γ)` is the
//! marginal of the current control under the normalised power prior. Binary
//! marginals use likelihood kernels: `C(n_k, y_k)^{γ_k}` appears in both the
//! numerator and `C(γ)` and cancels.

use rand::Rng;

use crate::conjugate::NormalParams;
use crate::data::{Arm, StudySet};
use crate::inference::{run_chains, ChainKernel, ChainRng, ChainSpec, Slice};
use crate::math::{beta_log_pdf, ln_beta, logistic, logit, normal_log_pdf};

use super::common::{beta_draw, diagnostics_for, normal_draw, treatment_draws};
use super::config::{DmppConfig, PriorComponent};
use super::{Method, MethodError, PosteriorResult, SourceSummary, SummaryKind};
use crate::inference::RandomWalk;

/// Sufficient statistics of the sources and the current control.
#[derive(Debug, Clone)]
enum Suff {
    /// (y, n - y) per source and for the current control; initial Beta(a0, b0).
    Binary { src: Vec<(f64, f64)>, cc: (f64, f64), a0: f64, b0: f64 },
    /// (mean, se) per source and for the current control; initial N(m0, v0).
    Normal { src: Vec<(f64, f64)>, cc: (f64, f64), prior: NormalParams },
}

impl Suff {
    fn new(data: &StudySet, prior: &PriorComponent) -> Result<Self, MethodError> {
        let cc = data.current_control().arm;
        match (*prior, cc) {
            (PriorComponent::Beta { a, b }, Arm::Binary(c)) => Ok(Suff::Binary {
                src: data
                    .binary_historical()
                    .expect("binary sources")
                    .iter()
                    .map(|x| (x.y as f64, x.failures() as f64))
                    .collect(),
                cc: (c.y as f64, c.failures() as f64),
                a0: a,
                b0: b,
            }),
            (PriorComponent::Normal { mean, var }, Arm::Continuous(c)) => Ok(Suff::Normal {
                src: data
                    .historical()
                    .iter()
                    .map(|h| {
                        let x = h.arm.as_continuous().expect("continuous source");
                        (x.mean, x.se())
                    })
                    .collect(),
                cc: (c.mean, c.se()),
                prior: NormalParams { m: mean, v: var },
            }),
            _ => Err(MethodError::InvalidConfig("DMPP initial prior does not match the endpoint".into())),
        }
    }

    /// Normalised power prior given γ (before the current control).
    fn power_prior(&self, gamma: &[f64]) -> PriorComponent {
        match self {
            Suff::Binary { src, a0, b0, .. } => {
                let (mut a, mut b) = (*a0, *b0);
                for (&g, &(y, f)) in gamma.iter().zip(src) {
                    a += g * y;
                    b += g * f;
                }
                PriorComponent::Beta { a, b }
            }
            Suff::Normal { src, prior, .. } => {
                let mut prec = 1.0 / prior.v;
                let mut w = prior.m / prior.v;
                for (&g, &(m, se)) in gamma.iter().zip(src) {
                    prec += g / (se * se);
                    w += g * m / (se * se);
                }
                PriorComponent::Normal { mean: w / prec, var: 1.0 / prec }
            }
        }
    }

    /// log m_CC(γ) and the posterior of θ given γ.
    fn cc_marginal(&self, gamma: &[f64]) -> (f64, PriorComponent) {
        match (self, self.power_prior(gamma)) {
            (Suff::Binary { cc: (y, f), .. }, PriorComponent::Beta { a, b }) => (
                ln_beta(a + y, b + f) - ln_beta(a, b),
                PriorComponent::Beta { a: a + y, b: b + f },
            ),
            (Suff::Normal { cc: (m, se), .. }, PriorComponent::Normal { mean, var }) => {
                let se2 = se * se;
                let v = 1.0 / (1.0 / var + 1.0 / se2);
                (
                    normal_log_pdf(*m, mean, var + se2),
                    PriorComponent::Normal { mean: v * (mean / var + m / se2), var: v },
                )
            }
            _ => unreachable!(),
        }
    }
}

fn gamma_prior_log(g: f64, mu: f64, kappa: f64) -> f64 {
    beta_log_pdf(g, mu * kappa, (1.0 - mu) * kappa)
}

/// `log p(γ | D, μ, κ)` up to a constant: the current-control marginal under
/// the normalised power prior plus the Beta(μκ, (1-μ)κ) prior of each γ_k.
pub fn dmpp_log_gamma_posterior(
    data: &StudySet,
    cfg: &DmppConfig,
    gamma: &[f64],
    mu: f64,
    kappa: f64,
) -> Result<f64, MethodError> {
    if gamma.len() != data.k() || gamma.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
        return Err(MethodError::InvalidConfig("γ must have one entry in (0, 1) per source".into()));
    }
    let suff = Suff::new(data, &cfg.initial_prior)?;
    Ok(suff.cc_marginal(gamma).0 + gamma.iter().map(|&g| gamma_prior_log(g, mu, kappa)).sum::<f64>())
}

struct DmppChain {
    suff: Suff,
    cfg: DmppConfig,
    gamma: Vec<f64>,
    mu: f64,
    log_kappa: f64,
    theta: f64,
    gamma_rw: Vec<RandomWalk>,
    mu_slice: Slice,
    kappa_slice: Slice,
    refresh_accepted: u64,
    refresh_proposed: u64,
}

impl DmppChain {
    fn hyper_log(&self, mu: f64, kappa: f64) -> f64 {
        self.gamma.iter().map(|&g| gamma_prior_log(g, mu, kappa)).sum()
    }
}

impl DmppChain {
    /// Independence proposal of (μ, κ, γ) from the hyperprior, accepted with
    /// the ratio of current-control marginals. Escapes the small-κ region
    /// where the γ_k sit far out on the logit scale.
    fn refresh(&mut self, rng: &mut ChainRng) {
        let cfg = &self.cfg;
        let mu = beta_draw(rng, cfg.mu_pp_prior.a, cfg.mu_pp_prior.b).clamp(1e-12, 1.0 - 1e-12);
        let log_kappa = normal_draw(rng, NormalParams { m: cfg.kappa_log_mean, v: cfg.kappa_log_sd * cfg.kappa_log_sd });
        let kappa = log_kappa.exp();
        let gamma: Vec<f64> = (0..self.gamma.len())
            .map(|_| beta_draw(rng, mu * kappa, (1.0 - mu) * kappa).clamp(1e-300, 1.0 - 1e-16))
            .collect();
        let log_ratio = self.suff.cc_marginal(&gamma).0 - self.suff.cc_marginal(&self.gamma).0;
        self.refresh_proposed += 1;
        if log_ratio.is_finite() && rng.random::<f64>().ln() < log_ratio {
            self.refresh_accepted += 1;
            self.mu = mu;
            self.log_kappa = log_kappa;
            self.gamma = gamma;
        }
    }
}

impl ChainKernel for DmppChain {
    fn param_names(&self) -> Vec<String> {
        let mut v = vec!["theta".to_string(), "mu_pp".into(), "log_kappa".into()];
        v.extend((1..=self.gamma.len()).map(|k| format!("gamma[{k}]")));
        v
    }

    fn sweep(&mut self, rng: &mut ChainRng) {
        if self.cfg.fixed_gamma.is_none() {
            self.refresh(rng);
            let kappa = self.log_kappa.exp();
            for k in 0..self.gamma.len() {
                let mut g = self.gamma.clone();
                let (suff, mu) = (&self.suff, self.mu);
                // logit-scale target with Jacobian γ(1-γ)
                let mut f = |x: f64| {
                    let gk = logistic(x);
                    if !(gk > 0.0 && gk < 1.0) {
                        return f64::NEG_INFINITY;
                    }
                    g[k] = gk;
                    suff.cc_marginal(&g).0 + gamma_prior_log(gk, mu, kappa) + gk.ln() + (1.0 - gk).ln()
                };
                let x0 = logit(self.gamma[k]);
                let lp = f(x0);
                let (x, _) = self.gamma_rw[k].step(x0, lp, &mut f, rng);
                self.gamma[k] = logistic(x).clamp(1e-300, 1.0 - 1e-16);
            }

            let (a, b) = (self.cfg.mu_pp_prior.a, self.cfg.mu_pp_prior.b);
            let f = |x: f64| {
                let m = logistic(x);
                if !(m > 0.0 && m < 1.0) {
                    return f64::NEG_INFINITY;
                }
                self.hyper_log(m, kappa) + beta_log_pdf(m, a, b) + m.ln() + (1.0 - m).ln()
            };
            let x0 = logit(self.mu);
            let mut sl = self.mu_slice.clone();
            let (x, _) = sl.step(x0, f(x0), f, (f64::NEG_INFINITY, f64::INFINITY), rng);
            self.mu_slice = sl;
            self.mu = logistic(x);

            let (m0, s0) = (self.cfg.kappa_log_mean, self.cfg.kappa_log_sd);
            let f = |lk: f64| self.hyper_log(self.mu, lk.exp()) + normal_log_pdf(lk, m0, s0 * s0);
            let x0 = self.log_kappa;
            let mut sl = self.kappa_slice.clone();
            let (x, _) = sl.step(x0, f(x0), f, (-30.0, 30.0), rng);
            self.kappa_slice = sl;
            self.log_kappa = x;
        }

        self.theta = match self.suff.cc_marginal(&self.gamma).1 {
            PriorComponent::Beta { a, b } => beta_draw(rng, a, b),
            PriorComponent::Normal { mean, var } => normal_draw(rng, NormalParams { m: mean, v: var }),
        };
    }

    fn end_warmup(&mut self) {
        self.gamma_rw.iter_mut().for_each(RandomWalk::end_warmup);
        self.mu_slice.end_warmup();
        self.kappa_slice.end_warmup();
        self.refresh_accepted = 0;
        self.refresh_proposed = 0;
    }

    fn record(&self, out: &mut Vec<f64>) {
        out.extend([self.theta, self.mu, self.log_kappa]);
        out.extend(&self.gamma);
    }

    fn acceptance(&self) -> Vec<f64> {
        let mut v = vec![1.0; 3];
        v.extend(self.gamma_rw.iter().map(RandomWalk::acceptance_rate));
        v
    }
}

pub fn fit_dmpp(data: &StudySet, cfg: &DmppConfig, spec: &ChainSpec) -> Result<PosteriorResult, MethodError> {
    spec.validate()?;
    if !(cfg.kappa_log_sd > 0.0) || !(cfg.mu_pp_prior.a > 0.0 && cfg.mu_pp_prior.b > 0.0) || !cfg.initial_prior.is_valid() {
        return Err(MethodError::InvalidConfig("DMPP hyperpriors must be proper".into()));
    }
    if let Some(g) = cfg.fixed_gamma {
        if !(0.0..=1.0).contains(&g) {
            return Err(MethodError::InvalidConfig("fixed γ must lie in [0, 1]".into()));
        }
    }
    let suff = Suff::new(data, &cfg.initial_prior)?;
    let k = data.k();
    let out = run_chains(spec, Method::Dmpp.tag(), |chain, rng| {
        let start = match cfg.fixed_gamma {
            Some(g) => vec![g; k],
            None => (0..k).map(|_| 0.25 + 0.5 * rng.random::<f64>()).collect(),
        };
        DmppChain {
            suff: suff.clone(),
            cfg: cfg.clone(),
            mu: if chain == 0 { 0.5 } else { 0.3 + 0.4 * rng.random::<f64>() },
            log_kappa: cfg.kappa_log_mean,
            theta: 0.0,
            gamma_rw: (0..k).map(|_| RandomWalk::new(1.0)).collect(),
            mu_slice: Slice::new(1.0),
            kappa_slice: Slice::new(1.0),
            refresh_accepted: 0,
            refresh_proposed: 0,
            gamma: start,
        }
    });
    let mut r = PosteriorResult::new(Method::Dmpp, data, out.pooled("theta").expect("theta"), treatment_draws(data, spec));
    if cfg.fixed_gamma.is_none() {
        r.source_summaries = data
            .historical()
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let draws = out.pooled(&format!("gamma[{}]", i + 1)).expect("gamma");
                SourceSummary::from_draws(&h.label, SummaryKind::PowerParameter, &draws)
            })
            .collect();
        let mut names = vec!["theta".to_string(), "mu_pp".into(), "log_kappa".into()];
        names.extend((1..=k).map(|i| format!("gamma[{i}]")));
        r.diagnostics = diagnostics_for(&out, &names);
        let mu = out.pooled("mu_pp").expect("mu_pp");
        r.details.insert("mu_pp_mean".into(), crate::math::mean(&mu));
    } else {
        r.warnings.push("γ held fixed (diagnostic mode)".into());
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BuiltinDataset;
    use crate::math::ln_choose;
    use crate::methods::MethodConfigs;

    fn spec() -> ChainSpec {
        ChainSpec {
            n_chains: 4,
            n_warmup: 1000,
            n_keep: 10_000,
            ..ChainSpec::with_seed(17)
        }
    }

    #[test]
    fn fixed_gamma_reductions() {
        let d = BuiltinDataset::AsBinary.load();
        let base = MethodConfigs::defaults(&d).dmpp;
        for (g, a, b) in [(1.0, 129.0f64, 392.0f64), (0.0, 2.0, 6.0)] {
            let cfg = DmppConfig {
                fixed_gamma: Some(g),
                ..base.clone()
            };
            let r = fit_dmpp(&d, &cfg, &spec()).unwrap();
            let mean = a / (a + b);
            let sd = (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
            let mcse = sd / (r.theta_cc_draws.len() as f64).sqrt();
            assert!((r.theta_cc.mean - mean).abs() < 3.0 * mcse, "γ={g}: {} vs {mean}", r.theta_cc.mean);
        }
    }

    /// log ∫ Beta(1,1)(p) Π_k [C(n_k,y_k) p^{y_k} (1-p)^{f_k}]^{γ_k} × extra(p) dp
    /// by the midpoint rule on a fine grid, in log space.
    fn log_integral(src: &[(f64, f64, f64)], gamma: &[f64], extra: Option<(f64, f64)>) -> f64 {
        let n = 200_000;
        let terms: Vec<f64> = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                let mut l = 0.0;
                for (&(c, y, f), g) in src.iter().zip(gamma) {
                    l += g * (c + y * p.ln() + f * (1.0 - p).ln());
                }
                if let Some((y, f)) = extra {
                    l += y * p.ln() + f * (1.0 - p).ln();
                }
                l
            })
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + (terms.iter().map(|t| (t - max).exp()).sum::<f64>() / n as f64).ln()
    }

    #[test]
    fn binomial_coefficients_cancel_in_gamma_posterior() {
        let d = BuiltinDataset::AsBinary.load();
        let cfg = MethodConfigs::defaults(&d).dmpp;
        let arms = d.binary_historical().unwrap();
        let src: Vec<(f64, f64, f64)> = arms
            .iter()
            .map(|a| (ln_choose(a.n, a.y), a.y as f64, a.failures() as f64))
            .collect();
        let cc = d.current_control().arm.as_binary().copied().unwrap();
        let full = |g: &[f64]| {
            log_integral(&src, g, Some((cc.y as f64, cc.failures() as f64))) - log_integral(&src, g, None)
                + g.iter().map(|&x| gamma_prior_log(x, 0.5, 2.0)).sum::<f64>()
        };
        let gamma = [0.3, 0.5, 0.7, 0.4, 0.6, 0.2, 0.8, 0.5];
        let h = 1e-4;
        for k in [0, 3, 6] {
            let mut up = gamma;
            let mut dn = gamma;
            up[k] += h;
            dn[k] -= h;
            let ours = (dmpp_log_gamma_posterior(&d, &cfg, &up, 0.5, 2.0).unwrap()
                - dmpp_log_gamma_posterior(&d, &cfg, &dn, 0.5, 2.0).unwrap())
                / (2.0 * h);
            let brute = (full(&up) - full(&dn)) / (2.0 * h);
            assert!((ours - brute).abs() < 1e-4 * brute.abs().max(1.0), "k={k}: {ours} vs {brute}");
        }
    }

    #[test]
    fn gamma_means_in_unit_interval() {
        let d = BuiltinDataset::AsBinary.load();
        let cfg = MethodConfigs::defaults(&d).dmpp;
        let r = fit_dmpp(&d, &cfg, &spec()).unwrap();
        assert_eq!(r.source_summaries.len(), 8);
        assert!(r.source_summaries.iter().all(|s| (0.0..=1.0).contains(&s.value)));
    }

    #[test]
    fn gamma_outside_unit_interval_rejected() {
        let d = BuiltinDataset::AsBinary.load();
        let cfg = MethodConfigs::defaults(&d).dmpp;
        assert!(dmpp_log_gamma_posterior(&d, &cfg, &[1.0; 8], 0.5, 2.0).is_err());
        assert!(dmpp_log_gamma_posterior(&d, &cfg, &[0.5; 7], 0.5, 2.0).is_err());
    }

    /// Posterior means of (γ_1..γ_K, μ) by importance sampling from the
    /// hyperprior with weights m_CC(γ).
    fn prior_importance_means(d: &StudySet, cfg: &DmppConfig, n: usize) -> Vec<f64> {
        use rand::SeedableRng;
        use rand_distr::{Beta, Distribution, Normal};
        let suff = Suff::new(d, &cfg.initial_prior).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let k = d.k();
        let lk = Normal::new(cfg.kappa_log_mean, cfg.kappa_log_sd).unwrap();
        let mu_d = Beta::new(cfg.mu_pp_prior.a, cfg.mu_pp_prior.b).unwrap();
        let (mut samples, mut logw) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let mu: f64 = mu_d.sample(&mut rng);
            let kappa = lk.sample(&mut rng).exp();
            let bd = Beta::new((mu * kappa).max(1e-300), ((1.0 - mu) * kappa).max(1e-300)).unwrap();
            let mut g: Vec<f64> = (0..k).map(|_| bd.sample(&mut rng)).collect();
            logw.push(suff.cc_marginal(&g).0);
            g.push(mu);
            samples.push(g);
        }
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        (0..=k)
            .map(|j| samples.iter().zip(&w).map(|(s, w)| s[j] * w).sum::<f64>() / total)
            .collect()
    }

    #[test]
    fn hyperparameter_posterior_matches_prior_importance_sampling() {
        for ds in [BuiltinDataset::AsBinary, BuiltinDataset::AdcsContinuous] {
            let d = ds.load();
            let cfg = MethodConfigs::defaults(&d).dmpp;
            let oracle = prior_importance_means(&d, &cfg, 400_000);
            let r = fit_dmpp(&d, &cfg, &spec()).unwrap();
            let mu = r.details["mu_pp_mean"];
            let ours: Vec<f64> = r.source_summaries.iter().map(|s| s.value).chain([mu]).collect();
            for (o, m) in oracle.iter().zip(&ours) {
                assert!((o - m).abs() < 0.01, "{}: oracle {oracle:?} vs {ours:?}", ds.name());
            }
        }
    }
}
