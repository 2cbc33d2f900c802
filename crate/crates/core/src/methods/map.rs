//! Meta-analytic predictive priors: MAP, robust MAP and DPM-MAP.
//!
//! Stage 1 fits a hierarchical model to the historical arms only and draws
//! the predictive parameter of a new trial, `θ_new = μ + τ ε`. Binary arms
//! are modelled on the logit scale with binomial likelihoods; continuous arm
//! means are normal with their plug-in standard errors, and the arm
//! parameters are integrated out. Stage 2 approximates the predictive by a
//! finite mixture (beta on the probability scale, or normal), then updates
//! it with the current control in closed form.
//!
//! DPM-MAP replaces the single between-trial SD by trial-specific SDs drawn
//! from a truncated stick-breaking mixture over component SDs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::{normal_group_log_marginal, NormalParams};
use crate::data::{Arm, Endpoint, StudySet};
use crate::ess::{fit_mixture_em_with, Component, EmConfig, Family, MixtureApprox};
use crate::inference::{run_chains, ChainKernel, ChainRng, ChainSpec, ParamDiagnostic, RandomWalk, Slice};
use crate::math::{ln_beta, log_sum_exp, logistic, normal_log_pdf};

use super::common::{
    beta_draw, categorical, categorical_log, diagnostics_for, em_for, exact_draws, normal_draw, treatment_draws,
};
use super::config::{DpmMapConfig, MapConfig, PriorComponent};
use super::{Method, MethodError, PosteriorResult};

/// Stage-1 output: the mixture approximation of the predictive prior for the
/// current-control parameter (probability scale for binary).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPrior {
    pub mixture: MixtureApprox,
    pub diagnostics: Vec<ParamDiagnostic>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub predictive_draws: Vec<f64>,
}

const P_FLOOR: f64 = 1e-12;

fn to_probability(theta: f64) -> f64 {
    logistic(theta).clamp(P_FLOOR, 1.0 - P_FLOOR)
}

/// Binomial log likelihood on the logit scale, without the coefficient.
fn binom_logit_loglik(theta: f64, n: f64, y: f64) -> f64 {
    // y θ - n log(1 + e^θ)
    let log1pexp = if theta > 0.0 { theta + (-theta).exp().ln_1p() } else { theta.exp().ln_1p() };
    y * theta - n * log1pexp
}

/// Log density of a half-normal with scale `s` at `x > 0`, up to a constant.
fn half_normal_log(x: f64, s: f64) -> f64 {
    -0.5 * (x / s) * (x / s)
}

fn initial_logits(data: &StudySet) -> Vec<(f64, f64, f64)> {
    data.historical()
        .iter()
        .map(|h| {
            let b = h.arm.as_binary().expect("binary arm");
            let (n, y) = (b.n as f64, b.y as f64);
            (n, y, ((y + 0.5) / (n - y + 0.5)).ln())
        })
        .collect()
}

fn continuous_obs(data: &StudySet) -> Vec<(f64, f64)> {
    data.historical()
        .iter()
        .map(|h| {
            let c = h.arm.as_continuous().expect("continuous arm");
            (c.mean, c.se())
        })
        .collect()
}

fn param_names(k: usize, with_theta: bool) -> Vec<String> {
    let mut v = vec!["mu".to_string(), "tau".to_string(), "theta_new".to_string()];
    if with_theta {
        v.extend((1..=k).map(|i| format!("theta[{i}]")));
    }
    v
}

/// Binary MAP stage 1: logit-normal hierarchy with μ ~ N(m0, v0) and
/// τ ~ HN(s). Per sweep: θ_k by random walk, μ by Gibbs, log τ by random
/// walk, a joint rescaling of τ and the deviations θ_k - μ, and a joint
/// shift of μ and all θ_k.
struct MapBinaryChain {
    obs: Vec<(f64, f64)>,
    mu_prior: NormalParams,
    tau_scale: f64,
    theta: Vec<f64>,
    mu: f64,
    tau: f64,
    theta_new: f64,
    theta_rw: Vec<RandomWalk>,
    tau_rw: RandomWalk,
    scale_rw: RandomWalk,
    shift_rw: RandomWalk,
}

impl MapBinaryChain {
    fn new(data: &StudySet, cfg: &MapConfig, rng: &mut ChainRng, chain: usize) -> Self {
        let init = initial_logits(data);
        let jitter = if chain == 0 { 0.0 } else { 0.5 * (rng.random::<f64>() - 0.5) };
        let theta: Vec<f64> = init.iter().map(|t| t.2 + jitter).collect();
        let mu = theta.iter().sum::<f64>() / theta.len() as f64;
        Self {
            obs: init.iter().map(|t| (t.0, t.1)).collect(),
            mu_prior: cfg.mu_prior,
            tau_scale: cfg.tau_prior_scale,
            theta,
            mu,
            tau: (0.3 + 0.4 * rng.random::<f64>()) * cfg.tau_prior_scale,
            theta_new: mu,
            theta_rw: init.iter().map(|_| RandomWalk::new(0.3)).collect(),
            tau_rw: RandomWalk::new(0.5),
            scale_rw: RandomWalk::new(0.5),
            shift_rw: RandomWalk::new(0.1),
        }
    }
}

impl ChainKernel for MapBinaryChain {
    fn param_names(&self) -> Vec<String> {
        param_names(self.theta.len(), true)
    }

    fn sweep(&mut self, rng: &mut ChainRng) {
        let (mu, tau) = (self.mu, self.tau);
        for k in 0..self.theta.len() {
            let (n, y) = self.obs[k];
            let f = |t: f64| binom_logit_loglik(t, n, y) + normal_log_pdf(t, mu, tau * tau);
            let lp = f(self.theta[k]);
            self.theta[k] = self.theta_rw[k].step(self.theta[k], lp, f, rng).0;
        }

        let kf = self.theta.len() as f64;
        let prec = 1.0 / self.mu_prior.v + kf / (tau * tau);
        let m = (self.mu_prior.m / self.mu_prior.v + self.theta.iter().sum::<f64>() / (tau * tau)) / prec;
        self.mu = normal_draw(rng, NormalParams { m, v: 1.0 / prec });

        let ss: f64 = self.theta.iter().map(|t| (t - self.mu) * (t - self.mu)).sum();
        let s = self.tau_scale;
        let f = |lt: f64| {
            let t = lt.exp();
            -kf * lt - ss / (2.0 * t * t) + half_normal_log(t, s) + lt
        };
        let lt = self.tau.ln();
        self.tau = self.tau_rw.step(lt, f(lt), f, rng).0.exp();

        // rescale τ and the deviations together; the normal density of the
        // deviations is invariant, leaving likelihood, prior and Jacobians
        let lt0 = self.tau.ln();
        let (mu, obs, theta) = (self.mu, &self.obs, &self.theta);
        let g = |lt: f64| {
            let c = (lt - lt0).exp();
            let ll: f64 = theta
                .iter()
                .zip(obs)
                .map(|(t, &(n, y))| binom_logit_loglik(mu + (t - mu) * c, n, y))
                .sum();
            ll + half_normal_log(lt.exp(), s) + lt
        };
        let (lt1, _) = self.scale_rw.step(lt0, g(lt0), g, rng);
        if lt1 != lt0 {
            let c = (lt1 - lt0).exp();
            for t in self.theta.iter_mut() {
                *t = mu + (*t - mu) * c;
            }
            self.tau = lt1.exp();
        }

        // shift μ and every θ_k by the same amount
        let (mu0, prior) = (self.mu, self.mu_prior);
        let h = |d: f64| {
            let ll: f64 = theta_sum_loglik(&self.theta, &self.obs, d);
            ll + normal_log_pdf(mu0 + d, prior.m, prior.v)
        };
        let (d, _) = self.shift_rw.step(0.0, h(0.0), h, rng);
        if d != 0.0 {
            self.mu += d;
            for t in self.theta.iter_mut() {
                *t += d;
            }
        }

        self.theta_new = self.mu + self.tau * rng.sample::<f64, _>(rand_distr::StandardNormal);
    }

    fn end_warmup(&mut self) {
        self.theta_rw.iter_mut().for_each(RandomWalk::end_warmup);
        self.tau_rw.end_warmup();
        self.scale_rw.end_warmup();
        self.shift_rw.end_warmup();
    }

    fn record(&self, out: &mut Vec<f64>) {
        out.extend([self.mu, self.tau, self.theta_new]);
        out.extend(&self.theta);
    }

    fn acceptance(&self) -> Vec<f64> {
        let mut v = vec![1.0, self.tau_rw.acceptance_rate(), 1.0];
        v.extend(self.theta_rw.iter().map(RandomWalk::acceptance_rate));
        v
    }
}

fn theta_sum_loglik(theta: &[f64], obs: &[(f64, f64)], shift: f64) -> f64 {
    theta
        .iter()
        .zip(obs)
        .map(|(t, &(n, y))| binom_logit_loglik(t + shift, n, y))
        .sum()
}

/// Continuous MAP stage 1 with arm parameters and μ integrated out:
/// `ȳ_k ~ N(μ, τ² + se_k²)`. log τ by slice sampling, then μ | τ exactly.
struct MapNormalChain {
    obs: Vec<(f64, f64)>,
    mu_prior: NormalParams,
    tau_scale: f64,
    mu: f64,
    tau: f64,
    theta_new: f64,
    slice: Slice,
}

impl MapNormalChain {
    fn log_target(&self, lt: f64) -> f64 {
        let t = lt.exp();
        let obs: Vec<(f64, f64)> = self.obs.iter().map(|&(m, se)| (m, (t * t + se * se).sqrt())).collect();
        normal_group_log_marginal(self.mu_prior, &obs).0 + half_normal_log(t, self.tau_scale) + lt
    }
}

impl ChainKernel for MapNormalChain {
    fn param_names(&self) -> Vec<String> {
        param_names(0, false)
    }

    fn sweep(&mut self, rng: &mut ChainRng) {
        let lt = self.tau.ln();
        let lp = self.log_target(lt);
        let mut slice = self.slice.clone();
        let (lt, _) = slice.step(lt, lp, |x| self.log_target(x), (f64::NEG_INFINITY, f64::INFINITY), rng);
        self.slice = slice;
        self.tau = lt.exp();
        let t2 = self.tau * self.tau;
        let obs: Vec<(f64, f64)> = self.obs.iter().map(|&(m, se)| (m, (t2 + se * se).sqrt())).collect();
        let post = normal_group_log_marginal(self.mu_prior, &obs).1;
        self.mu = normal_draw(rng, post);
        self.theta_new = self.mu + self.tau * rng.sample::<f64, _>(rand_distr::StandardNormal);
    }

    fn end_warmup(&mut self) {
        self.slice.end_warmup();
    }

    fn record(&self, out: &mut Vec<f64>) {
        out.extend([self.mu, self.tau, self.theta_new]);
    }

    fn acceptance(&self) -> Vec<f64> {
        vec![1.0; 3]
    }
}

/// DPM-MAP stage 1. Trial-specific SDs take one of `L` component values
/// τ*_l with stick-breaking weights. Blocked Gibbs: θ_k (binary only, by
/// random walk), allocations z_k, stick fractions, component SDs (slice on
/// log τ*_l for occupied components, prior draws for empty ones), μ.
struct DpmMapChain {
    binary: bool,
    /// (n, y) for binary, (mean, se) for continuous.
    obs: Vec<(f64, f64)>,
    cfg: DpmMapConfig,
    theta: Vec<f64>,
    mu: f64,
    z: Vec<usize>,
    tau_star: Vec<f64>,
    weights: Vec<f64>,
    theta_new: f64,
    tau_new: f64,
    theta_rw: Vec<RandomWalk>,
    tau_slice: Vec<Slice>,
    scale_rw: Vec<RandomWalk>,
    shift_rw: RandomWalk,
    /// Largest |Σ π_l - 1| seen.
    stick_error: f64,
}

impl DpmMapChain {
    fn new(data: &StudySet, cfg: &DpmMapConfig, rng: &mut ChainRng, chain: usize) -> Self {
        let binary = data.endpoint() == Endpoint::Binary;
        let (obs, theta): (Vec<(f64, f64)>, Vec<f64>) = if binary {
            initial_logits(data).into_iter().map(|(n, y, t)| ((n, y), t)).unzip()
        } else {
            let o = continuous_obs(data);
            let t = o.iter().map(|x| x.0).collect();
            (o, t)
        };
        let jitter = if chain == 0 { 0.0 } else { 0.5 * (rng.random::<f64>() - 0.5) * cfg.tau_component_scale };
        let mu = theta.iter().sum::<f64>() / theta.len() as f64 + jitter;
        let l = cfg.truncation;
        let tau_star: Vec<f64> = (0..l)
            .map(|_| (0.2 + 0.6 * rng.random::<f64>()) * cfg.tau_component_scale)
            .collect();
        Self {
            binary,
            z: vec![0; obs.len()],
            theta_rw: obs.iter().map(|_| RandomWalk::new(0.3)).collect(),
            tau_slice: (0..l).map(|_| Slice::new(1.0)).collect(),
            scale_rw: (0..l).map(|_| RandomWalk::new(0.5)).collect(),
            shift_rw: RandomWalk::new(0.1),
            obs,
            theta,
            mu,
            weights: vec![1.0 / l as f64; l],
            tau_new: tau_star[0],
            tau_star,
            theta_new: mu,
            cfg: cfg.clone(),
            stick_error: 0.0,
        }
    }

    /// Variance of the k-th observation about μ under SD `tau`.
    fn obs_var(&self, k: usize, tau: f64) -> f64 {
        if self.binary {
            tau * tau
        } else {
            tau * tau + self.obs[k].1 * self.obs[k].1
        }
    }

    /// The value compared with N(μ, obs_var): θ_k (binary) or ȳ_k.
    fn centre(&self, k: usize) -> f64 {
        if self.binary {
            self.theta[k]
        } else {
            self.obs[k].0
        }
    }
}

impl ChainKernel for DpmMapChain {
    fn param_names(&self) -> Vec<String> {
        vec!["mu".into(), "tau_new".into(), "theta_new".into()]
    }

    fn sweep(&mut self, rng: &mut ChainRng) {
        let l = self.cfg.truncation;
        let kk = self.obs.len();
        if self.binary {
            for k in 0..kk {
                let (n, y) = self.obs[k];
                let (mu, tau) = (self.mu, self.tau_star[self.z[k]]);
                let f = |t: f64| binom_logit_loglik(t, n, y) + normal_log_pdf(t, mu, tau * tau);
                let lp = f(self.theta[k]);
                self.theta[k] = self.theta_rw[k].step(self.theta[k], lp, f, rng).0;
            }
        }

        for k in 0..kk {
            let x = self.centre(k);
            let lw: Vec<f64> = (0..l)
                .map(|j| self.weights[j].ln() + normal_log_pdf(x, self.mu, self.obs_var(k, self.tau_star[j])))
                .collect();
            self.z[k] = categorical_log(rng, &lw);
        }

        let mut counts = vec![0usize; l];
        for &z in &self.z {
            counts[z] += 1;
        }
        let mut remaining = 1.0;
        let mut tail = kk;
        for j in 0..l {
            tail -= counts[j];
            let v = if j + 1 == l {
                1.0
            } else {
                beta_draw(
                    rng,
                    self.cfg.stick_prior.a + counts[j] as f64,
                    self.cfg.stick_prior.b + tail as f64,
                )
            };
            self.weights[j] = remaining * v;
            remaining *= 1.0 - v;
        }
        self.stick_error = self.stick_error.max((self.weights.iter().sum::<f64>() - 1.0).abs());
        for w in self.weights.iter_mut() {
            *w = w.max(1e-300);
        }

        let s = self.cfg.tau_component_scale;
        for j in 0..l {
            if counts[j] == 0 {
                self.tau_star[j] = (s * rng.sample::<f64, _>(rand_distr::StandardNormal)).abs().max(1e-12);
                continue;
            }
            let members: Vec<usize> = (0..kk).filter(|&k| self.z[k] == j).collect();
            let this = &*self;
            let f = |lt: f64| {
                let t = lt.exp();
                members
                    .iter()
                    .map(|&k| normal_log_pdf(this.centre(k), this.mu, this.obs_var(k, t)))
                    .sum::<f64>()
                    + half_normal_log(t, s)
                    + lt
            };
            let lt = self.tau_star[j].ln();
            let lp = f(lt);
            let mut slice = self.tau_slice[j].clone();
            let (lt, _) = slice.step(lt, lp, f, (f64::NEG_INFINITY, f64::INFINITY), rng);
            self.tau_slice[j] = slice;
            self.tau_star[j] = lt.exp();

            if self.binary {
                // rescale τ*_j with the deviations of its members
                let lt0 = lt;
                let (mu, obs, theta) = (self.mu, &self.obs, &self.theta);
                let g = |x: f64| {
                    let c = (x - lt0).exp();
                    members
                        .iter()
                        .map(|&k| binom_logit_loglik(mu + (theta[k] - mu) * c, obs[k].0, obs[k].1))
                        .sum::<f64>()
                        + half_normal_log(x.exp(), s)
                        + x
                };
                let (lt1, _) = self.scale_rw[j].step(lt0, g(lt0), g, rng);
                if lt1 != lt0 {
                    let c = (lt1 - lt0).exp();
                    for &k in &members {
                        self.theta[k] = mu + (self.theta[k] - mu) * c;
                    }
                    self.tau_star[j] = lt1.exp();
                }
            }
        }

        let mut prec = 1.0 / self.cfg.mu_prior.v;
        let mut wsum = self.cfg.mu_prior.m / self.cfg.mu_prior.v;
        for k in 0..kk {
            let v = self.obs_var(k, self.tau_star[self.z[k]]);
            prec += 1.0 / v;
            wsum += self.centre(k) / v;
        }
        self.mu = normal_draw(rng, NormalParams { m: wsum / prec, v: 1.0 / prec });

        if self.binary {
            let (mu0, prior) = (self.mu, self.cfg.mu_prior);
            let (theta, obs) = (&self.theta, &self.obs);
            // shift μ and every θ_k together; deviations are unchanged
            let h = |d: f64| theta_sum_loglik(theta, obs, d) + normal_log_pdf(mu0 + d, prior.m, prior.v);
            let (d, _) = self.shift_rw.step(0.0, h(0.0), h, rng);
            if d != 0.0 {
                self.mu += d;
                for t in self.theta.iter_mut() {
                    *t += d;
                }
            }
        }

        let j = categorical(rng, &self.weights);
        self.tau_new = self.tau_star[j];
        self.theta_new = self.mu + self.tau_new * rng.sample::<f64, _>(rand_distr::StandardNormal);
    }

    fn end_warmup(&mut self) {
        self.theta_rw.iter_mut().for_each(RandomWalk::end_warmup);
        self.tau_slice.iter_mut().for_each(Slice::end_warmup);
        self.scale_rw.iter_mut().for_each(RandomWalk::end_warmup);
        self.shift_rw.end_warmup();
    }

    fn record(&self, out: &mut Vec<f64>) {
        out.extend([self.mu, self.tau_new, self.theta_new]);
    }

    fn acceptance(&self) -> Vec<f64> {
        vec![1.0; 3]
    }
}

fn finish_prior(
    data: &StudySet,
    out: crate::inference::ChainOutput,
    diag_names: &[&str],
    em: &EmConfig,
    spec: &ChainSpec,
    components: usize,
) -> Result<MapPrior, MethodError> {
    let theta_new = out.pooled("theta_new").expect("theta_new recorded");
    let (draws, family) = match data.endpoint() {
        Endpoint::Binary => (theta_new.iter().map(|&t| to_probability(t)).collect(), Family::Beta),
        Endpoint::Continuous => (theta_new, Family::Normal),
    };
    let em = EmConfig {
        components,
        ..em_for(em, spec)
    };
    let mixture = fit_mixture_em_with(&draws, family, &em)?;
    let names: Vec<String> = diag_names.iter().map(|s| s.to_string()).collect();
    let mut warnings = Vec::new();
    if data.k() < 2 {
        warnings.push("only one historical source: between-trial heterogeneity is not identified".into());
    }
    Ok(MapPrior {
        mixture,
        diagnostics: diagnostics_for(&out, &names),
        warnings,
        predictive_draws: draws,
    })
}

/// Stage 1 of MAP: the mixture-approximated predictive prior.
pub fn map_prior(data: &StudySet, cfg: &MapConfig, em: &EmConfig, spec: &ChainSpec) -> Result<MapPrior, MethodError> {
    validate_map(cfg)?;
    let tag = Method::Map.tag();
    let out = match data.endpoint() {
        Endpoint::Binary => run_chains(spec, tag, |chain, rng| MapBinaryChain::new(data, cfg, rng, chain)),
        Endpoint::Continuous => run_chains(spec, tag, |chain, rng| {
            let obs = continuous_obs(data);
            let mu = obs.iter().map(|o| o.0).sum::<f64>() / obs.len() as f64;
            MapNormalChain {
                obs,
                mu_prior: cfg.mu_prior,
                tau_scale: cfg.tau_prior_scale,
                mu,
                tau: (0.2 + 0.6 * rng.random::<f64>() + 0.1 * chain as f64) * cfg.tau_prior_scale,
                theta_new: mu,
                slice: Slice::new(1.0),
            }
        }),
    };
    finish_prior(data, out, &["mu", "tau"], em, spec, cfg.mixture_components)
}

/// Stage 1 of DPM-MAP.
pub fn map_prior_dpm(data: &StudySet, cfg: &DpmMapConfig, em: &EmConfig, spec: &ChainSpec) -> Result<MapPrior, MethodError> {
    if cfg.truncation < 1 || !(cfg.tau_component_scale > 0.0) || !(cfg.stick_prior.a > 0.0 && cfg.stick_prior.b > 0.0) {
        return Err(MethodError::InvalidConfig(
            "DPM-MAP needs truncation >= 1, positive component scale and stick prior".into(),
        ));
    }
    let out = run_chains(spec, Method::DpmMap.tag(), |chain, rng| DpmMapChain::new(data, cfg, rng, chain));
    finish_prior(data, out, &["mu", "theta_new"], em, spec, cfg.mixture_components)
}

fn validate_map(cfg: &MapConfig) -> Result<(), MethodError> {
    if !(cfg.tau_prior_scale > 0.0) || cfg.mixture_components < 1 || !(0.0..=1.0).contains(&cfg.robust_weight) {
        return Err(MethodError::InvalidConfig(
            "MAP needs tau_prior_scale > 0, mixture_components >= 1 and robust_weight in [0, 1]".into(),
        ));
    }
    Ok(())
}

/// Closed-form update of a mixture prior with the current control: each
/// component is updated conjugately and reweighted by its marginal
/// likelihood.
pub(crate) fn update_mixture(prior: &[Component], arm: &Arm) -> Vec<Component> {
    let mut logw = Vec::with_capacity(prior.len());
    let mut post = Vec::with_capacity(prior.len());
    for c in prior {
        match (*c, arm) {
            (Component::Beta { weight, a, b }, Arm::Binary(x)) => {
                let (y, f) = (x.y as f64, x.failures() as f64);
                logw.push(weight.ln() + ln_beta(a + y, b + f) - ln_beta(a, b));
                post.push((a + y, b + f));
            }
            (Component::Normal { weight, mean, var }, Arm::Continuous(x)) => {
                let se2 = x.se() * x.se();
                logw.push(weight.ln() + normal_log_pdf(x.mean, mean, var + se2));
                let v = 1.0 / (1.0 / var + 1.0 / se2);
                post.push((v * (mean / var + x.mean / se2), v));
            }
            _ => panic!("mixture family does not match the arm endpoint"),
        }
    }
    let lse = log_sum_exp(&logw);
    prior
        .iter()
        .zip(post)
        .zip(logw)
        .map(|((c, (p1, p2)), lw)| {
            let weight = (lw - lse).exp();
            match c {
                Component::Beta { .. } => Component::Beta { weight, a: p1, b: p2 },
                Component::Normal { .. } => Component::Normal { weight, mean: p1, var: p2 },
            }
        })
        .collect()
}

pub(crate) fn sample_mixture(rng: &mut ChainRng, comps: &[Component], weights: &[f64]) -> f64 {
    match comps[categorical(rng, weights)] {
        Component::Beta { a, b, .. } => beta_draw(rng, a, b),
        Component::Normal { mean, var, .. } => normal_draw(rng, NormalParams { m: mean, v: var }),
    }
}

fn robust_component(pc: &PriorComponent, weight: f64) -> Component {
    match *pc {
        PriorComponent::Beta { a, b } => Component::Beta { weight, a, b },
        PriorComponent::Normal { mean, var } => Component::Normal { weight, mean, var },
    }
}

fn scale_weight(c: &Component, s: f64) -> Component {
    match *c {
        Component::Beta { weight, a, b } => Component::Beta { weight: weight * s, a, b },
        Component::Normal { weight, mean, var } => Component::Normal { weight: weight * s, mean, var },
    }
}

fn finish(
    method: Method,
    data: &StudySet,
    prior: MapPrior,
    prior_components: Vec<Component>,
    spec: &ChainSpec,
    stream_tag: u16,
) -> PosteriorResult {
    let post = update_mixture(&prior_components, &data.current_control().arm);
    let weights: Vec<f64> = post.iter().map(Component::weight).collect();
    let cc = exact_draws(spec, stream_tag, |rng| sample_mixture(rng, &post, &weights));
    let mut r = PosteriorResult::new(method, data, cc, treatment_draws(data, spec));
    r.diagnostics = prior.diagnostics;
    r.warnings = prior.warnings;
    r.details.insert("prior_mean".into(), mixture_mean(&prior_components));
    r.details.insert("prior_mixture_components".into(), prior_components.len() as f64);
    r.details
        .insert("em_converged_restarts".into(), prior.mixture.em.converged_restarts as f64);
    r.details
        .insert("em_max_relative_decrease".into(), prior.mixture.em.max_relative_decrease);
    r
}

fn mixture_mean(c: &[Component]) -> f64 {
    let w: f64 = c.iter().map(Component::weight).sum();
    c.iter().map(|x| x.weight() * x.mean()).sum::<f64>() / w
}

pub fn fit_map(data: &StudySet, cfg: &MapConfig, em: &EmConfig, spec: &ChainSpec) -> Result<PosteriorResult, MethodError> {
    spec.validate()?;
    let prior = map_prior(data, cfg, em, spec)?;
    let comps = prior.mixture.components.clone();
    Ok(finish(Method::Map, data, prior, comps, spec, Method::Map.tag()))
}

/// MAP prior robustified as `(1 - w_R) MAP + w_R π_R`. Both stages use the
/// MAP streams, so `w_R = 0` reproduces the MAP draws exactly.
pub fn fit_robust_map(data: &StudySet, cfg: &MapConfig, em: &EmConfig, spec: &ChainSpec) -> Result<PosteriorResult, MethodError> {
    spec.validate()?;
    validate_map(cfg)?;
    if cfg.robust_component.endpoint() != data.endpoint() || !cfg.robust_component.is_valid() {
        return Err(MethodError::InvalidConfig("robust component does not match the endpoint".into()));
    }
    let w = cfg.robust_weight;
    let prior = map_prior(data, cfg, em, spec)?;
    let mut comps: Vec<Component> = if w < 1.0 {
        prior.mixture.components.iter().map(|c| scale_weight(c, 1.0 - w)).collect()
    } else {
        Vec::new()
    };
    if w > 0.0 {
        comps.push(robust_component(&cfg.robust_component, w));
    }
    let mut r = finish(Method::RobustMap, data, prior, comps, spec, Method::Map.tag());
    r.details.insert("robust_weight".into(), w);
    Ok(r)
}

pub fn fit_dpm_map(data: &StudySet, cfg: &DpmMapConfig, em: &EmConfig, spec: &ChainSpec) -> Result<PosteriorResult, MethodError> {
    spec.validate()?;
    let prior = map_prior_dpm(data, cfg, em, spec)?;
    let comps = prior.mixture.components.clone();
    let mut r = finish(Method::DpmMap, data, prior, comps, spec, Method::DpmMap.tag());
    r.details.insert("truncation".into(), cfg.truncation as f64);
    Ok(r)
}
