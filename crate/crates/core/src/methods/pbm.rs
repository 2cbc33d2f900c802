//! Potential bias model with a horseshoe prior on the biases.
//!
//! `θ_{H_k} = θ_CC + β_k` with `β_k ~ N(0, λ_k² τ²)` and `λ_k, τ ~ C⁺(0, 1)`.
//! Binary arms work on the logit scale with a uniform prior on the control
//! probability; continuous arms use normal likelihoods with plug-in SEs.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::conjugate::NormalParams;
use crate::data::{Endpoint, StudySet};
use crate::inference::{run_chains, ChainKernel, ChainRng, ChainSpec, RandomWalk, Slice};
use crate::math::{log_logistic_jacobian, logistic, normal_log_pdf};

use super::common::{diagnostics_for, normal_draw, treatment_draws};
use super::config::PbmConfig;
use super::{Method, MethodError, PosteriorResult, SourceSummary, SummaryKind};

fn binom_logit_loglik(theta: f64, n: f64, y: f64) -> f64 {
    let log1pexp = if theta > 0.0 { theta + (-theta).exp().ln_1p() } else { theta.exp().ln_1p() };
    y * theta - n * log1pexp
}

/// Log half-Cauchy(0, 1) density on the log scale (with the Jacobian).
fn log_half_cauchy_on_log(lx: f64) -> f64 {
    let x = lx.exp();
    -(x * x).ln_1p() + lx
}

const UNBOUNDED: (f64, f64) = (-50.0, 50.0);

struct PbmChain {
    binary: bool,
    /// (n, y) for binary, (mean, se) for continuous.
    src: Vec<(f64, f64)>,
    cc: (f64, f64),
    theta_prior: NormalParams,
    theta: f64,
    beta: Vec<f64>,
    log_lambda: Vec<f64>,
    log_tau: f64,
    theta_rw: RandomWalk,
    beta_rw: Vec<RandomWalk>,
    ridge_rw: RandomWalk,
    scale_rw: RandomWalk,
    lambda_slice: Vec<Slice>,
    tau_slice: Slice,
}

impl PbmChain {
    fn prior_var(&self, k: usize, log_tau: f64) -> f64 {
        (2.0 * (self.log_lambda[k] + log_tau)).exp()
    }

    fn update_scales(&mut self, rng: &mut ChainRng) {
        for k in 0..self.beta.len() {
            let (b, lt) = (self.beta[k], self.log_tau);
            let f = |ll: f64| normal_log_pdf(b, 0.0, (2.0 * (ll + lt)).exp()) + log_half_cauchy_on_log(ll);
            let x = self.log_lambda[k];
            self.log_lambda[k] = self.lambda_slice[k].step(x, f(x), f, UNBOUNDED, rng).0;
        }
        let (beta, ll) = (&self.beta, &self.log_lambda);
        let f = |lt: f64| {
            beta.iter()
                .zip(ll)
                .map(|(&b, &l)| normal_log_pdf(b, 0.0, (2.0 * (l + lt)).exp()))
                .sum::<f64>()
                + log_half_cauchy_on_log(lt)
        };
        let x = self.log_tau;
        self.log_tau = self.tau_slice.step(x, f(x), f, UNBOUNDED, rng).0;
    }

    fn sweep_binary(&mut self, rng: &mut ChainRng) {
        let (n0, y0) = self.cc;
        let beta = self.beta.clone();
        let src = self.src.clone();
        let f = |t: f64| {
            binom_logit_loglik(t, n0, y0)
                + log_logistic_jacobian(t)
                + beta.iter().zip(&src).map(|(b, &(n, y))| binom_logit_loglik(t + b, n, y)).sum::<f64>()
        };
        let lp = f(self.theta);
        self.theta = self.theta_rw.step(self.theta, lp, f, rng).0;

        for k in 0..self.beta.len() {
            let (n, y) = self.src[k];
            let (t, v) = (self.theta, self.prior_var(k, self.log_tau));
            let f = |b: f64| binom_logit_loglik(t + b, n, y) + normal_log_pdf(b, 0.0, v);
            let lp = f(self.beta[k]);
            self.beta[k] = self.beta_rw[k].step(self.beta[k], lp, f, rng).0;
        }

        // ridge move (θ + c, β - c) keeps every θ_{H_k} fixed
        let vars: Vec<f64> = (0..self.beta.len()).map(|k| self.prior_var(k, self.log_tau)).collect();
        let (t0, beta) = (self.theta, &self.beta);
        let g = |c: f64| {
            binom_logit_loglik(t0 + c, n0, y0)
                + log_logistic_jacobian(t0 + c)
                + beta.iter().zip(&vars).map(|(b, &v)| normal_log_pdf(b - c, 0.0, v)).sum::<f64>()
        };
        let (c, _) = self.ridge_rw.step(0.0, g(0.0), g, rng);
        if c != 0.0 {
            self.theta += c;
            self.beta.iter_mut().for_each(|b| *b -= c);
        }

        self.update_scales(rng);

        // rescale τ and every β_k together; the normal prior of β is
        // invariant, leaving likelihood, τ prior and Jacobians
        let (lt0, t, beta, src) = (self.log_tau, self.theta, &self.beta, &self.src);
        let h = |lt: f64| {
            let c = (lt - lt0).exp();
            beta.iter().zip(src).map(|(b, &(n, y))| binom_logit_loglik(t + b * c, n, y)).sum::<f64>()
                + log_half_cauchy_on_log(lt)
        };
        let (lt1, _) = self.scale_rw.step(lt0, h(lt0), h, rng);
        if lt1 != lt0 {
            let c = (lt1 - lt0).exp();
            self.beta.iter_mut().for_each(|b| *b *= c);
            self.log_tau = lt1;
        }
    }

    fn sweep_normal(&mut self, rng: &mut ChainRng) {
        self.update_scales(rng);
        // θ | scales with β integrated out, then β | θ, scales
        let (m0, se0) = self.cc;
        let mut prec = 1.0 / (se0 * se0);
        let mut w = m0 / (se0 * se0);
        if self.theta_prior.v.is_finite() {
            prec += 1.0 / self.theta_prior.v;
            w += self.theta_prior.m / self.theta_prior.v;
        }
        for k in 0..self.src.len() {
            let (m, se) = self.src[k];
            let v = se * se + self.prior_var(k, self.log_tau);
            prec += 1.0 / v;
            w += m / v;
        }
        self.theta = normal_draw(rng, NormalParams { m: w / prec, v: 1.0 / prec });
        for k in 0..self.src.len() {
            let (m, se) = self.src[k];
            let pv = self.prior_var(k, self.log_tau);
            let v = 1.0 / (1.0 / pv + 1.0 / (se * se));
            let mean = v * (m - self.theta) / (se * se);
            self.beta[k] = mean + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

impl ChainKernel for PbmChain {
    fn param_names(&self) -> Vec<String> {
        let k = self.beta.len();
        let mut v = vec!["theta".to_string(), "log_tau".into()];
        v.extend((1..=k).map(|i| format!("beta[{i}]")));
        v.extend((1..=k).map(|i| format!("log_lambda[{i}]")));
        v
    }

    fn sweep(&mut self, rng: &mut ChainRng) {
        if self.binary {
            self.sweep_binary(rng)
        } else {
            self.sweep_normal(rng)
        }
    }

    fn end_warmup(&mut self) {
        self.theta_rw.end_warmup();
        self.beta_rw.iter_mut().for_each(RandomWalk::end_warmup);
        self.ridge_rw.end_warmup();
        self.scale_rw.end_warmup();
        self.lambda_slice.iter_mut().for_each(Slice::end_warmup);
        self.tau_slice.end_warmup();
    }

    fn record(&self, out: &mut Vec<f64>) {
        let t = if self.binary { logistic(self.theta) } else { self.theta };
        out.extend([t, self.log_tau]);
        out.extend(&self.beta);
        out.extend(&self.log_lambda);
    }

    fn acceptance(&self) -> Vec<f64> {
        let mut v = vec![self.theta_rw.acceptance_rate(), 1.0];
        v.extend(self.beta_rw.iter().map(RandomWalk::acceptance_rate));
        v.extend(std::iter::repeat_n(1.0, self.beta.len()));
        v
    }
}

pub fn fit_pbm_hs(data: &StudySet, cfg: &PbmConfig, spec: &ChainSpec) -> Result<PosteriorResult, MethodError> {
    spec.validate()?;
    if !(cfg.conflict_threshold > 0.0) || !(cfg.theta_prior.v > 0.0) || !cfg.theta_prior.m.is_finite() {
        return Err(MethodError::InvalidConfig("PBM needs a positive threshold and prior variance".into()));
    }
    let binary = data.endpoint() == Endpoint::Binary;
    let (src, cc): (Vec<(f64, f64)>, (f64, f64)) = if binary {
        let c = data.current_control().arm.as_binary().copied().expect("binary");
        (
            data.binary_historical()
                .expect("binary")
                .iter()
                .map(|a| (a.n as f64, a.y as f64))
                .collect(),
            (c.n as f64, c.y as f64),
        )
    } else {
        let c = data.current_control().arm.as_continuous().copied().expect("continuous");
        (
            data.historical()
                .iter()
                .map(|h| {
                    let a = h.arm.as_continuous().expect("continuous");
                    (a.mean, a.se())
                })
                .collect(),
            (c.mean, c.se()),
        )
    };
    let k = src.len();
    let emp = |&(a, b): &(f64, f64)| if binary { ((b + 0.5) / (a - b + 0.5)).ln() } else { a };
    let t_cc = emp(&cc);

    let out = run_chains(spec, Method::PbmHs.tag(), |chain, rng| {
        let jitter = if chain == 0 { 0.0 } else { 0.3 * rng.sample::<f64, _>(StandardNormal) };
        PbmChain {
            binary,
            theta: t_cc + jitter,
            beta: src.iter().map(|s| 0.5 * (emp(s) - t_cc)).collect(),
            log_lambda: (0..k).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect(),
            log_tau: -0.5 + 0.5 * rng.sample::<f64, _>(StandardNormal),
            src: src.clone(),
            cc,
            theta_prior: cfg.theta_prior,
            theta_rw: RandomWalk::new(0.5),
            beta_rw: (0..k).map(|_| RandomWalk::new(0.5)).collect(),
            ridge_rw: RandomWalk::new(0.3),
            scale_rw: RandomWalk::new(0.5),
            lambda_slice: (0..k).map(|_| Slice::new(1.0)).collect(),
            tau_slice: Slice::new(1.0),
        }
    });

    let mut r = PosteriorResult::new(Method::PbmHs, data, out.pooled("theta").expect("theta"), treatment_draws(data, spec));
    let delta = cfg.conflict_threshold;
    r.source_summaries = data
        .historical()
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let b = out.pooled(&format!("beta[{}]", i + 1)).expect("beta");
            let n = b.len() as f64;
            let mut s = SourceSummary::from_draws(&h.label, SummaryKind::PotentialBias, &b);
            s.prob_conflict = Some(b.iter().filter(|x| x.abs() > delta).count() as f64 / n);
            s.prob_positive = Some(b.iter().filter(|&&x| x > 0.0).count() as f64 / n);
            s
        })
        .collect();
    let mut names = vec!["theta".to_string(), "log_tau".into()];
    names.extend((1..=k).map(|i| format!("beta[{i}]")));
    names.extend((1..=k).map(|i| format!("log_lambda[{i}]")));
    r.diagnostics = diagnostics_for(&out, &names);
    r.details.insert("conflict_threshold".into(), delta);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, BinaryArm, BuiltinDataset, ContinuousArm, LabeledArm};
    use crate::methods::MethodConfigs;

    fn spec(seed: u64) -> ChainSpec {
        ChainSpec {
            n_chains: 4,
            n_warmup: 2000,
            n_keep: 5000,
            ..ChainSpec::with_seed(seed)
        }
    }

    fn binary(hist: &[(u64, u64)], cc: (u64, u64)) -> StudySet {
        let arm = |(n, y): (u64, u64)| Arm::Binary(BinaryArm::new(n, y).unwrap());
        let h = hist
            .iter()
            .enumerate()
            .map(|(i, &x)| LabeledArm {
                label: format!("H{}", i + 1),
                arm: arm(x),
            })
            .collect();
        StudySet::new(
            Endpoint::Binary,
            h,
            LabeledArm { label: "CC".into(), arm: arm(cc) },
            LabeledArm { label: "CT".into(), arm: arm(cc) },
        )
        .unwrap()
    }

    #[test]
    fn identical_source_has_small_bias() {
        let d = binary(&[(100, 30)], (100, 30));
        let cfg = MethodConfigs::defaults(&d).pbm_hs;
        let r = fit_pbm_hs(&d, &cfg, &spec(1)).unwrap();
        let med = r.source_summaries[0].median.unwrap();
        assert!(med.abs() < 0.2, "{med}");
    }

    #[test]
    fn gross_conflict_detected() {
        let d = binary(&[(200, 180)], (200, 20));
        let cfg = MethodConfigs::defaults(&d).pbm_hs;
        let r = fit_pbm_hs(&d, &cfg, &spec(2)).unwrap();
        assert!(r.source_summaries[0].prob_positive.unwrap() > 0.99);
    }

    fn shifted(d: &StudySet, c: f64) -> StudySet {
        let mv = |a: &LabeledArm| {
            let x = a.arm.as_continuous().unwrap();
            LabeledArm {
                label: a.label.clone(),
                arm: Arm::Continuous(ContinuousArm { mean: x.mean + c, ..*x }),
            }
        };
        StudySet::new(
            Endpoint::Continuous,
            d.historical().iter().map(mv).collect(),
            mv(d.current_control()),
            mv(d.current_treatment()),
        )
        .unwrap()
    }

    #[test]
    fn shift_identity_continuous() {
        let d = BuiltinDataset::AdcsContinuous.load();
        let mut cfg = MethodConfigs::defaults(&d).pbm_hs;
        cfg.theta_prior.v = f64::INFINITY;
        let sp = ChainSpec {
            n_chains: 2,
            n_warmup: 200,
            n_keep: 500,
            ..ChainSpec::with_seed(3)
        };
        let a = fit_pbm_hs(&d, &cfg, &sp).unwrap();
        let b = fit_pbm_hs(&shifted(&d, 10.0), &cfg, &sp).unwrap();
        for (x, y) in a.theta_cc_draws.iter().zip(&b.theta_cc_draws) {
            assert!((y - x - 10.0).abs() < 1e-9);
        }
        for (sa, sb) in a.source_summaries.iter().zip(&b.source_summaries) {
            assert!((sa.value - sb.value).abs() < 1e-9);
        }
    }

    #[test]
    fn continuous_bias_pattern() {
        let d = BuiltinDataset::AdcsContinuous.load();
        let cfg = MethodConfigs::defaults(&d).pbm_hs;
        let r = fit_pbm_hs(&d, &cfg, &spec(4)).unwrap();
        let m: Vec<f64> = r.source_summaries.iter().map(|s| s.value).collect();
        assert!(m[0] > 0.0 && m[1] > 0.0);
        for i in [0, 1] {
            for j in [2, 4] {
                assert!(m[i] > m[j], "{m:?}");
            }
        }
    }
}
