//! Posterior effective sample size by the expected local-information-ratio
//! (ELIR) method, and the effective historical sample size
//! `EHSS = ESS_post - n_CC`.
//!
//! Posterior draws are first approximated by a finite mixture (beta for
//! probabilities, normal for continuous parameters) fitted by EM. The ELIR
//! ESS is the draw average of `i_p(θ) / i_F(θ)`, where `i_p` is the negative
//! second derivative of the log mixture density and `i_F` the unit Fisher
//! information.
//!
//! Binary curvature is taken on the logit scale `η = logit p`, where the unit
//! information is `p(1-p)`. There the ratio for a single `Beta(a, b)` equals
//! `a + b` at every point, for all `a, b > 0`. On the probability scale the
//! same identity holds only in expectation and only for `a, b > 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conjugate::{BetaParams, NormalParams};
use crate::data::Endpoint;
use crate::inference::{map_indexed, stream_rng, Execution, Purpose};
use crate::math::{digamma, ln_beta, ln_gamma, log_sum_exp, trigamma, LN_2PI};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EssError {
    #[error("EM failure: {0}")]
    EmFailure(String),
    #[error("sigma_ref is required for a continuous endpoint")]
    MissingSigmaRef,
    #[error("all {0} draws have non-positive local information")]
    AllDrawsExcluded(usize),
    #[error("too few draws: {0}")]
    TooFewDraws(String),
    #[error("invalid draws: {0}")]
    InvalidDraws(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Beta,
    Normal,
}

impl Family {
    pub fn for_endpoint(endpoint: Endpoint) -> Self {
        match endpoint {
            Endpoint::Binary => Family::Beta,
            Endpoint::Continuous => Family::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Component {
    Beta { weight: f64, a: f64, b: f64 },
    Normal { weight: f64, mean: f64, var: f64 },
}

impl Component {
    pub fn weight(&self) -> f64 {
        match *self {
            Component::Beta { weight, .. } | Component::Normal { weight, .. } => weight,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Component::Beta { a, b, .. } => a / (a + b),
            Component::Normal { mean, .. } => mean,
        }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            Component::Beta { a, b, .. } => (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b),
            Component::Normal { mean, var, .. } => -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var),
        }
    }

    /// First and second derivatives of the component log density.
    fn log_derivs(&self, x: f64) -> (f64, f64) {
        match *self {
            Component::Beta { a, b, .. } => {
                let y = 1.0 - x;
                ((a - 1.0) / x - (b - 1.0) / y, -(a - 1.0) / (x * x) - (b - 1.0) / (y * y))
            }
            Component::Normal { mean, var, .. } => (-(x - mean) / var, -1.0 / var),
        }
    }
}

/// Finite mixture fitted to posterior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureApprox {
    pub family: Family,
    pub components: Vec<Component>,
    pub fit_loglik: f64,
    pub em: EmSummary,
}

/// Convergence record of the EM restarts behind a [`MixtureApprox`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmSummary {
    pub restarts: usize,
    pub converged_restarts: usize,
    pub best_restart: usize,
    pub iterations: usize,
    /// Largest relative one-step log-likelihood decrease over all restarts
    /// and iterations (0 when every trace is nondecreasing).
    pub max_relative_decrease: f64,
    #[serde(skip)]
    pub traces: Vec<Vec<f64>>,
}

impl MixtureApprox {
    pub fn single(component: Component) -> Self {
        let family = match component {
            Component::Beta { .. } => Family::Beta,
            Component::Normal { .. } => Family::Normal,
        };
        let component = match component {
            Component::Beta { a, b, .. } => Component::Beta { weight: 1.0, a, b },
            Component::Normal { mean, var, .. } => Component::Normal { weight: 1.0, mean, var },
        };
        Self {
            family,
            components: vec![component],
            fit_loglik: f64::NAN,
            em: EmSummary {
                restarts: 0,
                converged_restarts: 0,
                best_restart: 0,
                iterations: 0,
                max_relative_decrease: 0.0,
                traces: Vec::new(),
            },
        }
    }

    pub fn from_beta(p: BetaParams) -> Self {
        Self::single(Component::Beta { weight: 1.0, a: p.a, b: p.b })
    }

    pub fn from_normal(p: NormalParams) -> Self {
        Self::single(Component::Normal { weight: 1.0, mean: p.m, var: p.v })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self.components.iter().map(|c| c.weight().ln() + c.log_pdf(x)).collect();
        log_sum_exp(&terms)
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight() * c.mean()).sum()
    }

    /// First and second derivatives of the log mixture density at `x`.
    pub fn log_density_derivs(&self, x: f64) -> (f64, f64) {
        let logs: Vec<f64> = self.components.iter().map(|c| c.weight().ln() + c.log_pdf(x)).collect();
        let total = log_sum_exp(&logs);
        let (mut d1, mut d2) = (0.0, 0.0);
        for (c, l) in self.components.iter().zip(&logs) {
            let r = (l - total).exp();
            let (g, h) = c.log_derivs(x);
            d1 += r * g;
            d2 += r * (h + g * g);
        }
        (d1, d2 - d1 * d1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub components: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            components: 3,
            restarts: 20,
            max_iter: 500,
            rel_tol: 1e-8,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

const MIN_EM_DRAWS: usize = 1000;

/// Upper bound on beta component shapes. Larger shapes describe spikes on a
/// single draw, where `ln B(a, b)` loses all precision.
const MAX_SHAPE: f64 = 1e5;

/// Fit a `k`-component mixture by EM, keeping the best of `restarts`
/// initialisations (restart 0 splits the sorted draws into quantile blocks,
/// the others start from random centres). Streams come from `seed`.
pub fn fit_mixture_em(draws: &[f64], family: Family, k: usize, restarts: usize, seed: u64) -> Result<MixtureApprox, EssError> {
    let cfg = EmConfig {
        components: k,
        restarts,
        seed,
        ..EmConfig::default()
    };
    fit_mixture_em_with(draws, family, &cfg)
}

pub fn fit_mixture_em_with(draws: &[f64], family: Family, cfg: &EmConfig) -> Result<MixtureApprox, EssError> {
    if draws.len() < MIN_EM_DRAWS {
        return Err(EssError::TooFewDraws(format!(
            "mixture EM needs at least {MIN_EM_DRAWS} draws, got {}",
            draws.len()
        )));
    }
    if cfg.components == 0 || cfg.restarts == 0 {
        return Err(EssError::EmFailure("components and restarts must be positive".into()));
    }
    if draws.iter().any(|x| !x.is_finite()) {
        return Err(EssError::InvalidDraws("non-finite draw".into()));
    }
    if family == Family::Beta && draws.iter().any(|&x| x <= 0.0 || x >= 1.0) {
        return Err(EssError::InvalidDraws("beta mixture draws must lie in (0, 1)".into()));
    }
    let (lo, hi) = draws.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let total_var = crate::math::variance(draws);
    if lo == hi || !(total_var > 0.0) {
        return Err(EssError::EmFailure("degenerate variance: all draws are identical".into()));
    }
    let data = EmData::new(draws, family, total_var);
    let runs = map_indexed(cfg.restarts, cfg.execution, |r| run_em(&data, cfg, r));

    let max_relative_decrease = runs
        .iter()
        .flat_map(|run| run.trace.windows(2).map(|w| ((w[0] - w[1]) / w[0].abs().max(1.0)).max(0.0)))
        .fold(0.0, f64::max);
    let converged_restarts = runs.iter().filter(|r| r.converged).count();
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.converged)
        .fold(None::<(usize, &EmRun)>, |acc, (i, r)| match acc {
            Some((_, b)) if b.loglik >= r.loglik => acc,
            _ => Some((i, r)),
        });
    let Some((best_restart, best_run)) = best else {
        return Err(EssError::EmFailure(format!(
            "no restart converged within {} iterations at relative tolerance {:e}",
            cfg.max_iter, cfg.rel_tol
        )));
    };
    let mut components = best_run.components.clone();
    components.sort_by(|a, b| a.mean().total_cmp(&b.mean()));
    Ok(MixtureApprox {
        family,
        components,
        fit_loglik: best_run.loglik,
        em: EmSummary {
            restarts: cfg.restarts,
            converged_restarts,
            best_restart,
            iterations: best_run.trace.len(),
            max_relative_decrease,
            traces: runs.into_iter().map(|r| r.trace).collect(),
        },
    })
}

struct EmData<'a> {
    x: &'a [f64],
    family: Family,
    /// `ln x` and `ln(1-x)` for beta fits.
    lx: Vec<f64>,
    l1x: Vec<f64>,
    var_floor: f64,
}

impl<'a> EmData<'a> {
    fn new(x: &'a [f64], family: Family, total_var: f64) -> Self {
        let (lx, l1x) = match family {
            Family::Beta => (x.iter().map(|v| v.ln()).collect(), x.iter().map(|v| (-v).ln_1p()).collect()),
            Family::Normal => (Vec::new(), Vec::new()),
        };
        Self {
            x,
            family,
            lx,
            l1x,
            var_floor: 1e-10 * total_var,
        }
    }

    /// E-step: responsibilities into `resp` (row-major, n x k) and the
    /// observed-data log-likelihood.
    fn e_step(&self, comps: &[Component], resp: &mut [f64]) -> f64 {
        let k = comps.len();
        // Per component: log-density = c0 + c1 * u + c2 * v, with (u, v) the
        // sufficient statistics of the draw.
        let coef: Vec<[f64; 3]> = comps
            .iter()
            .map(|c| match *c {
                Component::Beta { weight, a, b } => [weight.ln() - ln_beta(a, b), a - 1.0, b - 1.0],
                Component::Normal { weight, mean, var } => [weight.ln() - 0.5 * (LN_2PI + var.ln()), mean, -0.5 / var],
            })
            .collect();
        let mut ll = 0.0;
        let mut row = vec![0.0; k];
        for i in 0..self.x.len() {
            let mut max = f64::NEG_INFINITY;
            for (j, c) in coef.iter().enumerate() {
                row[j] = match self.family {
                    Family::Beta => c[0] + c[1] * self.lx[i] + c[2] * self.l1x[i],
                    Family::Normal => {
                        let d = self.x[i] - c[1];
                        c[0] + c[2] * d * d
                    }
                };
                max = max.max(row[j]);
            }
            let out = &mut resp[i * k..(i + 1) * k];
            let mut sum = 0.0;
            for j in 0..k {
                out[j] = (row[j] - max).exp();
                sum += out[j];
            }
            ll += max + sum.ln();
            let inv = 1.0 / sum;
            for r in out.iter_mut() {
                *r *= inv;
            }
        }
        ll
    }

    /// Weighted moments of component `j`: (total weight, mean, variance).
    fn weighted_moments(&self, resp: &[f64], k: usize, j: usize) -> (f64, f64, f64) {
        let (mut w, mut s) = (0.0, 0.0);
        for (i, &x) in self.x.iter().enumerate() {
            let r = resp[i * k + j];
            w += r;
            s += r * x;
        }
        let m = s / w;
        let mut v = 0.0;
        for (i, &x) in self.x.iter().enumerate() {
            v += resp[i * k + j] * (x - m) * (x - m);
        }
        (w, m, v / w)
    }

    /// Method-of-moments component from responsibilities (initialisation).
    fn moment_component(&self, resp: &[f64], k: usize, j: usize) -> Component {
        let n = self.x.len() as f64;
        let (w, m, v) = self.weighted_moments(resp, k, j);
        let weight = (w / n).max(1e-12);
        match self.family {
            Family::Normal => Component::Normal {
                weight,
                mean: m,
                var: v.max(self.var_floor),
            },
            Family::Beta => {
                let p = BetaParams::from_moments(m.clamp(1e-6, 1.0 - 1e-6), v.max(1e-12))
                    .unwrap_or(BetaParams::UNIFORM);
                let shrink = (MAX_SHAPE / p.a.max(p.b)).min(1.0);
                Component::Beta {
                    weight,
                    a: p.a * shrink,
                    b: p.b * shrink,
                }
            }
        }
    }

    /// M-step for component `j`, warm-started from `prev`.
    fn m_step(&self, resp: &[f64], k: usize, j: usize, prev: &Component) -> Component {
        let n = self.x.len() as f64;
        match (self.family, *prev) {
            (Family::Normal, _) => {
                let (w, m, v) = self.weighted_moments(resp, k, j);
                Component::Normal {
                    weight: (w / n).max(1e-300),
                    mean: m,
                    var: v.max(self.var_floor),
                }
            }
            (Family::Beta, Component::Beta { a, b, .. }) => {
                let (mut w, mut s1, mut s2) = (0.0, 0.0, 0.0);
                for i in 0..self.x.len() {
                    let r = resp[i * k + j];
                    w += r;
                    s1 += r * self.lx[i];
                    s2 += r * self.l1x[i];
                }
                let (a, b) = beta_mle_newton(a, b, s1 / w, s2 / w);
                Component::Beta {
                    weight: (w / n).max(1e-300),
                    a,
                    b,
                }
            }
            (Family::Beta, _) => unreachable!("normal component in a beta fit"),
        }
    }
}

/// Expected complete-data objective per unit weight of a beta component.
fn beta_q(a: f64, b: f64, s1: f64, s2: f64) -> f64 {
    ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * s1 + (b - 1.0) * s2
}

/// Maximise `beta_q` by damped Newton from `(a, b)`. Every accepted step
/// increases the objective, so EM stays monotone even if this stops early.
fn beta_mle_newton(mut a: f64, mut b: f64, s1: f64, s2: f64) -> (f64, f64) {
    let mut q = beta_q(a, b, s1, s2);
    for _ in 0..100 {
        let dab = digamma(a + b);
        let g1 = dab - digamma(a) + s1;
        let g2 = dab - digamma(b) + s2;
        let tab = trigamma(a + b);
        let h11 = tab - trigamma(a);
        let h22 = tab - trigamma(b);
        let h12 = tab;
        let det = h11 * h22 - h12 * h12;
        let (mut da, mut db) = if det > 0.0 && h11 < 0.0 {
            (-(h22 * g1 - h12 * g2) / det, -(h11 * g2 - h12 * g1) / det)
        } else {
            (g1 * a * a, g2 * b * b)
        };
        let mut accepted = false;
        for _ in 0..60 {
            let (na, nb) = (a + da, b + db);
            if na > 0.0 && nb > 0.0 && na <= MAX_SHAPE && nb <= MAX_SHAPE {
                let nq = beta_q(na, nb, s1, s2);
                if nq >= q {
                    accepted = nq > q || (da == 0.0 && db == 0.0);
                    if nq > q {
                        a = na;
                        b = nb;
                        q = nq;
                    }
                    break;
                }
            }
            da *= 0.5;
            db *= 0.5;
        }
        if !accepted || (g1.abs() + g2.abs()) < 1e-12 {
            break;
        }
    }
    (a, b)
}

struct EmRun {
    components: Vec<Component>,
    loglik: f64,
    trace: Vec<f64>,
    converged: bool,
}

/// Unconstrained coordinates of a component: log weight plus the mean and
/// log variance (normal) or log shape parameters (beta).
fn to_coords(c: &Component) -> [f64; 3] {
    match *c {
        Component::Beta { weight, a, b } => [weight.ln(), a.ln(), b.ln()],
        Component::Normal { weight, mean, var } => [weight.ln(), mean, var.ln()],
    }
}

fn from_coords(template: &Component, v: [f64; 3], var_floor: f64) -> Component {
    let w = v[0].clamp(-700.0, 700.0).exp();
    match template {
        Component::Beta { .. } => Component::Beta {
            weight: w,
            a: v[1].clamp(-30.0, MAX_SHAPE.ln()).exp().min(MAX_SHAPE),
            b: v[2].clamp(-30.0, MAX_SHAPE.ln()).exp().min(MAX_SHAPE),
        },
        Component::Normal { .. } => Component::Normal {
            weight: w,
            mean: v[1],
            var: v[2].clamp(-700.0, 700.0).exp().max(var_floor),
        },
    }
}

/// One EM step: M-step from the current responsibilities, then the E-step.
fn em_step(data: &EmData, comps: &[Component], resp: &mut [f64]) -> (Vec<Component>, f64) {
    let k = comps.len();
    let mut next: Vec<Component> = (0..k).map(|j| data.m_step(resp, k, j, &comps[j])).collect();
    normalise_weights(&mut next);
    let ll = data.e_step(&next, resp);
    (next, ll)
}

/// EM with squared extrapolation (SQUAREM). Each cycle takes two plain EM
/// steps, extrapolates along them and applies one more EM step to the
/// extrapolated point; the result is kept only if it beats the second plain
/// step, so the recorded log-likelihood never decreases. Every EM step counts
/// towards `max_iter`.
fn run_em(data: &EmData, cfg: &EmConfig, restart: usize) -> EmRun {
    let n = data.x.len();
    let k = cfg.components;
    let mut resp = vec![0.0; n * k];
    init_responsibilities(data, k, restart, cfg.seed, &mut resp);
    let mut comps: Vec<Component> = (0..k).map(|j| data.moment_component(&resp, k, j)).collect();
    normalise_weights(&mut comps);

    let mut trace = Vec::with_capacity(cfg.max_iter + 1);
    let mut converged = false;
    let mut ll = data.e_step(&comps, &mut resp);
    trace.push(ll);
    let mut scratch = vec![0.0; n * k];
    let mut steps = 0;
    while steps + 2 <= cfg.max_iter {
        let (c1, ll1) = em_step(data, &comps, &mut resp);
        let (c2, ll2) = em_step(data, &c1, &mut resp);
        steps += 2;
        trace.push(ll1);
        trace.push(ll2);
        let (x0, x1, x2): (Vec<_>, Vec<_>, Vec<_>) = (
            comps.iter().flat_map(to_coords).collect(),
            c1.iter().flat_map(to_coords).collect(),
            c2.iter().flat_map(to_coords).collect(),
        );
        let r: Vec<f64> = x1.iter().zip(&x0).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = x2.iter().zip(&x1).zip(&r).map(|((a, b), r)| a - b - r).collect();
        let (rn, vn) = (r.iter().map(|x| x * x).sum::<f64>().sqrt(), v.iter().map(|x| x * x).sum::<f64>().sqrt());
        let mut accepted = (c2, ll2);
        if vn > 0.0 && rn.is_finite() && vn.is_finite() && steps < cfg.max_iter {
            let alpha = (-rn / vn).min(-1.0);
            let xe: Vec<f64> = (0..x0.len()).map(|i| x0[i] - 2.0 * alpha * r[i] + alpha * alpha * v[i]).collect();
            let mut ce: Vec<Component> = (0..k)
                .map(|j| from_coords(&comps[j], [xe[3 * j], xe[3 * j + 1], xe[3 * j + 2]], data.var_floor))
                .collect();
            normalise_weights(&mut ce);
            if ce.iter().all(|c| to_coords(c).iter().all(|x| x.is_finite())) {
                let lle = data.e_step(&ce, &mut scratch);
                if lle.is_finite() {
                    let (cs, lls) = em_step(data, &ce, &mut scratch);
                    steps += 1;
                    if lls.is_finite() && lls > ll2 {
                        std::mem::swap(&mut resp, &mut scratch);
                        trace.push(lls);
                        accepted = (cs, lls);
                    }
                }
            }
        }
        let (next, new_ll) = accepted;
        comps = next;
        let rel = (new_ll - ll).abs() / ll.abs().max(1e-300);
        ll = new_ll;
        if rel < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    EmRun {
        components: comps,
        loglik: ll,
        trace,
        converged: converged && ll.is_finite(),
    }
}

fn normalise_weights(comps: &mut [Component]) {
    let total: f64 = comps.iter().map(|c| c.weight()).sum();
    for c in comps.iter_mut() {
        match c {
            Component::Beta { weight, .. } | Component::Normal { weight, .. } => *weight /= total,
        }
    }
}

/// Soft initial responsibilities. Restart 0 uses contiguous quantile blocks;
/// later restarts assign each draw to the nearest of `k` random centres
/// (logit scale for beta), softened so no component starts empty.
fn init_responsibilities(data: &EmData, k: usize, restart: usize, seed: u64, resp: &mut [f64]) {
    let n = data.x.len();
    let scale = |x: f64| match data.family {
        Family::Beta => crate::math::logit(x),
        Family::Normal => x,
    };
    let hard: Vec<usize> = if restart == 0 || k == 1 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| data.x[i].total_cmp(&data.x[j]));
        let mut h = vec![0; n];
        for (rank, &i) in order.iter().enumerate() {
            h[i] = (rank * k / n).min(k - 1);
        }
        h
    } else {
        let mut rng = stream_rng(seed, Purpose::Mixture, 0, restart as u32);
        let centres: Vec<f64> = (0..k).map(|_| scale(data.x[rng.random_range(0..n)])).collect();
        data.x
            .iter()
            .map(|&x| {
                let z = scale(x);
                (0..k)
                    .min_by(|&a, &b| (z - centres[a]).abs().total_cmp(&(z - centres[b]).abs()))
                    .unwrap_or(0)
            })
            .collect()
    };
    let soft = 0.05 / k as f64;
    for i in 0..n {
        for j in 0..k {
            resp[i * k + j] = if hard[i] == j { 1.0 - soft * (k as f64 - 1.0) } else { soft };
        }
    }
}

/// ELIR effective sample size of `approx`, averaged over `draws`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElirEss {
    pub ess: f64,
    pub n_used: usize,
    /// Draws where the local information was not positive.
    pub n_excluded: usize,
}

pub fn elir_ess(approx: &MixtureApprox, draws: &[f64], endpoint: Endpoint, sigma_ref: Option<f64>) -> Result<ElirEss, EssError> {
    let ratio: Box<dyn Fn(f64) -> f64> = match endpoint {
        Endpoint::Binary => {
            if draws.iter().any(|&p| p <= 0.0 || p >= 1.0) {
                return Err(EssError::InvalidDraws("binary draws must lie in (0, 1)".into()));
            }
            // logit scale: i_p / i_F = 2 - (1-2p) L'(p) - p(1-p) L''(p)
            Box::new(|p: f64| {
                let (d1, d2) = approx.log_density_derivs(p);
                2.0 - (1.0 - 2.0 * p) * d1 - p * (1.0 - p) * d2
            })
        }
        Endpoint::Continuous => {
            let s = sigma_ref.filter(|s| *s > 0.0 && s.is_finite()).ok_or(EssError::MissingSigmaRef)?;
            let s2 = s * s;
            Box::new(move |x: f64| -approx.log_density_derivs(x).1 * s2)
        }
    };
    let (mut sum, mut used, mut excluded) = (0.0, 0usize, 0usize);
    for &d in draws {
        let r = ratio(d);
        if r > 0.0 && r.is_finite() {
            sum += r;
            used += 1;
        } else {
            excluded += 1;
        }
    }
    if used == 0 {
        return Err(EssError::AllDrawsExcluded(draws.len()));
    }
    Ok(ElirEss {
        ess: sum / used as f64,
        n_used: used,
        n_excluded: excluded,
    })
}

/// `ESS_post - n_CC`; may be negative.
pub fn ehss(ess_post: f64, n_cc: u64) -> f64 {
    ess_post - n_cc as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssResult {
    pub ess_post: f64,
    pub ehss: f64,
    pub n_cc: u64,
    pub sigma_ref: Option<f64>,
    pub n_draws_used: usize,
    pub n_draws_excluded: usize,
    pub negative: bool,
    pub mixture: MixtureApprox,
}

/// Mixture fit, ELIR ESS and EHSS for posterior draws of the current-control
/// parameter.
pub fn posterior_ehss(
    draws: &[f64],
    endpoint: Endpoint,
    n_cc: u64,
    sigma_ref: Option<f64>,
    cfg: &EmConfig,
) -> Result<EssResult, EssError> {
    if endpoint == Endpoint::Continuous && sigma_ref.is_none_or(|s| !(s > 0.0)) {
        return Err(EssError::MissingSigmaRef);
    }
    let mixture = fit_mixture_em_with(draws, Family::for_endpoint(endpoint), cfg)?;
    let elir = elir_ess(&mixture, draws, endpoint, sigma_ref)?;
    let e = ehss(elir.ess, n_cc);
    Ok(EssResult {
        ess_post: elir.ess,
        ehss: e,
        n_cc,
        sigma_ref: if endpoint == Endpoint::Continuous { sigma_ref } else { None },
        n_draws_used: elir.n_used,
        n_draws_excluded: elir.n_excluded,
        negative: e < 0.0,
        mixture,
    })
}
