//! Beta-binomial and known-variance normal conjugacy, in the log domain.
//!
//! Marginals here are true probabilities/densities: the binomial coefficient
//! is included. Callers that pool several arms under one parameter use
//! [`beta_kernel_log_marginal`] (no coefficient) because each arm keeps its
//! own coefficient, which is constant across models and cancels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{ln_beta, ln_choose, normal_log_pdf};

#[derive(Debug, Error, PartialEq)]
pub enum ConjugateError {
    #[error("invalid count: y = {y} exceeds n = {n}")]
    InvalidCount { n: u64, y: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub const UNIFORM: BetaParams = BetaParams { a: 1.0, b: 1.0 };

    pub fn new(a: f64, b: f64) -> Result<Self, ConjugateError> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(ConjugateError::InvalidParameter(format!(
                "beta shapes must be positive, got ({a}, {b})"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn variance(&self) -> f64 {
        let s = self.a + self.b;
        self.a * self.b / (s * s * (s + 1.0))
    }

    /// Beta with the given mean and variance; `None` when the variance is not
    /// below `mean * (1 - mean)`.
    pub fn from_moments(mean: f64, var: f64) -> Option<Self> {
        if !(mean > 0.0 && mean < 1.0 && var > 0.0) {
            return None;
        }
        let s = mean * (1.0 - mean) / var - 1.0;
        (s > 0.0).then(|| Self {
            a: mean * s,
            b: (1.0 - mean) * s,
        })
    }
}

/// Normal distribution by mean and *variance*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub m: f64,
    pub v: f64,
}

impl NormalParams {
    pub fn new(m: f64, v: f64) -> Result<Self, ConjugateError> {
        if !(v > 0.0 && v.is_finite() && m.is_finite()) {
            return Err(ConjugateError::InvalidParameter(format!(
                "normal needs finite mean and positive variance, got ({m}, {v})"
            )));
        }
        Ok(Self { m, v })
    }

    pub fn sd(&self) -> f64 {
        self.v.sqrt()
    }
}

fn check_count(n: u64, y: u64) -> Result<(), ConjugateError> {
    if y > n {
        Err(ConjugateError::InvalidCount { n, y })
    } else {
        Ok(())
    }
}

/// `log ∫ Binom(y | n, p) Beta(p | a, b) dp`.
pub fn beta_binomial_log_marginal(prior: BetaParams, n: u64, y: u64) -> Result<f64, ConjugateError> {
    check_count(n, y)?;
    Ok(ln_choose(n, y) + beta_kernel_log_marginal(prior, y as f64, (n - y) as f64))
}

/// `log B(a + s, b + f) - log B(a, b)`: the beta-binomial marginal without the
/// binomial coefficient. Accepts fractional (discounted) counts.
pub fn beta_kernel_log_marginal(prior: BetaParams, successes: f64, failures: f64) -> f64 {
    ln_beta(prior.a + successes, prior.b + failures) - ln_beta(prior.a, prior.b)
}

pub fn beta_posterior_update(prior: BetaParams, n: u64, y: u64) -> Result<BetaParams, ConjugateError> {
    check_count(n, y)?;
    Ok(BetaParams {
        a: prior.a + y as f64,
        b: prior.b + (n - y) as f64,
    })
}

/// `log N(obs_mean; m, v + se^2)`.
pub fn normal_known_var_log_marginal(prior: NormalParams, obs_mean: f64, obs_se: f64) -> f64 {
    debug_assert!(obs_se > 0.0);
    normal_log_pdf(obs_mean, prior.m, prior.v + obs_se * obs_se)
}

/// Precision-weighted update of a normal prior by one observed mean.
pub fn normal_posterior_update(prior: NormalParams, obs_mean: f64, obs_se: f64) -> NormalParams {
    debug_assert!(obs_se > 0.0);
    let obs_prec = 1.0 / (obs_se * obs_se);
    let v = 1.0 / (1.0 / prior.v + obs_prec);
    NormalParams {
        m: v * (prior.m / prior.v + obs_mean * obs_prec),
        v,
    }
}

/// Joint log marginal of several observed means that share one normal
/// parameter, with the resulting posterior. Computed by sequential
/// prediction, so it is exact.
pub fn normal_group_log_marginal(prior: NormalParams, obs: &[(f64, f64)]) -> (f64, NormalParams) {
    let mut post = prior;
    let mut lm = 0.0;
    for &(mean, se) in obs {
        lm += normal_known_var_log_marginal(post, mean, se);
        post = normal_posterior_update(post, mean, se);
    }
    (lm, post)
}
