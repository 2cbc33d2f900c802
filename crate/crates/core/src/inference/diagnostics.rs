//! Convergence diagnostics: split-R̂ and autocorrelation-based Monte Carlo
//! effective sample size.
//!
//! `chain_ess` is the Monte Carlo ESS of a Markov chain. It is unrelated to
//! the information ESS of a posterior computed in [`crate::ess`].

use serde::{Deserialize, Serialize};

use super::InferenceError;

const MIN_DRAWS: usize = 100;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Split-chain potential scale reduction factor.
///
/// Requires at least two chains of at least 100 draws. Returns `NaN` when all
/// within-chain variances are zero (constant chains), where R̂ is undefined.
pub fn rhat(chains: &[&[f64]]) -> Result<f64, InferenceError> {
    if chains.len() < 2 {
        return Err(InferenceError::TooFewDraws(format!(
            "R-hat needs at least 2 chains, got {}",
            chains.len()
        )));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < MIN_DRAWS {
        return Err(InferenceError::TooFewDraws(format!(
            "R-hat needs at least {MIN_DRAWS} draws per chain, got {n}"
        )));
    }
    let half = n / 2;
    let splits: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..n]])
        .collect();
    let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
    let w = splits.iter().map(|s| var(s)).sum::<f64>() / splits.len() as f64;
    if w <= 0.0 {
        return Ok(f64::NAN);
    }
    let b = half as f64 * var(&means);
    let nf = half as f64;
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEss {
    pub ess: f64,
    /// Set when every draw is identical; `ess` is then the draw count.
    pub degenerate: bool,
}

fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for t in 0..n - lag {
        s += (x[t] - m) * (x[t + lag] - m);
    }
    s / n as f64
}

/// Multi-chain Monte Carlo effective sample size (Geyer initial monotone
/// sequence on the combined autocorrelation, as in Stan).
pub fn chain_ess(chains: &[&[f64]]) -> Result<McEss, InferenceError> {
    if chains.is_empty() {
        return Err(InferenceError::TooFewDraws("no chains".into()));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < MIN_DRAWS {
        return Err(InferenceError::TooFewDraws(format!(
            "MC-ESS needs at least {MIN_DRAWS} draws per chain, got {n}"
        )));
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let m = chains.len();
    let total = (m * n) as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = chains.iter().map(|c| var(c)).collect();
    let w = vars.iter().sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { var(&means) } else { 0.0 };
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if var_plus <= 0.0 || !var_plus.is_finite() {
        return Ok(McEss { ess: total, degenerate: true });
    }

    let rho = |lag: usize| -> f64 {
        let mean_acov = chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };

    let mut tau = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0usize;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (2.0 * tau - 1.0).max(1.0 / total.log10());
    Ok(McEss {
        ess: total / tau,
        degenerate: false,
    })
}

/// R̂ and MC-ESS for one named parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostic {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
    pub degenerate: bool,
}

pub fn diagnose(name: &str, chains: &[&[f64]]) -> Result<ParamDiagnostic, InferenceError> {
    let ess = chain_ess(chains)?;
    let r = if chains.len() >= 2 { rhat(chains)? } else { f64::NAN };
    Ok(ParamDiagnostic {
        name: name.to_string(),
        rhat: r,
        ess: ess.ess,
        degenerate: ess.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::rng::{stream_rng, Purpose};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn white_noise(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = stream_rng(seed, Purpose::Model, 99, 0);
        (0..n).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn ar1(seed: u64, n: usize, phi: f64) -> Vec<f64> {
        let mut rng = stream_rng(seed, Purpose::Model, 98, 0);
        let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn rhat_same_target_near_one() {
        let a = white_noise(1, 10_000, 0.0);
        let b = white_noise(2, 10_000, 0.0);
        assert!(rhat(&[&a, &b]).unwrap() < 1.01);
    }

    #[test]
    fn rhat_separated_chains_large() {
        let a = white_noise(1, 1000, 0.0);
        let b = white_noise(2, 1000, 10.0);
        assert!(rhat(&[&a, &b]).unwrap() > 2.0);
    }

    #[test]
    fn rhat_single_chain_rejected() {
        let a = white_noise(1, 1000, 0.0);
        assert!(matches!(rhat(&[&a]), Err(InferenceError::TooFewDraws(_))));
    }

    #[test]
    fn rhat_constant_is_nan() {
        let a = vec![1.0; 200];
        assert!(rhat(&[&a, &a]).unwrap().is_nan());
    }

    #[test]
    fn ess_white_noise_close_to_n() {
        let a = white_noise(5, 20_000, 0.0);
        let e = chain_ess(&[&a]).unwrap();
        assert!((e.ess / 20_000.0 - 1.0).abs() < 0.10, "ess = {}", e.ess);
    }

    #[test]
    fn ess_ar1_matches_formula() {
        let n = 100_000;
        let a = ar1(6, n, 0.9);
        let e = chain_ess(&[&a]).unwrap();
        let expected = n as f64 * 0.1 / 1.9;
        assert!((e.ess / expected - 1.0).abs() < 0.25, "ess = {} vs {}", e.ess, expected);
    }

    #[test]
    fn ess_constant_is_degenerate() {
        let a = vec![2.5; 500];
        let e = chain_ess(&[&a]).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.ess, 500.0);
    }

    #[test]
    fn ess_too_few() {
        let a = vec![0.0; 50];
        assert!(chain_ess(&[&a]).is_err());
    }
}
