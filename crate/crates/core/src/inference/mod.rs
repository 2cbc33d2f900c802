//! MCMC machinery: seeded streams, univariate kernels, a multi-chain runner
//! and convergence diagnostics.
//!
//! Chains run concurrently (see [`exec`]); each chain is sequential and owns
//! its generator, derived from `(seed, purpose, tag, chain index)`.

pub mod diagnostics;
pub mod exec;
pub mod kernels;
pub mod rng;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diagnostics::{chain_ess, diagnose, rhat, McEss, ParamDiagnostic};
pub use exec::{map_indexed, Execution};
pub use kernels::{RandomWalk, Slice};
pub use rng::{stream_rng, ChainRng, Purpose};

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("log target is not finite at the initial value {0}")]
    NonFiniteTarget(f64),
    #[error("degenerate initial value {0}")]
    DegenerateInit(f64),
    #[error("initial value {init} outside bounds ({lower}, {upper})")]
    InitOutOfBounds { init: f64, lower: f64, upper: f64 },
    #[error("too few draws: {0}")]
    TooFewDraws(String),
    #[error("invalid chain spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSpec {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_keep: usize,
    pub seed: u64,
    pub thin: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 5000,
            n_keep: 10_000,
            seed: 20_260_518,
            thin: 1,
            execution: Execution::default(),
        }
    }
}

impl ChainSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.n_chains < 1 {
            return Err(InferenceError::InvalidSpec("n_chains must be >= 1".into()));
        }
        if self.n_keep < 100 {
            return Err(InferenceError::InvalidSpec("n_keep must be >= 100".into()));
        }
        if self.thin < 1 {
            return Err(InferenceError::InvalidSpec("thin must be >= 1".into()));
        }
        Ok(())
    }

    pub fn total_draws(&self) -> usize {
        self.n_chains * self.n_keep
    }
}

/// Kept draws of every chain, stored as `draws[chain][parameter][iteration]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub param_names: Vec<String>,
    pub draws: Vec<Vec<Vec<f64>>>,
    /// Post-warmup acceptance rate per parameter, averaged over chains.
    pub acceptance_rates: Vec<f64>,
}

impl ChainOutput {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|p| p == name)
    }

    /// Per-chain draw slices of one parameter.
    pub fn chains_of(&self, name: &str) -> Option<Vec<&[f64]>> {
        let i = self.index_of(name)?;
        Some(self.draws.iter().map(|c| c[i].as_slice()).collect())
    }

    /// Draws of one parameter pooled over chains in chain order.
    pub fn pooled(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.index_of(name)?;
        Some(self.draws.iter().flat_map(|c| c[i].iter().copied()).collect())
    }

    pub fn diagnose(&self, name: &str) -> Option<Result<ParamDiagnostic, InferenceError>> {
        let chains = self.chains_of(name)?;
        Some(diagnose(name, &chains))
    }
}

/// One Markov chain's state and its full Gibbs sweep.
pub trait ChainKernel {
    fn param_names(&self) -> Vec<String>;
    /// One full sweep over all blocks.
    fn sweep(&mut self, rng: &mut ChainRng);
    /// Freeze every adaptive kernel.
    fn end_warmup(&mut self);
    /// Append the current value of each parameter, in `param_names` order.
    fn record(&self, out: &mut Vec<f64>);
    /// Post-warmup acceptance rate per parameter.
    fn acceptance(&self) -> Vec<f64>;
}

/// Run `spec.n_chains` chains built by `make(chain, rng)`, each on its own
/// stream `(spec.seed, Purpose::Model, tag, chain)`.
pub fn run_chains<K, F>(spec: &ChainSpec, tag: u16, make: F) -> ChainOutput
where
    K: ChainKernel,
    F: Fn(usize, &mut ChainRng) -> K + Sync + Send,
{
    struct ChainRun {
        names: Vec<String>,
        draws: Vec<Vec<f64>>,
        acceptance: Vec<f64>,
    }
    let runs = map_indexed(spec.n_chains, spec.execution, |chain| {
        let mut rng = stream_rng(spec.seed, Purpose::Model, tag, chain as u32);
        let mut kernel = make(chain, &mut rng);
        let names = kernel.param_names();
        for _ in 0..spec.n_warmup {
            kernel.sweep(&mut rng);
        }
        kernel.end_warmup();
        let mut draws = vec![Vec::with_capacity(spec.n_keep); names.len()];
        let mut buf = Vec::with_capacity(names.len());
        for _ in 0..spec.n_keep {
            for _ in 0..spec.thin {
                kernel.sweep(&mut rng);
            }
            buf.clear();
            kernel.record(&mut buf);
            debug_assert_eq!(buf.len(), names.len());
            for (d, &v) in draws.iter_mut().zip(&buf) {
                d.push(v);
            }
        }
        ChainRun {
            names,
            draws,
            acceptance: kernel.acceptance(),
        }
    });
    let param_names = runs[0].names.clone();
    let n_params = param_names.len();
    let mut acceptance_rates = vec![0.0; n_params];
    for r in &runs {
        for (a, &v) in acceptance_rates.iter_mut().zip(&r.acceptance) {
            *a += v / runs.len() as f64;
        }
    }
    ChainOutput {
        param_names,
        draws: runs.into_iter().map(|r| r.draws).collect(),
        acceptance_rates,
    }
}

fn jittered_init(init: f64, chain: usize, rng: &mut ChainRng) -> f64 {
    use rand::Rng;
    if chain == 0 {
        init
    } else {
        init + 0.1 * (1.0 + init.abs()) * (rng.random::<f64>() - 0.5)
    }
}

struct RwChain<'a, F> {
    target: &'a F,
    x: f64,
    lp: f64,
    kernel: RandomWalk,
}

impl<F: Fn(f64) -> f64> ChainKernel for RwChain<'_, F> {
    fn param_names(&self) -> Vec<String> {
        vec!["x".into()]
    }
    fn sweep(&mut self, rng: &mut ChainRng) {
        (self.x, self.lp) = self.kernel.step(self.x, self.lp, self.target, rng);
    }
    fn end_warmup(&mut self) {
        self.kernel.end_warmup();
    }
    fn record(&self, out: &mut Vec<f64>) {
        out.push(self.x);
    }
    fn acceptance(&self) -> Vec<f64> {
        vec![self.kernel.acceptance_rate()]
    }
}

/// Adaptive random-walk Metropolis on a univariate log target. The proposal
/// scale adapts toward 0.44 acceptance during warmup only.
pub fn adaptive_rw_metropolis<F>(log_target: &F, init: f64, spec: &ChainSpec) -> Result<ChainOutput, InferenceError>
where
    F: Fn(f64) -> f64 + Sync,
{
    spec.validate()?;
    if !init.is_finite() {
        return Err(InferenceError::DegenerateInit(init));
    }
    if !log_target(init).is_finite() {
        return Err(InferenceError::NonFiniteTarget(init));
    }
    Ok(run_chains(spec, 0xFFF0, |chain, rng| {
        let mut x = jittered_init(init, chain, rng);
        if !log_target(x).is_finite() {
            x = init;
        }
        RwChain {
            target: log_target,
            x,
            lp: log_target(x),
            kernel: RandomWalk::new(1.0),
        }
    }))
}

struct SliceChain<'a, F> {
    target: &'a F,
    bounds: (f64, f64),
    x: f64,
    lp: f64,
    kernel: Slice,
}

impl<F: Fn(f64) -> f64> ChainKernel for SliceChain<'_, F> {
    fn param_names(&self) -> Vec<String> {
        vec!["x".into()]
    }
    fn sweep(&mut self, rng: &mut ChainRng) {
        (self.x, self.lp) = self.kernel.step(self.x, self.lp, self.target, self.bounds, rng);
    }
    fn end_warmup(&mut self) {
        self.kernel.end_warmup();
    }
    fn record(&self, out: &mut Vec<f64>) {
        out.push(self.x);
    }
    fn acceptance(&self) -> Vec<f64> {
        vec![1.0]
    }
}

/// Univariate slice sampling on an optional open interval.
pub fn slice_sample_univariate<F>(
    log_target: &F,
    init: f64,
    bounds: Option<(f64, f64)>,
    spec: &ChainSpec,
) -> Result<ChainOutput, InferenceError>
where
    F: Fn(f64) -> f64 + Sync,
{
    spec.validate()?;
    let (lower, upper) = bounds.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    if !init.is_finite() {
        return Err(InferenceError::DegenerateInit(init));
    }
    if init <= lower || init >= upper {
        return Err(InferenceError::InitOutOfBounds { init, lower, upper });
    }
    if !log_target(init).is_finite() {
        return Err(InferenceError::NonFiniteTarget(init));
    }
    Ok(run_chains(spec, 0xFFF1, |chain, rng| {
        let mut x = jittered_init(init, chain, rng);
        if x <= lower || x >= upper || !log_target(x).is_finite() {
            x = init;
        }
        SliceChain {
            target: log_target,
            bounds: (lower, upper),
            x,
            lp: log_target(x),
            kernel: Slice::new(1.0),
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n_chains: usize, n_keep: usize) -> ChainSpec {
        ChainSpec {
            n_chains,
            n_warmup: 2000,
            n_keep,
            seed: 11,
            thin: 1,
            execution: Execution::Parallel,
        }
    }

    #[test]
    fn rw_standard_normal() {
        let target = |x: f64| -0.5 * x * x;
        let out = adaptive_rw_metropolis(&target, 0.3, &spec(4, 10_000)).unwrap();
        let d = out.pooled("x").unwrap();
        let m = crate::math::mean(&d);
        let v = crate::math::variance(&d);
        assert!(m.abs() < 0.05, "mean {m}");
        assert!((v - 1.0).abs() < 0.1, "var {v}");
        let acc = out.acceptance_rates[0];
        assert!((0.2..=0.7).contains(&acc), "acceptance {acc}");
    }

    #[test]
    fn rw_near_degenerate_target() {
        let mu = 3.7;
        let target = move |x: f64| -0.5 * (x - mu) * (x - mu) / 1e-8;
        let out = adaptive_rw_metropolis(&target, mu, &spec(2, 2000)).unwrap();
        // chains other than the first start jittered away from mu; they must
        // still collapse onto it during warmup
        for x in out.pooled("x").unwrap() {
            assert!((x - mu).abs() < 1e-3, "{x}");
        }
    }

    #[test]
    fn rw_rejects_bad_init() {
        let target = |x: f64| if x > 0.0 { -x } else { f64::NEG_INFINITY };
        assert_eq!(
            adaptive_rw_metropolis(&target, -1.0, &spec(1, 100)).unwrap_err(),
            InferenceError::NonFiniteTarget(-1.0)
        );
        assert_eq!(
            adaptive_rw_metropolis(&target, f64::NAN, &spec(1, 100)).unwrap_err().to_string(),
            InferenceError::DegenerateInit(f64::NAN).to_string()
        );
    }

    #[test]
    fn slice_exponential_mean() {
        let target = |x: f64| -x;
        let out = slice_sample_univariate(&target, 1.0, Some((0.0, f64::INFINITY)), &spec(4, 10_000)).unwrap();
        let d = out.pooled("x").unwrap();
        assert!(d.iter().all(|&x| x > 0.0));
        assert!((crate::math::mean(&d) - 1.0).abs() < 0.05);
    }

    #[test]
    fn slice_uniform_ks() {
        let target = |_x: f64| 0.0;
        let out = slice_sample_univariate(&target, 0.5, Some((0.0, 1.0)), &spec(4, 10_000)).unwrap();
        let mut d = out.pooled("x").unwrap();
        assert!(d.iter().all(|&x| x > 0.0 && x < 1.0));
        d.sort_by(f64::total_cmp);
        let n = d.len() as f64;
        let sup = d
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i as f64 + 1.0) / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(sup < 0.02, "sup distance {sup}");
    }

    #[test]
    fn slice_init_out_of_bounds() {
        let target = |_x: f64| 0.0;
        assert!(matches!(
            slice_sample_univariate(&target, 2.0, Some((0.0, 1.0)), &spec(1, 100)),
            Err(InferenceError::InitOutOfBounds { .. })
        ));
    }

    #[test]
    fn thread_count_does_not_change_draws() {
        let target = |x: f64| -0.5 * x * x - 0.1 * x.powi(4);
        let par = adaptive_rw_metropolis(&target, 0.0, &spec(4, 500)).unwrap();
        let seq_spec = ChainSpec {
            execution: Execution::Sequential,
            ..spec(4, 500)
        };
        let seq = adaptive_rw_metropolis(&target, 0.0, &seq_spec).unwrap();
        assert_eq!(par, seq);
    }
}
