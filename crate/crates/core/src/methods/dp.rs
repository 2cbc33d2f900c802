//! Dirichlet-process borrowing: DPM over the control units and the
//! dependent DPM (DDPM) with common atoms, plus the similarity and borrowing
//! index `SBI_k = Pr(c_CC = c_{H_k} | D)`.
//!
//! Units are ordered `H_1..H_K, CC`. Recorded cluster labels are
//! canonicalised to order of first appearance (1, 2, ...), so label
//! permutations never change any output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::{normal_group_log_marginal, NormalParams};
use crate::data::{Arm, StudySet};
use crate::inference::{run_chains, ChainKernel, ChainOutput, ChainRng, ChainSpec, InferenceError, Slice};
use crate::math::{ln_beta, ln_gamma, normal_log_pdf};

use super::common::{beta_draw, categorical_log, diagnostics_for, normal_draw, treatment_draws};
use super::config::{DdpmConfig, DpmConfig, PriorComponent};
use super::{Method, MethodError, PosteriorResult, SourceSummary, SummaryKind};

/// Cluster assignments of every kept iteration (chains concatenated in
/// order), for units `H_1..H_K, CC`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpState {
    pub sources: Vec<String>,
    /// `assignments[s][j]`: canonical label (from 1) of unit `j` at iteration `s`.
    pub assignments: Vec<Vec<u32>>,
    /// Concentration per kept iteration (the CC-group one for DDPM).
    pub concentration: Vec<f64>,
    pub base: PriorComponent,
    pub sbi: Vec<f64>,
}

/// SBI_k: fraction of iterations in which the current control (last unit)
/// shares a label with source k.
pub fn compute_sbi(state: &DpState) -> Result<Vec<f64>, MethodError> {
    let s = state.assignments.len();
    if s < 100 {
        return Err(InferenceError::TooFewDraws(format!("SBI needs at least 100 iterations, got {s}")).into());
    }
    let k = state.sources.len();
    let mut hits = vec![0usize; k];
    for a in &state.assignments {
        let cc = a[k];
        for (h, &c) in hits.iter_mut().zip(a) {
            if c == cc {
                *h += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / s as f64).collect())
}

/// Relabel clusters by order of first appearance, starting at 1.
pub(crate) fn canonical(labels: &[usize]) -> Vec<u32> {
    let mut seen: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(i) => i as u32 + 1,
            None => {
                seen.push(*l);
                seen.len() as u32
            }
        })
        .collect()
}

/// Unit data: (successes, failures) or (mean, se).
#[derive(Debug, Clone, Copy)]
enum Unit {
    Binary(f64, f64),
    Normal(f64, f64),
}

fn units(data: &StudySet) -> Vec<Unit> {
    data.historical()
        .iter()
        .map(|h| h.arm)
        .chain(std::iter::once(data.current_control().arm))
        .map(|a| match a {
            Arm::Binary(b) => Unit::Binary(b.y as f64, b.failures() as f64),
            Arm::Continuous(c) => Unit::Normal(c.mean, c.se()),
        })
        .collect()
}

/// Log marginal of a set of units sharing one parameter drawn from `base`
/// (binary: beta kernels), and the posterior of that parameter.
fn cluster_marginal(base: &PriorComponent, members: &[Unit]) -> (f64, PriorComponent) {
    match *base {
        PriorComponent::Beta { a, b } => {
            let (mut s, mut f) = (0.0, 0.0);
            for u in members {
                if let Unit::Binary(y, fl) = u {
                    s += y;
                    f += fl;
                }
            }
            (ln_beta(a + s, b + f) - ln_beta(a, b), PriorComponent::Beta { a: a + s, b: b + f })
        }
        PriorComponent::Normal { mean, var } => {
            let obs: Vec<(f64, f64)> = members
                .iter()
                .filter_map(|u| match u {
                    Unit::Normal(m, se) => Some((*m, *se)),
                    Unit::Binary(..) => None,
                })
                .collect();
            let prior = NormalParams { m: mean, v: var };
            if obs.is_empty() {
                return (0.0, *base);
            }
            let (lm, post) = normal_group_log_marginal(prior, &obs);
            (lm, PriorComponent::Normal { mean: post.m, var: post.v })
        }
    }
}

fn draw_param(rng: &mut ChainRng, p: &PriorComponent) -> f64 {
    match *p {
        PriorComponent::Beta { a, b } => beta_draw(rng, a, b),
        PriorComponent::Normal { mean, var } => normal_draw(rng, NormalParams { m: mean, v: var }),
    }
}

/// Log likelihood kernel of a unit at parameter value `theta`.
fn unit_loglik(u: &Unit, theta: f64) -> f64 {
    match *u {
        Unit::Binary(y, f) => y * theta.ln() + f * (1.0 - theta).ln(),
        Unit::Normal(m, se) => normal_log_pdf(m, theta, se * se),
    }
}

fn validate_base(data: &StudySet, base: &PriorComponent) -> Result<(), MethodError> {
    if base.endpoint() != data.endpoint() || !base.is_valid() {
        return Err(MethodError::InvalidConfig("DP base measure does not match the endpoint".into()));
    }
    Ok(())
}

fn unit_names(k: usize) -> Vec<String> {
    (0..=k).map(|j| format!("c[{j}]")).collect()
}

fn state_from(out: &ChainOutput, data: &StudySet, base: PriorComponent, m_name: &str) -> Result<DpState, MethodError> {
    let k = data.k();
    let cols: Vec<Vec<f64>> = unit_names(k).iter().map(|n| out.pooled(n).expect("labels")).collect();
    let s = cols[0].len();
    let assignments = (0..s).map(|i| cols.iter().map(|c| c[i] as u32).collect()).collect();
    let mut state = DpState {
        sources: data.historical_labels(),
        assignments,
        concentration: out.pooled(m_name).expect("concentration").iter().map(|x| x.exp()).collect(),
        base,
        sbi: Vec::new(),
    };
    state.sbi = compute_sbi(&state)?;
    Ok(state)
}

fn sbi_summaries(data: &StudySet, sbi: &[f64]) -> Vec<SourceSummary> {
    data.historical()
        .iter()
        .zip(sbi)
        .map(|(h, &v)| SourceSummary::scalar(&h.label, SummaryKind::Sbi, v))
        .collect()
}

/// Collapsed Gibbs over the Chinese-restaurant representation.
struct DpmChain {
    units: Vec<Unit>,
    base: PriorComponent,
    shape: f64,
    scale: f64,
    fixed: Option<f64>,
    z: Vec<usize>,
    log_m: f64,
    theta_cc: f64,
    m_slice: Slice,
}

impl DpmChain {
    fn members(&self, c: usize, skip: usize) -> Vec<Unit> {
        (0..self.units.len())
            .filter(|&j| j != skip && self.z[j] == c)
            .map(|j| self.units[j])
            .collect()
    }

    fn n_clusters(&self) -> usize {
        let mut z = self.z.clone();
        z.sort_unstable();
        z.dedup();
        z.len()
    }
}

impl ChainKernel for DpmChain {
    fn param_names(&self) -> Vec<String> {
        let mut v = vec!["theta_cc".to_string(), "log_m".into(), "clusters".into()];
        v.extend(unit_names(self.units.len() - 1));
        v
    }

    fn sweep(&mut self, rng: &mut ChainRng) {
        let n = self.units.len();
        let m = self.log_m.exp();
        for j in 0..n {
            // clusters present without unit j, in increasing label order
            let mut labels: Vec<usize> = (0..n).filter(|&i| i != j).map(|i| self.z[i]).collect();
            labels.sort_unstable();
            labels.dedup();
            let mut logw = Vec::with_capacity(labels.len() + 1);
            for &c in &labels {
                let mut mem = self.members(c, j);
                let size = mem.len() as f64;
                let without = cluster_marginal(&self.base, &mem).0;
                mem.push(self.units[j]);
                logw.push(size.ln() + cluster_marginal(&self.base, &mem).0 - without);
            }
            logw.push(m.ln() + cluster_marginal(&self.base, &[self.units[j]]).0);
            let pick = categorical_log(rng, &logw);
            self.z[j] = if pick < labels.len() {
                labels[pick]
            } else {
                (0..=n).find(|c| !labels.contains(c)).expect("free label")
            };
        }

        let k = self.n_clusters() as f64;
        match self.fixed {
            Some(v) => self.log_m = v.ln(),
            None => {
                let (a, s, nf) = (self.shape, self.scale, n as f64);
                let f = |lm: f64| {
                    let m = lm.exp();
                    a * lm - m / s + k * lm + ln_gamma(m) - ln_gamma(m + nf)
                };
                let x = self.log_m;
                self.log_m = self.m_slice.step(x, f(x), f, (-30.0, 30.0), rng).0;
            }
        }

        let cc = n - 1;
        let mut mem = self.members(self.z[cc], usize::MAX);
        mem.shrink_to_fit();
        let post = cluster_marginal(&self.base, &mem).1;
        self.theta_cc = draw_param(rng, &post);
    }

    fn end_warmup(&mut self) {
        self.m_slice.end_warmup();
    }

    fn record(&self, out: &mut Vec<f64>) {
        out.extend([self.theta_cc, self.log_m, self.n_clusters() as f64]);
        out.extend(canonical(&self.z).iter().map(|&c| c as f64));
    }

    fn acceptance(&self) -> Vec<f64> {
        vec![1.0; 3 + self.units.len()]
    }
}

fn validate_concentration(shape: f64, scale: f64, fixed: Option<f64>) -> Result<(), MethodError> {
    if !(shape > 0.0 && scale > 0.0) || fixed.is_some_and(|m| !(m > 0.0 && m.is_finite())) {
        return Err(MethodError::InvalidConfig("DP concentration prior must be proper and positive".into()));
    }
    Ok(())
}

pub fn fit_dpm_with_state(data: &StudySet, cfg: &DpmConfig, spec: &ChainSpec) -> Result<(PosteriorResult, DpState), MethodError> {
    spec.validate()?;
    validate_base(data, &cfg.base)?;
    validate_concentration(cfg.concentration_shape, cfg.concentration_scale, cfg.fixed_concentration)?;
    let u = units(data);
    let out = run_chains(spec, Method::Dpm.tag(), |chain, rng| {
        let n = u.len();
        let z = if chain % 2 == 0 { (0..n).collect() } else { vec![0; n] };
        DpmChain {
            units: u.clone(),
            base: cfg.base,
            shape: cfg.concentration_shape,
            scale: cfg.concentration_scale,
            fixed: cfg.fixed_concentration,
            z,
            log_m: cfg
                .fixed_concentration
                .map_or_else(|| (cfg.concentration_shape * cfg.concentration_scale * (0.2 + rng.random::<f64>())).ln(), f64::ln),
            theta_cc: 0.0,
            m_slice: Slice::new(1.0),
        }
    });
    let state = state_from(&out, data, cfg.base, "log_m")?;
    let mut r = PosteriorResult::new(Method::Dpm, data, out.pooled("theta_cc").expect("theta_cc"), treatment_draws(data, spec));
    r.source_summaries = sbi_summaries(data, &state.sbi);
    let mut names = vec!["theta_cc".to_string(), "clusters".into()];
    if cfg.fixed_concentration.is_none() {
        names.push("log_m".into());
    }
    r.diagnostics = diagnostics_for(&out, &names);
    r.details.insert("mean_clusters".into(), crate::math::mean(&out.pooled("clusters").expect("clusters")));
    Ok((r, state))
}

pub fn fit_dpm(data: &StudySet, cfg: &DpmConfig, spec: &ChainSpec) -> Result<PosteriorResult, MethodError> {
    fit_dpm_with_state(data, cfg, spec).map(|x| x.0)
}

/// Stick-breaking weights from counts: `V_l ~ Beta(1 + n_l, M + Σ_{m>l} n_m)`,
/// `V_L = 1`.
fn sticks(rng: &mut ChainRng, counts: &[usize], m: f64) -> Vec<f64> {
    let l = counts.len();
    let mut tail: usize = counts.iter().sum();
    let mut rest = 1.0;
    let mut w = Vec::with_capacity(l);
    for (i, &c) in counts.iter().enumerate() {
        tail -= c;
        let v = if i + 1 == l { 1.0 } else { beta_draw(rng, 1.0 + c as f64, m + tail as f64) };
        w.push(rest * v);
        rest *= 1.0 - v;
    }
    w
}

/// `log p(z | M)` of a truncated stick-breaking prior with the fractions
/// integrated out: `Σ_{l<L} [ln B(1 + n_l, M + Σ_{m>l} n_m) + ln M]`.
fn sticks_log_marginal(counts: &[usize], m: f64) -> f64 {
    let mut tail: usize = counts.iter().sum();
    let mut lp = 0.0;
    for &c in &counts[..counts.len() - 1] {
        tail -= c;
        lp += ln_beta(1.0 + c as f64, m + tail as f64) + m.ln();
    }
    lp
}

/// Blocked Gibbs for the common-atoms DDPM.
struct DdpmChain {
    units: Vec<Unit>,
    cfg: DdpmConfig,
    atoms: Vec<f64>,
    z: Vec<usize>,
    w_h: Vec<f64>,
    w_cc: Vec<f64>,
    log_m_h: f64,
    log_m_cc: f64,
    m_slice: [Slice; 2],
}

impl DdpmChain {
    /// Slice update of log M given the counts, fractions integrated out.
    fn concentration_update(&mut self, rng: &mut ChainRng, counts: &[usize], which: usize, log_m: f64) -> f64 {
        if let Some(m) = self.cfg.fixed_concentration {
            return m.ln();
        }
        let (a, s) = (self.cfg.concentration_shape, self.cfg.concentration_scale);
        let f = |lm: f64| {
            let m = lm.exp();
            a * lm - m / s + sticks_log_marginal(counts, m)
        };
        self.m_slice[which].step(log_m, f(log_m), f, (-30.0, 30.0), rng).0
    }

    fn n_clusters(&self) -> usize {
        let mut z = self.z.clone();
        z.sort_unstable();
        z.dedup();
        z.len()
    }

    /// Label-swap moves with weights held fixed: exchanging atoms `a` and
    /// `b` (with their members) leaves likelihood and atom prior unchanged,
    /// so the ratio is `Π_g (π^g_b / π^g_a)^{n_ga - n_gb}`. Adjacent pairs
    /// plus one random pair per sweep.
    fn swap_labels(&mut self, rng: &mut ChainRng) {
        let l = self.cfg.truncation;
        let n = self.units.len();
        let mut pairs: Vec<(usize, usize)> = (0..l - 1).map(|a| (a, a + 1)).collect();
        let a = rng.random_range(0..l);
        let b = rng.random_range(0..l);
        if a != b {
            pairs.push((a, b));
        }
        for (a, b) in pairs {
            let mut log_r = 0.0;
            for (j, &z) in self.z.iter().enumerate() {
                let w = if j + 1 == n { &self.w_cc } else { &self.w_h };
                if z == a {
                    log_r += w[b].max(1e-300).ln() - w[a].max(1e-300).ln();
                } else if z == b {
                    log_r += w[a].max(1e-300).ln() - w[b].max(1e-300).ln();
                }
            }
            if rng.random::<f64>().ln() < log_r {
                self.atoms.swap(a, b);
                for z in self.z.iter_mut() {
                    if *z == a {
                        *z = b;
                    } else if *z == b {
                        *z = a;
                    }
                }
            }
        }
    }
}

impl ChainKernel for DdpmChain {
    fn param_names(&self) -> Vec<String> {
        let mut v = vec!["theta_cc".to_string(), "log_m_h".into(), "log_m_cc".into(), "clusters".into()];
        v.extend(unit_names(self.units.len() - 1));
        v
    }

    fn sweep(&mut self, rng: &mut ChainRng) {
        let n = self.units.len();
        let l = self.cfg.truncation;
        for j in 0..n {
            let w = if j + 1 == n { &self.w_cc } else { &self.w_h };
            let logw: Vec<f64> = (0..l)
                .map(|a| w[a].max(1e-300).ln() + unit_loglik(&self.units[j], self.atoms[a]))
                .collect();
            self.z[j] = categorical_log(rng, &logw);
        }

        self.swap_labels(rng);

        for a in 0..l {
            let mem: Vec<Unit> = (0..n).filter(|&j| self.z[j] == a).map(|j| self.units[j]).collect();
            let post = if mem.is_empty() { self.cfg.base } else { cluster_marginal(&self.cfg.base, &mem).1 };
            self.atoms[a] = draw_param(rng, &post);
        }

        let mut c_h = vec![0usize; l];
        let mut c_cc = vec![0usize; l];
        for (j, &a) in self.z.iter().enumerate() {
            if j + 1 == n {
                c_cc[a] += 1;
            } else {
                c_h[a] += 1;
            }
        }
        if self.cfg.shared_weights {
            let all: Vec<usize> = c_h.iter().zip(&c_cc).map(|(a, b)| a + b).collect();
            self.log_m_h = self.concentration_update(rng, &all, 0, self.log_m_h);
            self.log_m_cc = self.log_m_h;
            let w = sticks(rng, &all, self.log_m_h.exp());
            self.w_cc = w.clone();
            self.w_h = w;
        } else {
            self.log_m_h = self.concentration_update(rng, &c_h, 0, self.log_m_h);
            self.w_h = sticks(rng, &c_h, self.log_m_h.exp());
            self.log_m_cc = self.concentration_update(rng, &c_cc, 1, self.log_m_cc);
            self.w_cc = sticks(rng, &c_cc, self.log_m_cc.exp());
        }
    }

    fn end_warmup(&mut self) {
        self.m_slice.iter_mut().for_each(Slice::end_warmup);
    }

    fn record(&self, out: &mut Vec<f64>) {
        let n = self.units.len();
        out.extend([
            self.atoms[self.z[n - 1]],
            self.log_m_h,
            self.log_m_cc,
            self.n_clusters() as f64,
        ]);
        out.extend(canonical(&self.z).iter().map(|&c| c as f64));
    }

    fn acceptance(&self) -> Vec<f64> {
        vec![1.0; 4 + self.units.len()]
    }
}

pub fn fit_ddpm_with_state(data: &StudySet, cfg: &DdpmConfig, spec: &ChainSpec) -> Result<(PosteriorResult, DpState), MethodError> {
    spec.validate()?;
    validate_base(data, &cfg.base)?;
    validate_concentration(cfg.concentration_shape, cfg.concentration_scale, cfg.fixed_concentration)?;
    if cfg.truncation < 2 {
        return Err(MethodError::InvalidConfig("DDPM truncation must be at least 2".into()));
    }
    let u = units(data);
    let l = cfg.truncation;
    let out = run_chains(spec, Method::Ddpm.tag(), |chain, rng| {
        let n = u.len();
        // start from each unit's own estimate on its own atom, or one atom
        let z: Vec<usize> = if chain % 2 == 0 { (0..n).map(|j| j % l).collect() } else { vec![0; n] };
        let mut atoms: Vec<f64> = (0..l).map(|_| draw_param(rng, &cfg.base)).collect();
        for (j, unit) in u.iter().enumerate() {
            atoms[z[j]] = match *unit {
                Unit::Binary(y, f) => (y + 0.5) / (y + f + 1.0),
                Unit::Normal(m, _) => m,
            };
        }
        let m0 = cfg
            .fixed_concentration
            .map_or_else(|| (cfg.concentration_shape * cfg.concentration_scale).ln(), f64::ln);
        DdpmChain {
            units: u.clone(),
            cfg: cfg.clone(),
            atoms,
            z,
            w_h: vec![1.0 / l as f64; l],
            w_cc: vec![1.0 / l as f64; l],
            log_m_h: m0,
            log_m_cc: m0,
            m_slice: [Slice::new(1.0), Slice::new(1.0)],
        }
    });
    let state = state_from(&out, data, cfg.base, "log_m_cc")?;
    let mut r = PosteriorResult::new(Method::Ddpm, data, out.pooled("theta_cc").expect("theta_cc"), treatment_draws(data, spec));
    r.source_summaries = sbi_summaries(data, &state.sbi);
    let mut names = vec!["theta_cc".to_string(), "clusters".into()];
    if cfg.fixed_concentration.is_none() {
        names.push("log_m_h".into());
        if !cfg.shared_weights {
            names.push("log_m_cc".into());
        }
    }
    r.diagnostics = diagnostics_for(&out, &names);
    r.details.insert("truncation".into(), l as f64);
    r.details.insert("mean_clusters".into(), crate::math::mean(&out.pooled("clusters").expect("clusters")));
    Ok((r, state))
}

pub fn fit_ddpm(data: &StudySet, cfg: &DdpmConfig, spec: &ChainSpec) -> Result<PosteriorResult, MethodError> {
    fit_ddpm_with_state(data, cfg, spec).map(|x| x.0)
}
