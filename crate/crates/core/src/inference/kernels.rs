//! Univariate MCMC updates used inside Metropolis-within-Gibbs sweeps.
//!
//! Both kernels adapt only while `adapting` is set; [`RandomWalk::end_warmup`]
//! and [`Slice::end_warmup`] freeze the tuning so the post-warmup kernel is a
//! fixed, reversible transition.

use rand::Rng;

/// Gaussian random-walk Metropolis with Robbins–Monro scale adaptation.
#[derive(Debug, Clone)]
pub struct RandomWalk {
    log_scale: f64,
    target: f64,
    adapting: bool,
    iter: u64,
    accepted: u64,
    proposed: u64,
}

impl RandomWalk {
    /// Target acceptance for one-dimensional updates.
    pub const UNIVARIATE_TARGET: f64 = 0.44;

    pub fn new(initial_scale: f64) -> Self {
        Self {
            log_scale: initial_scale.max(1e-12).ln(),
            target: Self::UNIVARIATE_TARGET,
            adapting: true,
            iter: 0,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn is_adapting(&self) -> bool {
        self.adapting
    }

    /// Freeze the proposal scale and reset the acceptance counters.
    pub fn end_warmup(&mut self) {
        self.adapting = false;
        self.accepted = 0;
        self.proposed = 0;
    }

    /// Post-warmup acceptance rate (warmup rate before `end_warmup`).
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// One update of `x` (current log target `lp`). Returns the new state and
    /// its log target.
    pub fn step<R: Rng + ?Sized, F: FnMut(f64) -> f64>(
        &mut self,
        x: f64,
        lp: f64,
        mut log_target: F,
        rng: &mut R,
    ) -> (f64, f64) {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        let prop = x + self.scale() * z;
        let lp_prop = log_target(prop);
        let log_u = rng.random::<f64>().ln();
        let accept = lp_prop.is_finite() && log_u < lp_prop - lp;
        self.proposed += 1;
        if accept {
            self.accepted += 1;
        }
        if self.adapting {
            self.iter += 1;
            let gain = (self.iter as f64).powf(-0.6);
            let a = if accept { 1.0 } else { 0.0 };
            self.log_scale = (self.log_scale + gain * (a - self.target)).clamp(-25.0, 10.0);
        }
        if accept {
            (prop, lp_prop)
        } else {
            (x, lp)
        }
    }
}

/// Stepping-out and shrinkage slice sampler (Neal 2003) on an interval.
#[derive(Debug, Clone)]
pub struct Slice {
    width: f64,
    max_steps: usize,
    adapting: bool,
    evaluations: u64,
}

impl Slice {
    pub fn new(width: f64) -> Self {
        Self {
            width: width.max(1e-10),
            max_steps: 50,
            adapting: true,
            evaluations: 0,
        }
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn end_warmup(&mut self) {
        self.adapting = false;
    }

    /// One slice update of `x` within `(lower, upper)`; the log target is
    /// treated as `-inf` outside the bounds.
    pub fn step<R: Rng + ?Sized, F: FnMut(f64) -> f64>(
        &mut self,
        x: f64,
        lp: f64,
        mut log_target: F,
        bounds: (f64, f64),
        rng: &mut R,
    ) -> (f64, f64) {
        let (lower, upper) = bounds;
        let mut eval = |v: f64, count: &mut u64| {
            *count += 1;
            if v <= lower || v >= upper {
                f64::NEG_INFINITY
            } else {
                log_target(v)
            }
        };
        let level = lp + rng.random::<f64>().ln();
        let w = self.width;
        let mut left = x - w * rng.random::<f64>();
        let mut right = left + w;
        let j = (self.max_steps as f64 * rng.random::<f64>()).floor() as usize;
        let mut k = self.max_steps - 1 - j;
        let mut j = j;
        let mut count = 0u64;
        while j > 0 && left > lower && eval(left, &mut count) > level {
            left -= w;
            j -= 1;
        }
        while k > 0 && right < upper && eval(right, &mut count) > level {
            right += w;
            k -= 1;
        }
        left = left.max(lower);
        right = right.min(upper);
        let (new_x, new_lp) = loop {
            let cand = left + (right - left) * rng.random::<f64>();
            let lc = eval(cand, &mut count);
            if lc > level {
                break (cand, lc);
            }
            if cand < x {
                left = cand;
            } else {
                right = cand;
            }
            if right - left < 1e-14 * (1.0 + x.abs()) {
                break (x, lp);
            }
        };
        self.evaluations += count;
        if self.adapting {
            let jump = (new_x - x).abs();
            if jump > 0.0 {
                self.width = (0.95 * self.width + 0.05 * 2.0 * jump).max(1e-10);
            }
        }
        (new_x, new_lp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::rng::{stream_rng, Purpose};

    #[test]
    fn scale_frozen_after_warmup() {
        let mut rng = stream_rng(1, Purpose::Model, 0, 0);
        let mut rw = RandomWalk::new(5.0);
        let target = |x: f64| -0.5 * x * x;
        let (mut x, mut lp) = (0.0, 0.0);
        for _ in 0..2000 {
            (x, lp) = rw.step(x, lp, target, &mut rng);
        }
        let frozen = rw.scale();
        rw.end_warmup();
        for _ in 0..2000 {
            (x, lp) = rw.step(x, lp, target, &mut rng);
            assert_eq!(rw.scale(), frozen);
        }
        assert!(!rw.is_adapting());
    }

    #[test]
    fn slice_respects_bounds() {
        let mut rng = stream_rng(2, Purpose::Model, 0, 0);
        let mut s = Slice::new(3.0);
        let (mut x, mut lp) = (0.5, 0.0);
        for _ in 0..5000 {
            (x, lp) = s.step(x, lp, |_| 0.0, (0.0, 1.0), &mut rng);
            assert!(x > 0.0 && x < 1.0);
        }
    }
}
