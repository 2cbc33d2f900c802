//! Bayesian dynamic borrowing from multiple historical control sources.
//!
//! The crate fits eight borrowing models (MAP, robust MAP, DPM-MAP, DMPP,
//! UIP, horseshoe potential-bias model, MEM, DPM and DDPM) plus a
//! current-only reference analysis to arm-level summaries of a hybrid-control
//! trial. Overall borrowing is summarised by the effective historical sample
//! size (posterior ELIR effective sample size minus the current control size);
//! source-level borrowing or compatibility is reported per method.
//!
//! Module map:
//!
//! * [`data`]: arm-level study sets, CSV ingest and the two bundled datasets.
//! * [`conjugate`]: beta-binomial and known-variance normal conjugacy.
//! * [`inference`]: seeded generators, MCMC kernels, chain running and
//!   convergence diagnostics.
//! * [`methods`]: the borrowing methods, each returning a [`PosteriorResult`].
//! * [`ess`]: mixture approximation, ELIR effective sample size and EHSS.
//! * [`report`]: forest rows, borrowing heatmap and JSON/CSV/SVG emission.
//! * [`cli`]: end-to-end orchestration used by the `borrowbench` binary.

pub mod cli;
pub mod conjugate;
pub mod data;
pub mod ess;
pub mod inference;
pub mod math;
pub mod methods;
pub mod report;

pub use data::{Endpoint, StudySet};
pub use methods::{Method, PosteriorResult};
