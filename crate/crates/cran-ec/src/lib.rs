//! Delay-QoS-aware transmit power optimization for C-RAN downlinks.
//!
//! A cloud radio access network serves a user through several remote radio
//! heads (RRHs), each with its own average- and peak-power budget, over
//! independent Nakagami-m block-fading channels. This crate computes the
//! transmit-power policy that maximizes the link's *effective capacity* —
//! the largest constant arrival rate the queue can carry while the delay
//! violation probability decays at rate θ — and provides everything needed
//! to study it:
//!
//! - [`specfun`]: incomplete gamma and exponential-integral kernels;
//! - [`channel`]: scenario description, Nakagami-m sampling and density;
//! - [`allocator`]: per-fading-state optimal powers in closed form, the
//!   ergodic (θ→0) and channel-inversion (θ→∞) limits, the multiuser rule,
//!   and a brute-force oracle;
//! - [`dual_solver`]: the projected subgradient loop on the average-power
//!   prices, with online, batch Monte Carlo, and closed-form expectation
//!   estimators;
//! - [`analytics`]: exact average-power expressions for one and two RRHs;
//! - [`metrics`]: effective-capacity estimation, delay-outage evaluation,
//!   and the comparison baselines;
//! - [`cli`]: batch experiment front-end emitting CSV tables.
//!
//! The `book/` directory of the repository walks through the concepts with
//! runnable snippets; those snippets compile as doc-tests via [`guide`].

pub mod allocator;
pub mod analytics;
pub mod channel;
pub mod cli;
pub mod dual_solver;
pub mod error;
pub mod guide;
pub mod metrics;
pub mod specfun;

pub use error::{Error, Result};
