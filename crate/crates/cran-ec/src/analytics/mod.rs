//! Closed-form and semi-analytic average transmit powers.
//!
//! For one or two RRHs the expected power spent by the per-state optimal
//! policy can be written in terms of incomplete gamma functions and the
//! exponential integral, letting the dual prices be computed offline
//! instead of by Monte Carlo averaging. The two-RRH expressions partition
//! the fading plane into regions gated by how the convex function
//! h(x) = (1+ax)^b - cx crosses zero.

mod hcase;
mod quadrature;
mod single;
mod two;

pub use hcase::{classify_h, HCase, HCaseClassification, HCoefficients};
pub use quadrature::{gamma_tail_cutoff, integrate};
pub use single::{avg_power_single, single_rrh_dual};
pub use two::{
    avg_power_two, avg_power_two_detailed, condition_flags, j_terms, AvgPowerPair, Branch,
    BranchEval, ConditionFlags, TwoRrhReport,
};
