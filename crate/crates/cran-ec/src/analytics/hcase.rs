//! Shape classification and roots of h(x) = (1+ax)^b - cx on x ≥ 0.
//!
//! h is strictly convex with h(0) = 1, so exactly three shapes are
//! possible: nondecreasing from 1 (case 1), dipping but staying
//! nonnegative (case 2), or crossing zero twice (case 3). The two-RRH
//! average-power regions are delimited by the case-3 roots.

use crate::error::{Error, Result};

/// Coefficients of h(x) = (1+ax)^b - cx with a > 0, b > 1, c > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// The three possible shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HCase {
    /// h'(0) ≥ 0: h ≥ 1 everywhere.
    Rising = 1,
    /// h dips but its minimum stays ≥ 0.
    TangentOrAbove = 2,
    /// h crosses zero at 0 < x^l < x^u.
    TwoRoots = 3,
}

/// Classification result; roots are present exactly in case 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HCaseClassification {
    pub case: HCase,
    pub roots: Option<(f64, f64)>,
}

impl HCaseClassification {
    pub fn label(&self) -> u8 {
        self.case as u8
    }
}

/// log h(x) sign surrogate: g(x) = b ln(1+ax) - ln(cx), same sign as h for
/// x > 0 and far better conditioned when (1+ax)^b overflows.
fn log_h(co: &HCoefficients, x: f64) -> f64 {
    co.b * (co.a * x).ln_1p() - (co.c * x).ln()
}

fn log_h_deriv(co: &HCoefficients, x: f64) -> f64 {
    co.a * co.b / (1.0 + co.a * x) - 1.0 / x
}

fn bisect_root(co: &HCoefficients, mut lo: f64, mut hi: f64) -> f64 {
    // invariant: g(lo) > 0 >= g(hi) or g(lo) <= 0 < g(hi); track signs.
    // Brackets can span tens of decades at extreme prices, so the
    // iteration cap must cover log2 of that span with room to spare.
    let rising = log_h(co, hi) > 0.0;
    for _ in 0..4000 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let positive = log_h(co, mid) > 0.0;
        if positive == rising {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    // Newton polish on the log surrogate.
    let mut x = 0.5 * (lo + hi);
    for _ in 0..4 {
        let g = log_h(co, x);
        let dg = log_h_deriv(co, x);
        if dg == 0.0 {
            break;
        }
        let next = x - g / dg;
        if next.is_finite() && next > lo && next < hi {
            x = next;
        } else {
            break;
        }
    }
    x
}

/// Classify h and, in case 3, bracket and bisect both roots around the
/// interior minimizer x* = ((c/ab)^{1/(b-1)} - 1)/a.
pub fn classify_h(co: &HCoefficients) -> Result<HCaseClassification> {
    if !(co.a.is_finite() && co.a > 0.0)
        || !(co.b.is_finite() && co.b > 1.0)
        || !(co.c.is_finite() && co.c > 0.0)
    {
        return Err(Error::domain(
            "classify_h",
            format!(
                "need a > 0, b > 1, c > 0; got a={}, b={}, c={}",
                co.a, co.b, co.c
            ),
        ));
    }
    let ab = co.a * co.b;
    if ab - co.c >= 0.0 {
        return Ok(HCaseClassification {
            case: HCase::Rising,
            roots: None,
        });
    }
    // (c/ab)^{1/(b-1)} > 1 here
    let t = ((co.c / ab).ln() / (co.b - 1.0)).exp();
    if t * (1.0 - co.b) + co.b >= 0.0 {
        return Ok(HCaseClassification {
            case: HCase::TangentOrAbove,
            roots: None,
        });
    }
    let x_star = (t - 1.0) / co.a;
    debug_assert!(log_h(co, x_star) < 0.0);
    let mut lo = x_star;
    for _ in 0..4000 {
        lo *= 0.5;
        if log_h(co, lo) > 0.0 {
            break;
        }
    }
    let lower = bisect_root(co, lo, x_star);
    let mut hi = x_star;
    for _ in 0..4000 {
        hi *= 2.0;
        if log_h(co, hi) > 0.0 {
            break;
        }
    }
    let upper = bisect_root(co, x_star, hi);
    Ok(HCaseClassification {
        case: HCase::TwoRoots,
        roots: Some((lower, upper)),
    })
}
