//! Exact average transmit powers for two RRHs.
//!
//! Fix the prices λ and condition on the ordering event
//! λ_lead/α_lead ≤ λ_follow/α_follow. Within that event the fading plane
//! splits into up to seven regions: the lead transmitting alone at peak
//! (C1) or below peak (C2/C3), and both transmitting with the follower at
//! peak (C4) or in the interior (C5/C6/C7). Each region is delimited by
//! the roots of an h(x) = (1+ax)^b - cx instance, and each contribution
//! reduces to a one-dimensional gamma-weighted integral — closed form for
//! integer fading shape where available, adaptive quadrature otherwise.
//! The mirrored ordering is evaluated by swapping the RRH roles, and the
//! two events add up to the unconditional expectation.

use crate::allocator::DualVariables;
use crate::channel::{pdf, Scenario};
use crate::error::{Error, Result};
use crate::specfun::{exp_integral_ei, ln_gamma, reg_lower_gamma, upper_inc_gamma};

use super::hcase::{classify_h, HCase, HCaseClassification, HCoefficients};
use super::quadrature::{gamma_tail_cutoff, integrate};

/// Absolute tolerance for the region integrals.
const QUAD_TOL: f64 = 1e-8;

/// Which RRH is assumed to lead the price-ratio ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Event λ₁/α₁ ≤ λ₂/α₂.
    Rrh1Leads,
    /// Event λ₂/α₂ < λ₁/α₁.
    Rrh2Leads,
}

/// Region gates for one ordering branch.
///
/// C1 and C3 share a predicate (the lead's peak-clamp h-function crossing
/// zero) but gate different regions: C1 the peak strip between the roots,
/// C3 the below-peak remainder. Likewise C6 and C7 share a predicate and
/// split the follower's axis into the outer and inner root intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionFlags {
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    pub c4: bool,
    pub c5: bool,
    pub c6: bool,
    pub c7: bool,
    /// Roots of the lead's peak-clamp h (coefficients a = P_lead^peak,
    /// b = 1+ε, c = ε/λ_lead), present iff C1/C3.
    pub lead_peak_roots: Option<(f64, f64)>,
    /// Roots of the follower's peak-clamp h (a = P_fol^peak +
    /// (λ_lead/λ_fol) P_lead^peak), present iff C4 (and C6/C7).
    pub follow_peak_roots: Option<(f64, f64)>,
    /// Roots of the follower's activity h (a = (λ_lead/λ_fol)
    /// P_lead^peak), present iff the C_X gate holds.
    pub follow_active_roots: Option<(f64, f64)>,
}

/// One branch's contributions; index i holds the C(i+1) term in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchEval {
    pub flags: ConditionFlags,
    /// Average power of the ordering's leading RRH, per condition.
    pub t_lead: [f64; 7],
    /// Average power of the ordering's following RRH, per condition.
    pub t_follow: [f64; 7],
}

impl BranchEval {
    pub fn lead_total(&self) -> f64 {
        self.t_lead.iter().sum()
    }

    pub fn follow_total(&self) -> f64 {
        self.t_follow.iter().sum()
    }
}

/// Expected per-RRH powers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvgPowerPair {
    pub rrh1: f64,
    pub rrh2: f64,
}

/// Full evaluation audit: both ordering branches with flags, roots and
/// per-region terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoRrhReport {
    pub pair: AvgPowerPair,
    pub forward: BranchEval,
    pub reverse: BranchEval,
}

/// Scenario parameters with the ordering already applied: index 1 = lead.
struct Ordered {
    l1: f64,
    l2: f64,
    ab1: f64,
    ab2: f64,
    pk1: f64,
    pk2: f64,
    eps: f64,
    m: f64,
}

impl Ordered {
    fn from(scenario: &Scenario, lambda: &[f64], branch: Branch) -> Ordered {
        let (a, b) = match branch {
            Branch::Rrh1Leads => (0, 1),
            Branch::Rrh2Leads => (1, 0),
        };
        Ordered {
            l1: lambda[a],
            l2: lambda[b],
            ab1: scenario.rrhs[a].mean_cpnr,
            ab2: scenario.rrhs[b].mean_cpnr,
            pk1: scenario.rrhs[a].p_peak,
            pk2: scenario.rrhs[b].p_peak,
            eps: scenario.epsilon(),
            m: scenario.m,
        }
    }

    fn v(&self) -> f64 {
        1.0 / (1.0 + self.eps)
    }

    /// Lead silence threshold U = λ_lead/ε.
    fn u(&self) -> f64 {
        self.l1 / self.eps
    }

    /// Follower CDF slope W = m λ_fol / (ᾱ_fol λ_lead).
    fn w(&self) -> f64 {
        self.m * self.l2 / (self.ab2 * self.l1)
    }

    /// Upper bound of the both-active strip in the lead CPNR.
    fn b_bound(&self, a2: f64) -> f64 {
        ((self.eps * a2 / self.l2).powf(self.v()) - 1.0) / self.pk1
    }

    /// Upper bound of the follower-at-peak strip in the lead CPNR.
    fn a_bound(&self, a2: f64) -> f64 {
        ((self.eps * a2 / self.l2).powf(self.v()) - self.pk2 * a2 - 1.0) / self.pk1
    }

    /// Follower interior water level prefactor C(α₂).
    fn c_level(&self, a2: f64) -> f64 {
        ((self.eps * a2 / self.l2).powf(self.v()) - 1.0) / a2
    }

    /// Upper truncation of lead-CPNR integrals: beyond this the density
    /// carries less than 1e-14 of its mass. Root intervals can reach
    /// astronomically far at small prices; the integrand cannot.
    fn cutoff_lead(&self) -> f64 {
        gamma_tail_cutoff(self.m, self.ab1, 1e-14)
    }

    /// Same for follower-CPNR integrals.
    fn cutoff_follow(&self) -> f64 {
        gamma_tail_cutoff(self.m, self.ab2, 1e-14)
    }
}

fn classified(
    o: &Ordered,
) -> Result<(
    HCaseClassification,
    HCaseClassification,
    HCaseClassification,
)> {
    let b = 1.0 + o.eps;
    let lead_peak = classify_h(&HCoefficients {
        a: o.pk1,
        b,
        c: o.eps / o.l1,
    })?;
    let follow_peak = classify_h(&HCoefficients {
        a: o.pk2 + o.l1 / o.l2 * o.pk1,
        b,
        c: o.eps / o.l2,
    })?;
    let follow_active = classify_h(&HCoefficients {
        a: o.l1 / o.l2 * o.pk1,
        b,
        c: o.eps / o.l2,
    })?;
    Ok((lead_peak, follow_peak, follow_active))
}

fn flags_from(
    o: &Ordered,
    lead_peak: &HCaseClassification,
    follow_peak: &HCaseClassification,
    follow_active: &HCaseClassification,
) -> ConditionFlags {
    let c13 = lead_peak.case == HCase::TwoRoots;
    let cx = follow_active.case == HCase::TwoRoots;
    let fp3 = follow_peak.case == HCase::TwoRoots;
    let flags = ConditionFlags {
        c1: c13,
        c2: !c13,
        c3: c13,
        c4: fp3,
        c5: cx && !fp3,
        c6: cx && fp3,
        c7: cx && fp3,
        lead_peak_roots: lead_peak.roots,
        follow_peak_roots: follow_peak.roots,
        follow_active_roots: follow_active.roots,
    };
    if let (true, Some((lo, _))) = (flags.c1, flags.lead_peak_roots) {
        // The silence threshold always sits below the lower peak root.
        debug_assert!(o.u() <= lo * (1.0 + 1e-9), "U = {} vs root {}", o.u(), lo);
    }
    if let (true, Some((pl, pu)), Some((al, au))) =
        (flags.c6, flags.follow_peak_roots, flags.follow_active_roots)
    {
        // Peak roots interleave strictly inside the activity roots.
        debug_assert!(al < pl && pl < pu && pu < au);
    }
    flags
}

/// Region gates for the given price vector and ordering branch.
pub fn condition_flags(
    lambda: &DualVariables,
    scenario: &Scenario,
    branch: Branch,
) -> Result<ConditionFlags> {
    check_two(lambda, scenario)?;
    let o = Ordered::from(scenario, &lambda.lambda, branch);
    let (lp, fp, fa) = classified(&o)?;
    Ok(flags_from(&o, &lp, &fp, &fa))
}

fn check_two(lambda: &DualVariables, scenario: &Scenario) -> Result<()> {
    scenario.validate()?;
    if scenario.n_rrhs() != 2 || lambda.len() != 2 {
        return Err(Error::domain(
            "avg_power_two",
            format!("needs exactly two RRHs, got {}", scenario.n_rrhs()),
        ));
    }
    if !(scenario.epsilon() > 0.0) {
        return Err(Error::domain("avg_power_two", "requires theta > 0"));
    }
    if lambda.lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::domain(
            "avg_power_two",
            "prices must be positive (a zero price pins its RRH at peak)",
        ));
    }
    Ok(())
}

/// Regularized lower gamma evaluated at exp(log_x), saturating at 1 when
/// the argument overflows.
fn reg_lower_log(s: f64, log_x: f64) -> Result<f64> {
    if log_x > 690.0 {
        Ok(1.0)
    } else {
        reg_lower_gamma(s, log_x.exp())
    }
}

/// Closed-form J terms with a general lower integration limit `x`;
/// Y - W recovers m/ᾱ_lead. Integer shape m ≥ 2.
#[allow(clippy::too_many_arguments)]
fn j_terms_at(
    x: f64,
    u: f64,
    v: f64,
    w: f64,
    z: f64,
    y: f64,
    m: u32,
) -> Result<(f64, f64, f64, f64)> {
    let mf = f64::from(m);
    let rate1 = y - w; // m / ᾱ_lead
    let j1 =
        z * rate1.powf(-(v + mf - 1.0)) * upper_inc_gamma(v + mf - 1.0, rate1 * x)? / u.powf(v);
    let j4 = z * rate1.powf(-(mf - 1.0)) * upper_inc_gamma(mf - 1.0, rate1 * x)?;
    let mut j2 = 0.0;
    let mut j3 = 0.0;
    let mut w_pow_over_fact = 1.0; // W^l / l!
    for l in 0..m {
        let lf = f64::from(l);
        j2 += w_pow_over_fact * y.powf(-(lf + mf - 1.0)) * upper_inc_gamma(lf + mf - 1.0, y * x)?;
        j3 += w_pow_over_fact
            * y.powf(-(lf + v + mf - 1.0))
            * upper_inc_gamma(lf + v + mf - 1.0, y * x)?;
        w_pow_over_fact *= w / (lf + 1.0);
    }
    Ok((j1, z * j2, z / u.powf(v) * j3, j4))
}

/// Closed-form J terms of the below-peak lone-lead contribution for
/// integer fading shape m ≥ 2, with the symbols U = λ_lead/ε,
/// V = 1/(1+ε), W = m λ_fol/(ᾱ_fol λ_lead), Z = (m/ᾱ_lead)^m/(m-1)!,
/// Y = W + m/ᾱ_lead. The term itself is J1 + J2 - J3 - J4.
pub fn j_terms(u: f64, v: f64, w: f64, z: f64, y: f64, m: u32) -> Result<(f64, f64, f64, f64)> {
    if m < 2 {
        return Err(Error::domain("j_terms", format!("m = {m} must be >= 2")));
    }
    for (name, val) in [("U", u), ("V", v), ("W", w), ("Z", z), ("Y", y)] {
        if !(val.is_finite() && val > 0.0) {
            return Err(Error::domain(
                "j_terms",
                format!("{name} = {val} must be > 0"),
            ));
        }
    }
    if y <= w {
        return Err(Error::domain("j_terms", "Y must exceed W"));
    }
    j_terms_at(u, u, v, w, z, y, m)
}

/// Rayleigh (m = 1) closed form of the same tail integral.
fn simple_case_at(x: f64, o: &Ordered) -> Result<f64> {
    let (u, v, w) = (o.u(), o.v(), o.w());
    let y = w + 1.0 / o.ab1;
    Ok(
        o.ab1.powf(v - 1.0) * upper_inc_gamma(v, x / o.ab1)? / u.powf(v)
            + exp_integral_ei(-x / o.ab1)? / o.ab1
            - upper_inc_gamma(v, y * x)? / (o.ab1 * y.powf(v) * u.powf(v))
            - exp_integral_ei(-y * x)? / o.ab1,
    )
}

/// F(x): expected lead power from the below-peak lone-lead strip with the
/// lead CPNR integrated from `x` upward.
fn below_peak_tail(x: f64, o: &Ordered) -> Result<f64> {
    let m_int = if o.m.fract() == 0.0 && o.m >= 1.0 && o.m <= 64.0 {
        Some(o.m as u32)
    } else {
        None
    };
    match m_int {
        Some(1) => simple_case_at(x, o),
        Some(m) => {
            let (u, v, w) = (o.u(), o.v(), o.w());
            let z = ((o.m / o.ab1).ln() * o.m - ln_gamma(o.m)?).exp();
            let y = w + o.m / o.ab1;
            let (j1, j2, j3, j4) = j_terms_at(x, u, v, w, z, y, m)?;
            Ok(j1 + j2 - j3 - j4)
        }
        None => {
            let (u, v, w) = (o.u(), o.v(), o.w());
            let cutoff = gamma_tail_cutoff(o.m, o.ab1, 1e-14).max(2.0 * x);
            integrate(
                |a1| {
                    let policy = ((a1 / u).powf(v) - 1.0) / a1;
                    let fol = reg_lower_gamma(o.m, w * a1).unwrap_or(1.0);
                    policy * fol * pdf(a1, o.m, o.ab1).unwrap_or(0.0)
                },
                x,
                cutoff,
                QUAD_TOL,
            )
        }
    }
}

/// C1: lead pinned at peak, follower silent; integrate the follower CDF at
/// its silence bound over the lead's peak strip.
fn lead_peak_strip(o: &Ordered, roots: (f64, f64)) -> Result<f64> {
    let (lo, hi) = (roots.0, roots.1.min(o.cutoff_lead()));
    if hi <= lo {
        return Ok(0.0);
    }
    let s = o.m;
    let scale = (s * o.l2 / (o.ab2 * o.eps)).ln();
    let val = integrate(
        |a1| {
            let log_arg = scale + (1.0 + o.eps) * (o.pk1 * a1).ln_1p();
            let cdf = reg_lower_log(s, log_arg).unwrap_or(1.0);
            cdf * pdf(a1, s, o.ab1).unwrap_or(0.0)
        },
        lo,
        hi,
        QUAD_TOL,
    )?;
    Ok(o.pk1 * val)
}

/// Probability mass of the strip low(α₂) ≤ α₁ < hi(α₂) against the lead
/// density, integrated over `interval` of the follower.
fn strip_mass(
    o: &Ordered,
    interval: (f64, f64),
    low: impl Fn(f64) -> f64,
    hi: impl Fn(f64) -> f64,
) -> Result<f64> {
    let interval = (interval.0, interval.1.min(o.cutoff_follow()));
    if interval.1 <= interval.0 {
        return Ok(0.0);
    }
    integrate(
        |a2| {
            let lo_v = low(a2);
            let hi_v = hi(a2);
            if !(hi_v > lo_v) || hi_v <= 0.0 {
                return 0.0;
            }
            let p_hi = reg_lower_gamma(o.m, o.m * hi_v / o.ab1).unwrap_or(1.0);
            let p_lo = if lo_v <= 0.0 {
                0.0
            } else {
                reg_lower_gamma(o.m, o.m * lo_v / o.ab1).unwrap_or(1.0)
            };
            (p_hi - p_lo).max(0.0) * pdf(a2, o.m, o.ab2).unwrap_or(0.0)
        },
        interval.0,
        interval.1,
        QUAD_TOL,
    )
}

/// Follower interior power over one α₂ interval: C(α₂) times the strip
/// mass minus the lead-gain correction ᾱ₁ P₁ E[(1/α₂)(P_{m+1} diff)].
fn follower_interior(o: &Ordered, interval: (f64, f64), low: impl Fn(f64) -> f64) -> Result<f64> {
    let interval = (interval.0, interval.1.min(o.cutoff_follow()));
    if interval.1 <= interval.0 {
        return Ok(0.0);
    }
    let j1 = integrate(
        |a2| {
            let lo_v = low(a2);
            let hi_v = o.b_bound(a2);
            if !(hi_v > lo_v) || hi_v <= 0.0 {
                return 0.0;
            }
            let p_hi = reg_lower_gamma(o.m, o.m * hi_v / o.ab1).unwrap_or(1.0);
            let p_lo = if lo_v <= 0.0 {
                0.0
            } else {
                reg_lower_gamma(o.m, o.m * lo_v / o.ab1).unwrap_or(1.0)
            };
            o.c_level(a2) * (p_hi - p_lo).max(0.0) * pdf(a2, o.m, o.ab2).unwrap_or(0.0)
        },
        interval.0,
        interval.1,
        QUAD_TOL,
    )?;
    let j2 = integrate(
        |a2| {
            let lo_v = low(a2);
            let hi_v = o.b_bound(a2);
            if !(hi_v > lo_v) || hi_v <= 0.0 {
                return 0.0;
            }
            let p_hi = reg_lower_gamma(o.m + 1.0, o.m * hi_v / o.ab1).unwrap_or(1.0);
            let p_lo = if lo_v <= 0.0 {
                0.0
            } else {
                reg_lower_gamma(o.m + 1.0, o.m * lo_v / o.ab1).unwrap_or(1.0)
            };
            (p_hi - p_lo).max(0.0) / a2 * pdf(a2, o.m, o.ab2).unwrap_or(0.0)
        },
        interval.0,
        interval.1,
        QUAD_TOL,
    )?;
    Ok(j1 - o.ab1 * o.pk1 * j2)
}

fn branch_eval(o: &Ordered) -> Result<BranchEval> {
    let (lead_peak, follow_peak, follow_active) = classified(o)?;
    let flags = flags_from(o, &lead_peak, &follow_peak, &follow_active);
    let mut t_lead = [0.0f64; 7];
    let mut t_follow = [0.0f64; 7];

    if flags.c1 {
        let roots = flags.lead_peak_roots.expect("case 3 carries roots");
        t_lead[0] = lead_peak_strip(o, roots)?;
        // C3: below-peak lone lead over [U, root_lo] ∪ [root_hi, ∞)
        t_lead[2] = below_peak_tail(o.u(), o)? - below_peak_tail(roots.0, o)?
            + below_peak_tail(roots.1, o)?;
    } else {
        t_lead[1] = below_peak_tail(o.u(), o)?;
    }

    if flags.c4 {
        let roots = flags.follow_peak_roots.expect("case 3 carries roots");
        let mass = strip_mass(o, roots, |a2| o.l1 / o.l2 * a2, |a2| o.a_bound(a2))?;
        t_lead[3] = o.pk1 * mass;
        t_follow[3] = o.pk2 * mass;
    }

    if flags.c5 {
        let span = flags.follow_active_roots.expect("C_X carries roots");
        let low = |a2: f64| o.l1 / o.l2 * a2;
        t_lead[4] = o.pk1 * strip_mass(o, span, low, |a2| o.b_bound(a2))?;
        t_follow[4] = follower_interior(o, span, low)?;
    }

    if flags.c6 {
        let outer = flags.follow_active_roots.expect("C_X carries roots");
        let inner = flags.follow_peak_roots.expect("case 3 carries roots");
        let low = |a2: f64| o.l1 / o.l2 * a2;
        let mut lead = 0.0;
        let mut follow = 0.0;
        for seg in [(outer.0, inner.0), (inner.1, outer.1)] {
            lead += o.pk1 * strip_mass(o, seg, low, |a2| o.b_bound(a2))?;
            follow += follower_interior(o, seg, low)?;
        }
        t_lead[5] = lead;
        t_follow[5] = follow;

        // C7: between the peak roots the follower-at-peak strip eats the
        // bottom of the range; the interior part starts at A.
        let low_a = |a2: f64| o.a_bound(a2);
        t_lead[6] = o.pk1 * strip_mass(o, inner, low_a, |a2| o.b_bound(a2))?;
        t_follow[6] = follower_interior(o, inner, low_a)?;
    }

    Ok(BranchEval {
        flags,
        t_lead,
        t_follow,
    })
}

/// Expected per-RRH powers of the optimal policy, assembled from both
/// ordering branches. Exact up to the region quadratures (absolute
/// tolerance 1e-8 per term).
pub fn avg_power_two(lambda: &DualVariables, scenario: &Scenario) -> Result<AvgPowerPair> {
    Ok(avg_power_two_detailed(lambda, scenario)?.pair)
}

/// As [`avg_power_two`], returning the per-branch region audit.
pub fn avg_power_two_detailed(lambda: &DualVariables, scenario: &Scenario) -> Result<TwoRrhReport> {
    check_two(lambda, scenario)?;
    let forward = branch_eval(&Ordered::from(scenario, &lambda.lambda, Branch::Rrh1Leads))?;
    let reverse = branch_eval(&Ordered::from(scenario, &lambda.lambda, Branch::Rrh2Leads))?;
    let pair = AvgPowerPair {
        rrh1: forward.lead_total() + reverse.follow_total(),
        rrh2: forward.follow_total() + reverse.lead_total(),
    };
    Ok(TwoRrhReport {
        pair,
        forward,
        reverse,
    })
}
