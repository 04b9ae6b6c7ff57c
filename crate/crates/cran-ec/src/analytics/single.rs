//! Exact average transmit power for a single RRH.
//!
//! The per-state policy is silent below the CPNR threshold U = λ/ε, rides
//! the level curve g(α) = (ε/λ)^{1/(1+ε)} α^{-ε/(1+ε)} - 1/α above it, and
//! saturates at the peak wherever g exceeds it. Since g rises to a single
//! maximum g(α*) = (ε/(1+ε))^{1+ε}/λ and then falls, the peak clamp either
//! never binds (case I) or binds exactly on one interval [α^L, α^U]
//! (case II), and each piece integrates against the gamma density in terms
//! of upper incomplete gamma functions.

use crate::channel::Scenario;
use crate::error::{Error, Result};
use crate::specfun::{gamma, upper_inc_gamma_ext};

/// The level curve g(α) for prices λ and exponent ε.
fn level(alpha: f64, lambda: f64, eps: f64) -> f64 {
    1.0 / ((lambda / eps).powf(1.0 / (1.0 + eps)) * alpha.powf(eps / (1.0 + eps))) - 1.0 / alpha
}

/// ∫_l^u g(α) f(α) dα in closed form; `u = None` means +∞.
fn level_mass(l: f64, u: Option<f64>, lambda: f64, eps: f64, m: f64, ab: f64) -> Result<f64> {
    let v = 1.0 / (1.0 + eps);
    let gm = gamma(m)?;
    let tail = |s: f64, x: f64| -> Result<f64> {
        match u {
            None => upper_inc_gamma_ext(s, x),
            Some(u) => Ok(upper_inc_gamma_ext(s, x)? - upper_inc_gamma_ext(s, m * u / ab)?),
        }
    };
    let t1 = (eps / lambda).powf(v) * (m / ab).powf(1.0 - v) * tail(v + m - 1.0, m * l / ab)? / gm;
    let t2 = (m / ab) * tail(m - 1.0, m * l / ab)? / gm;
    Ok(t1 - t2)
}

/// Expected power of the single-RRH optimal policy at price λ₁.
///
/// Requires a one-RRH scenario with ε(θ) > 0. λ₁ = 0 prices nothing and
/// the policy pins at the peak.
pub fn avg_power_single(lambda1: f64, scenario: &Scenario) -> Result<f64> {
    scenario.validate()?;
    if scenario.n_rrhs() != 1 {
        return Err(Error::domain(
            "avg_power_single",
            format!("needs exactly one RRH, got {}", scenario.n_rrhs()),
        ));
    }
    let eps = scenario.epsilon();
    if !(eps > 0.0) {
        return Err(Error::domain("avg_power_single", "requires theta > 0"));
    }
    if !(lambda1.is_finite() && lambda1 >= 0.0) {
        return Err(Error::domain(
            "avg_power_single",
            format!("lambda1 = {lambda1} must be >= 0"),
        ));
    }
    let peak = scenario.rrhs[0].p_peak;
    if lambda1 == 0.0 {
        return Ok(peak);
    }
    let (m, ab) = (scenario.m, scenario.rrhs[0].mean_cpnr);
    let u_thresh = lambda1 / eps;
    let g_max = (eps / (1.0 + eps)).powf(1.0 + eps) / lambda1;
    if g_max <= peak {
        // case I: the peak clamp never binds
        return level_mass(u_thresh, None, lambda1, eps, m, ab);
    }
    // case II: find where g crosses the peak on both monotone branches
    let alpha_star = u_thresh * ((1.0 + eps) / eps).powf(1.0 + eps);
    let cross = |mut lo: f64, mut hi: f64, rising: bool| -> f64 {
        for _ in 0..4000 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi || hi - lo <= 1e-15 * hi {
                break;
            }
            let above = level(mid, lambda1, eps) > peak;
            if above == rising {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let a_lo = cross(u_thresh, alpha_star, true);
    let mut far = alpha_star;
    for _ in 0..300 {
        far *= 2.0;
        if level(far, lambda1, eps) < peak {
            break;
        }
    }
    let a_hi = cross(alpha_star, far, false);
    let gm = gamma(m)?;
    let peak_mass = peak
        * ((crate::specfun::lower_inc_gamma(m, m * a_hi / ab)?
            - crate::specfun::lower_inc_gamma(m, m * a_lo / ab)?)
            / gm);
    Ok(level_mass(u_thresh, Some(a_lo), lambda1, eps, m, ab)?
        + peak_mass
        + level_mass(a_hi, None, lambda1, eps, m, ab)?)
}

/// Price that makes the single-RRH average power meet its budget, found by
/// bisection on the monotone map λ ↦ E[p(λ)]. Returns 0 when the budget is
/// slack even at zero price.
pub fn single_rrh_dual(scenario: &Scenario) -> Result<f64> {
    if scenario.n_rrhs() != 1 {
        return Err(Error::domain(
            "single_rrh_dual",
            format!("needs exactly one RRH, got {}", scenario.n_rrhs()),
        ));
    }
    let target = scenario.rrhs[0].p_avg;
    if avg_power_single(0.0, scenario)? <= target {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    for _ in 0..200 {
        if avg_power_single(hi, scenario)? < target {
            break;
        }
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi || hi - lo <= 1e-12 * hi {
            break;
        }
        if avg_power_single(mid, scenario)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::allocate_single;
    use crate::channel::{substream, RrhSpec};
    use approx::assert_relative_eq;

    fn one_rrh(mean_cpnr: f64, m: f64, theta: f64) -> Scenario {
        Scenario::new(
            vec![RrhSpec {
                mean_cpnr,
                p_avg: 0.5,
                p_peak: 1.0,
            }],
            m,
            0.1e-3,
            200e3,
            theta,
        )
        .unwrap()
    }

    fn mc_avg_power(lambda: f64, s: &Scenario, n: usize, label: &str) -> (f64, f64) {
        let mut rng = substream(2024, label);
        let sampler = crate::channel::FadingSampler::new(s).unwrap();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let st = sampler.sample(&mut rng);
            let p = allocate_single(lambda, st.alpha[0], s);
            sum += p;
            sumsq += p * p;
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn huge_price_silences_the_rrh() {
        let s = one_rrh(3.89, 2.0, 0.05);
        assert!(avg_power_single(1e9, &s).unwrap() < 1e-12);
    }

    #[test]
    fn zero_price_pins_at_peak() {
        let s = one_rrh(3.89, 2.0, 0.05);
        assert_eq!(avg_power_single(0.0, &s).unwrap(), 1.0);
    }

    #[test]
    fn quadrature_cross_check_across_shapes() {
        // independent route: integrate the policy against the density
        for (m, lambda, label) in [
            (1.0, 0.4, "q1"),
            (1.0, 0.1, "q2"),
            (2.0, 0.4, "q3"),
            (2.0, 0.1, "q4"),
            (1.5, 0.25, "q5"),
            (2.7, 0.05, "q6"),
        ] {
            let s = one_rrh(3.89, m, 0.05);
            let cutoff = crate::analytics::gamma_tail_cutoff(m, 3.89, 1e-14);
            let quad = crate::analytics::integrate(
                |a| allocate_single(lambda, a, &s) * crate::channel::pdf(a, m, 3.89).unwrap(),
                0.0,
                cutoff,
                1e-11,
            )
            .unwrap();
            let closed = avg_power_single(lambda, &s).unwrap();
            assert_relative_eq!(closed, quad, max_relative = 1e-7, epsilon = 1e-9);
            let _ = label;
        }
    }

    #[test]
    fn monte_carlo_cross_check_both_cases() {
        // case I (lambda = 0.4) and case II (lambda = 0.1) at m in {1, 2}
        for (m, lambda, label) in [
            (1.0, 0.4, "mc1"),
            (1.0, 0.1, "mc2"),
            (2.0, 0.4, "mc3"),
            (2.0, 0.1, "mc4"),
        ] {
            let s = one_rrh(3.89, m, 0.05);
            let eps = s.epsilon();
            let g_max = (eps / (1.0 + eps)).powf(1.0 + eps) / lambda;
            // the pair of lambdas straddles the case split
            assert_eq!(g_max <= 1.0, lambda == 0.4);
            let closed = avg_power_single(lambda, &s).unwrap();
            let (mc, se) = mc_avg_power(lambda, &s, 200_000, label);
            assert!(
                (closed - mc).abs() < (0.01 * mc).max(3.0 * se),
                "m={m} lambda={lambda}: closed {closed} vs mc {mc} (se {se})"
            );
        }
    }

    #[test]
    fn dual_bisection_meets_the_budget() {
        let s = one_rrh(3.89, 2.0, 0.05);
        let lam = single_rrh_dual(&s).unwrap();
        assert!(lam > 0.0);
        assert_relative_eq!(avg_power_single(lam, &s).unwrap(), 0.5, max_relative = 1e-9);

        // slack budget: average already satisfied by always-peak
        let mut slack = s.clone();
        slack.rrhs[0].p_avg = 1.0;
        assert_eq!(single_rrh_dual(&slack).unwrap(), 0.0);
    }

    #[test]
    fn rejects_multi_rrh_scenarios() {
        let s = Scenario::new(
            vec![
                RrhSpec {
                    mean_cpnr: 1.0,
                    p_avg: 0.5,
                    p_peak: 1.0,
                },
                RrhSpec {
                    mean_cpnr: 1.0,
                    p_avg: 0.5,
                    p_peak: 1.0,
                },
            ],
            2.0,
            0.1e-3,
            200e3,
            0.05,
        )
        .unwrap();
        assert!(avg_power_single(0.3, &s).is_err());
    }
}
