//! Per-fading-state optimal power allocation.
//!
//! For a fixed vector of average-power prices λ, the per-state problem
//!
//! ```text
//! minimize  (1 + Σ_i p_i α_i)^{-ε(θ)} + Σ_i λ_i p_i
//! subject to 0 ≤ p_i ≤ P_i^peak
//! ```
//!
//! has a closed-form solution with a sharp structure: order the RRHs by the
//! price ratio λ_i/α_i; a prefix of that order transmits, everyone in the
//! prefix except possibly the last runs at peak power, and the last active
//! RRH fills up to a water level set by its own price ratio. The same
//! structure with a different water level solves the ergodic (θ → 0)
//! problem. A derivative-free coordinate-descent oracle over the power box
//! is provided to cross-check the closed forms.

use crate::channel::{FadingState, MultiuserScenario, Scenario};
use crate::error::{Error, Result};

/// Non-negative prices on the per-RRH average-power constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVariables {
    pub lambda: Vec<f64>,
}

impl DualVariables {
    pub fn new(lambda: Vec<f64>) -> Self {
        DualVariables { lambda }
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }
}

/// Per-RRH powers for one fading state, watts.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerVector {
    pub watts: Vec<f64>,
}

impl PowerVector {
    pub fn zeros(n: usize) -> Self {
        PowerVector {
            watts: vec![0.0; n],
        }
    }
}

/// Allocation together with the ordering diagnostics.
#[derive(Debug, Clone)]
pub struct StateAllocation {
    pub powers: PowerVector,
    /// Permutation of RRH indices by nondecreasing λ/α.
    pub order: Vec<usize>,
    /// Number of RRHs assigned nonzero power.
    pub active_count: usize,
    /// True when the marginal water-level term had to be clamped at zero;
    /// cannot happen in exact arithmetic.
    pub clamped: bool,
}

fn price_ratio(lambda: f64, alpha: f64) -> f64 {
    if alpha > 0.0 {
        lambda / alpha
    } else {
        f64::INFINITY
    }
}

/// Permutation π ordering the RRHs by nondecreasing λ_i/α_i.
///
/// States with α_i = 0 sort last (ratio +∞); ties keep the original index
/// order (stable sort).
pub fn sort_by_price_ratio(lambda: &[f64], alpha: &[f64]) -> Vec<usize> {
    debug_assert_eq!(lambda.len(), alpha.len());
    let mut idx: Vec<usize> = (0..lambda.len()).collect();
    idx.sort_by(|&i, &j| {
        price_ratio(lambda[i], alpha[i]).total_cmp(&price_ratio(lambda[j], alpha[j]))
    });
    idx
}

/// Which marginal-utility rule the ordered allocation uses.
#[derive(Debug, Clone, Copy)]
enum WaterRule {
    /// Effective-capacity objective with exponent ε > 0.
    EffectiveCapacity { eps: f64 },
    /// Ergodic-capacity objective (the θ → 0 limit).
    Ergodic,
}

impl WaterRule {
    /// Activity test for the candidate at position x of the order, given the
    /// peak spend Σ_{b<x} P^peak_{π(b)} α_{π(b)} accumulated before it.
    fn admits(&self, lambda: f64, alpha: f64, spend: f64) -> bool {
        if alpha <= 0.0 {
            return false;
        }
        match *self {
            WaterRule::EffectiveCapacity { eps } => {
                lambda / (eps * alpha) < (-(eps + 1.0) * spend.ln_1p()).exp()
            }
            WaterRule::Ergodic => {
                if lambda == 0.0 {
                    true
                } else {
                    alpha / (lambda * std::f64::consts::LN_2) > 1.0 + spend
                }
            }
        }
    }

    /// Water-level power for the last active RRH (before peak/zero clamps).
    fn marginal(&self, lambda: f64, alpha: f64, spend: f64) -> f64 {
        match *self {
            WaterRule::EffectiveCapacity { eps } => {
                let level = (lambda / (eps * alpha)).powf(-1.0 / (eps + 1.0));
                (level - spend - 1.0) / alpha
            }
            WaterRule::Ergodic => {
                if lambda == 0.0 {
                    f64::INFINITY
                } else {
                    (alpha / (lambda * std::f64::consts::LN_2) - spend - 1.0) / alpha
                }
            }
        }
    }
}

/// Largest active-set size: the biggest x such that the ranked candidate at
/// position x still clears the activity threshold given the peak spend of
/// everyone ranked before it. Returns 0 when all RRHs stay silent.
pub fn active_set_size(
    order: &[usize],
    lambda: &[f64],
    alpha: &[f64],
    scenario: &Scenario,
) -> usize {
    active_set_size_rule(
        order,
        lambda,
        alpha,
        scenario,
        WaterRule::EffectiveCapacity {
            eps: scenario.epsilon(),
        },
    )
}

fn active_set_size_rule(
    order: &[usize],
    lambda: &[f64],
    alpha: &[f64],
    scenario: &Scenario,
    rule: WaterRule,
) -> usize {
    let mut spend = 0.0;
    let mut best = 0;
    for (pos, &i) in order.iter().enumerate() {
        if rule.admits(lambda[i], alpha[i], spend) {
            best = pos + 1;
        }
        spend += scenario.rrhs[i].p_peak * alpha[i];
    }
    best
}

fn allocate_rule(
    lambda: &[f64],
    alpha: &[f64],
    scenario: &Scenario,
    rule: WaterRule,
) -> StateAllocation {
    let n = alpha.len();
    let order = sort_by_price_ratio(lambda, alpha);
    let active = active_set_size_rule(&order, lambda, alpha, scenario, rule);
    let mut watts = vec![0.0; n];
    let mut clamped = false;
    let mut spend = 0.0;
    for pos in 0..active {
        let i = order[pos];
        let peak = scenario.rrhs[i].p_peak;
        if pos + 1 < active {
            watts[i] = peak;
            spend += peak * alpha[i];
        } else {
            let t = rule.marginal(lambda[i], alpha[i], spend);
            if t < 0.0 {
                clamped = true;
            }
            watts[i] = t.max(0.0).min(peak);
        }
    }
    StateAllocation {
        powers: PowerVector { watts },
        order,
        active_count: active,
        clamped,
    }
}

/// Optimal powers for one fading state, with ordering diagnostics.
///
/// θ = 0 (ε = 0) routes to the ergodic rule, whose water level is the
/// proper limit of the effective-capacity one.
pub fn allocate_state_detailed(
    lambda: &DualVariables,
    state: &FadingState,
    scenario: &Scenario,
) -> StateAllocation {
    debug_assert_eq!(lambda.len(), state.alpha.len());
    debug_assert_eq!(lambda.len(), scenario.n_rrhs());
    let eps = scenario.epsilon();
    let rule = if eps == 0.0 {
        WaterRule::Ergodic
    } else {
        WaterRule::EffectiveCapacity { eps }
    };
    allocate_rule(&lambda.lambda, &state.alpha, scenario, rule)
}

/// Optimal powers for one fading state.
pub fn allocate_state(
    lambda: &DualVariables,
    state: &FadingState,
    scenario: &Scenario,
) -> PowerVector {
    allocate_state_detailed(lambda, state, scenario).powers
}

/// Single-RRH closed form: silent below the CPNR threshold λ/ε, then the
/// water-filling-like level F, saturating at the peak.
pub fn allocate_single(lambda1: f64, alpha1: f64, scenario: &Scenario) -> f64 {
    let eps = scenario.epsilon();
    let peak = scenario.rrhs[0].p_peak;
    if !(alpha1 > 0.0) {
        return 0.0;
    }
    if eps == 0.0 {
        // Conventional water-filling with clamps.
        let level = if lambda1 == 0.0 {
            f64::INFINITY
        } else {
            1.0 / (lambda1 * std::f64::consts::LN_2) - 1.0 / alpha1
        };
        return level.max(0.0).min(peak);
    }
    if alpha1 < lambda1 / eps {
        return 0.0;
    }
    let f = 1.0 / ((lambda1 / eps).powf(1.0 / (1.0 + eps)) * alpha1.powf(eps / (1.0 + eps)))
        - 1.0 / alpha1;
    if f < peak {
        f.max(0.0)
    } else {
        peak
    }
}

/// Ergodic-capacity allocation (the no-delay-requirement limit): the same
/// ranked structure with water level α/(λ ln 2).
pub fn allocate_ergodic(
    lambda: &DualVariables,
    state: &FadingState,
    scenario: &Scenario,
) -> PowerVector {
    allocate_rule(&lambda.lambda, &state.alpha, scenario, WaterRule::Ergodic).powers
}

/// Channel-inversion policy for the zero-delay limit.
///
/// Returns the per-RRH inversion gains β_i = (m-1) ᾱ_i P_i^avg / m and the
/// resulting constant rate (effective capacity) in bits per frame. Both are
/// zero for m ≤ 1: Rayleigh fading has no zero-outage capacity.
pub fn channel_inversion_policy(scenario: &Scenario) -> (Vec<f64>, f64) {
    let m = scenario.m;
    if m <= 1.0 {
        return (vec![0.0; scenario.n_rrhs()], 0.0);
    }
    let beta: Vec<f64> = scenario
        .rrhs
        .iter()
        .map(|r| (m - 1.0) * r.mean_cpnr * r.p_avg / m)
        .collect();
    let ec = scenario.t_f * scenario.bandwidth * (1.0 + beta.iter().sum::<f64>()).log2();
    (beta, ec)
}

/// Multiuser rule: each user is served by the single RRH minimizing
/// λ_i/α_{i,k} (ties to the lower index), at power
/// `[(ε_k/(κ_k λ))^{1/(1+ε_k)} α^{-ε_k/(1+ε_k)} - 1/α]⁺`.
///
/// Returns one `(rrh index, power)` pair per user.
pub fn allocate_multiuser(
    lambda: &[f64],
    kappa: &[f64],
    alpha_users: &[Vec<f64>],
    scenario: &MultiuserScenario,
) -> Result<Vec<(usize, f64)>> {
    if kappa.len() != scenario.n_users() || alpha_users.len() != scenario.n_users() {
        return Err(Error::domain(
            "allocate_multiuser",
            "kappa and alpha_users must have one entry per user",
        ));
    }
    if kappa.iter().any(|k| !(*k > 0.0)) {
        return Err(Error::domain("allocate_multiuser", "kappa must be > 0"));
    }
    let mut out = Vec::with_capacity(scenario.n_users());
    for (k, alpha) in alpha_users.iter().enumerate() {
        let eps = scenario.epsilon_user(k);
        let order = sort_by_price_ratio(lambda, alpha);
        let best = order[0];
        let a = alpha[best];
        if a <= 0.0 {
            out.push((best, 0.0));
            continue;
        }
        let lam = lambda[best];
        if lam <= 0.0 {
            return Err(Error::domain(
                "allocate_multiuser",
                "a zero dual price makes the unconstrained power unbounded",
            ));
        }
        let p =
            (eps / (kappa[k] * lam)).powf(1.0 / (1.0 + eps)) * a.powf(-eps / (1.0 + eps)) - 1.0 / a;
        out.push((best, p.max(0.0)));
    }
    Ok(out)
}

/// Per-state dual objective (1 + Σ p α)^{-ε} + Σ λ p.
pub fn state_objective(lambda: &[f64], alpha: &[f64], eps: f64, powers: &[f64]) -> f64 {
    let gain: f64 = powers.iter().zip(alpha).map(|(p, a)| p * a).sum();
    let price: f64 = powers.iter().zip(lambda).map(|(p, l)| p * l).sum();
    (-eps * gain.ln_1p()).exp() + price
}

fn golden_min_coord(
    powers: &mut [f64],
    coord: usize,
    lo: f64,
    hi: f64,
    tol: f64,
    mut eval: impl FnMut(&[f64]) -> f64,
) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    powers[coord] = c;
    let mut fc = eval(powers);
    powers[coord] = d;
    let mut fd = eval(powers);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            powers[coord] = c;
            fc = eval(powers);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            powers[coord] = d;
            fd = eval(powers);
        }
    }
    let x = 0.5 * (a + b);
    powers[coord] = x;
    eval(powers)
}

/// Brute-force oracle: coordinate-wise golden-section refinement of the
/// per-state objective over the power box. The objective is convex and
/// smooth with separable constraints, so cyclic descent reaches the global
/// minimum; `grid_resolution` is the final per-coordinate resolution in
/// watts. Limited to five RRHs to stay an oracle, not a solver.
pub fn brute_force_state(
    lambda: &DualVariables,
    state: &FadingState,
    scenario: &Scenario,
    grid_resolution: f64,
) -> Result<PowerVector> {
    let n = scenario.n_rrhs();
    if n > 5 {
        return Err(Error::domain(
            "brute_force_state",
            format!("{n} RRHs: exhaustive refinement is limited to 5"),
        ));
    }
    if !(grid_resolution > 0.0) {
        return Err(Error::domain(
            "brute_force_state",
            "grid_resolution must be > 0",
        ));
    }
    let eps = scenario.epsilon();
    let alpha = &state.alpha;
    let lam = &lambda.lambda;
    let mut p = vec![0.0; n];
    let mut best = state_objective(lam, alpha, eps, &p);
    for _sweep in 0..200 {
        let before = best;
        for i in 0..n {
            best = golden_min_coord(
                &mut p,
                i,
                0.0,
                scenario.rrhs[i].p_peak,
                grid_resolution,
                |q| state_objective(lam, alpha, eps, q),
            );
        }
        if before - best <= 1e-15 * (1.0 + best.abs()) {
            break;
        }
    }
    Ok(PowerVector { watts: p })
}

/// Worst residual of the stationarity/complementarity system at `powers`.
///
/// The box multipliers are recovered from the active constraints: a silent
/// RRH needs λ_i ≥ ε(1+Σpα)^{-ε-1} α_i, a peaked one the reverse, and an
/// interior one equality. Feasibility violations count too.
pub fn kkt_residual(
    lambda: &DualVariables,
    state: &FadingState,
    scenario: &Scenario,
    powers: &PowerVector,
) -> f64 {
    let eps = scenario.epsilon();
    let gain: f64 = powers
        .watts
        .iter()
        .zip(&state.alpha)
        .map(|(p, a)| p * a)
        .sum();
    let base = eps * (-(eps + 1.0) * gain.ln_1p()).exp();
    let mut r: f64 = 0.0;
    for i in 0..powers.watts.len() {
        let p = powers.watts[i];
        let peak = scenario.rrhs[i].p_peak;
        let util = base * state.alpha[i];
        let lam = lambda.lambda[i];
        r = r.max(-p).max(p - peak);
        if p <= 0.0 {
            // delta_i = lambda_i - util must be >= 0
            r = r.max(util - lam);
        } else if p >= peak {
            // mu_i = util - lambda_i must be >= 0
            r = r.max(lam - util);
        } else {
            r = r.max((lam - util).abs());
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{substream, RrhSpec};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn scenario(rrhs: Vec<RrhSpec>, m: f64, theta: f64) -> Scenario {
        Scenario::new(rrhs, m, 0.1e-3, 200e3, theta).unwrap()
    }

    fn rrh(a: f64, pk: f64) -> RrhSpec {
        RrhSpec {
            mean_cpnr: a,
            p_avg: pk / 2.0,
            p_peak: pk,
        }
    }

    fn random_instance(
        rng: &mut impl Rng,
        max_rrhs: usize,
    ) -> (Scenario, DualVariables, FadingState) {
        let n = rng.random_range(1..=max_rrhs);
        let m = [1.0, 2.0, 3.0][rng.random_range(0..3)];
        let theta = rng.random_range(0.01..0.5);
        let rrhs: Vec<RrhSpec> = (0..n)
            .map(|_| {
                let pk = rng.random_range(0.3..2.0);
                RrhSpec {
                    mean_cpnr: rng.random_range(0.2..8.0),
                    p_avg: pk / 2.0,
                    p_peak: pk,
                }
            })
            .collect();
        let s = scenario(rrhs, m, theta);
        let lambda = DualVariables::new(
            (0..n)
                .map(|_| 10f64.powf(rng.random_range(-2.0..0.5)))
                .collect(),
        );
        let alpha = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        (s, lambda, FadingState { alpha })
    }

    #[test]
    fn ratio_sort_examples() {
        // ratios 0.5, 1.0
        assert_eq!(sort_by_price_ratio(&[1.0, 1.0], &[2.0, 1.0]), vec![0, 1]);
        // equal ratios: stable tie-break
        assert_eq!(sort_by_price_ratio(&[1.0, 2.0], &[1.0, 2.0]), vec![0, 1]);
        // zero gain sorts last regardless of price
        assert_eq!(sort_by_price_ratio(&[0.0, 1.0], &[0.0, 1.0]), vec![1, 0]);
        let mut rng = substream(3, "sort");
        for _ in 0..100 {
            let lam: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..2.0)).collect();
            let alp: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..5.0)).collect();
            let ord = sort_by_price_ratio(&lam, &alp);
            for w in ord.windows(2) {
                assert!(lam[w[0]] / alp[w[0]] <= lam[w[1]] / alp[w[1]]);
            }
        }
    }

    #[test]
    fn active_set_examples() {
        let s = scenario(vec![rrh(2.0, 1.0), rrh(1.0, 1.0)], 2.0, 0.05);
        let eps = s.epsilon();
        // best-ranked RRH already fails: bracket at x = 1 is exactly 1
        let lam = vec![eps * 2.0, eps * 1.0];
        let alpha = vec![2.0, 1.0];
        let ord = sort_by_price_ratio(&lam, &alpha);
        assert_eq!(active_set_size(&ord, &lam, &alpha, &s), 0);

        let s1 = scenario(vec![rrh(2.0, 1.0)], 2.0, 0.05);
        let lam = vec![eps * 0.5];
        let alpha = vec![1.0];
        assert_eq!(active_set_size(&[0], &lam, &alpha, &s1), 1);
    }

    #[test]
    fn active_set_matches_exhaustive_scan() {
        let mut rng = substream(4, "active");
        for _ in 0..500 {
            let (s, lam, st) = random_instance(&mut rng, 3);
            let eps = s.epsilon();
            let ord = sort_by_price_ratio(&lam.lambda, &st.alpha);
            let got = active_set_size(&ord, &lam.lambda, &st.alpha, &s);
            // Direct scan of the defining inequality over every x.
            let mut expect = 0;
            for x in 1..=s.n_rrhs() {
                let spend: f64 = ord[..x - 1]
                    .iter()
                    .map(|&i| s.rrhs[i].p_peak * st.alpha[i])
                    .sum();
                let i = ord[x - 1];
                if st.alpha[i] > 0.0
                    && lam.lambda[i] / (eps * st.alpha[i]) < (1.0 + spend).powf(-eps - 1.0)
                {
                    expect = x;
                }
            }
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn all_expensive_prices_give_zero() {
        let s = scenario(vec![rrh(2.0, 1.0), rrh(1.0, 1.0)], 2.0, 0.05);
        let eps = s.epsilon();
        let lam = DualVariables::new(vec![eps * 5.0, eps * 3.0]);
        let st = FadingState {
            alpha: vec![2.0, 1.0],
        };
        assert_eq!(allocate_state(&lam, &st, &s).watts, vec![0.0, 0.0]);
    }

    #[test]
    fn single_rrh_boundary_gives_zero() {
        let s = scenario(vec![rrh(2.0, 1.0)], 2.0, 0.05);
        let eps = s.epsilon();
        let lam = 0.7;
        let alpha = lam / eps;
        let p = allocate_single(lam, alpha, &s);
        assert!(p.abs() < 1e-12, "boundary power {p}");
    }

    #[test]
    fn single_rrh_form_matches_general_solution() {
        let mut rng = substream(9, "single");
        for _ in 0..2000 {
            let theta = rng.random_range(0.01..0.5);
            let pk = rng.random_range(0.3..2.0);
            let s = scenario(vec![rrh(rng.random_range(0.2..8.0), pk)], 2.0, theta);
            let lam = 10f64.powf(rng.random_range(-2.0..0.5));
            let alpha = rng.random_range(0.0..10.0);
            let via_state = allocate_state(
                &DualVariables::new(vec![lam]),
                &FadingState { alpha: vec![alpha] },
                &s,
            )
            .watts[0];
            let via_single = allocate_single(lam, alpha, &s);
            assert_relative_eq!(via_state, via_single, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn ergodic_single_rrh_is_water_filling() {
        let s = scenario(vec![rrh(2.0, 1.0)], 2.0, 0.0);
        let lam = DualVariables::new(vec![0.8]);
        // level below the inverse gain: silent
        let st = FadingState { alpha: vec![0.4] };
        assert_eq!(allocate_ergodic(&lam, &st, &s).watts[0], 0.0);
        // interior level
        let st = FadingState { alpha: vec![2.0] };
        let expect = 1.0 / (0.8 * std::f64::consts::LN_2) - 0.5;
        assert_relative_eq!(
            allocate_ergodic(&lam, &st, &s).watts[0],
            expect.min(1.0),
            max_relative = 1e-14
        );
    }

    #[test]
    fn inversion_policy_values() {
        let s = scenario(vec![rrh(4.0, 1.0)], 2.0, 0.05);
        let (beta, _ec) = channel_inversion_policy(&s);
        assert_relative_eq!(beta[0], 1.0, max_relative = 1e-14); // (m-1) ᾱ P/m = 0.5*4*0.5

        let s2 = scenario(vec![rrh(4.0, 1.0), rrh(4.0, 1.0)], 2.0, 0.05);
        let (beta2, ec2) = channel_inversion_policy(&s2);
        assert_relative_eq!(beta2[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(
            ec2,
            s2.t_f * s2.bandwidth * 3f64.log2(),
            max_relative = 1e-14
        );

        let ray = scenario(vec![rrh(4.0, 1.0)], 1.0, 0.05);
        let (beta_r, ec_r) = channel_inversion_policy(&ray);
        assert_eq!(beta_r[0], 0.0);
        assert_eq!(ec_r, 0.0);
    }

    #[test]
    fn multiuser_rule_examples() {
        let mu = MultiuserScenario {
            p_avg: vec![0.5, 0.5],
            m: 2.0,
            t_f: 0.1e-3,
            bandwidth: 200e3,
            user_theta: vec![0.1],
            user_mean_cpnr: vec![vec![2.0, 1.0]],
        };
        mu.validate().unwrap();
        let got = allocate_multiuser(&[1.0, 1.0], &[1.0], &[vec![2.0, 1.0]], &mu).unwrap();
        assert_eq!(got[0].0, 0); // argmin of (0.5, 1.0)

        // negative bracket clamps to zero: huge kappa kills the first term
        let got = allocate_multiuser(&[1.0, 1.0], &[1e9], &[vec![2.0, 1.0]], &mu).unwrap();
        assert_eq!(got[0].1, 0.0);
    }

    #[test]
    fn closed_form_beats_or_ties_brute_force() {
        let mut rng = substream(21, "oracle");
        for _ in 0..300 {
            let (s, lam, st) = random_instance(&mut rng, 5);
            let p_closed = allocate_state(&lam, &st, &s);
            let p_brute = brute_force_state(&lam, &st, &s, 1e-9).unwrap();
            let eps = s.epsilon();
            let f_closed = state_objective(&lam.lambda, &st.alpha, eps, &p_closed.watts);
            let f_brute = state_objective(&lam.lambda, &st.alpha, eps, &p_brute.watts);
            assert!(
                f_closed <= f_brute * (1.0 + 1e-6) + 1e-12,
                "closed {f_closed} vs brute {f_brute}"
            );
            assert!(kkt_residual(&lam, &st, &s, &p_closed) <= 1e-8);
        }
    }

    #[test]
    fn brute_force_spends_nothing_at_huge_prices() {
        let s = scenario(vec![rrh(2.0, 1.0), rrh(1.0, 1.0)], 2.0, 0.05);
        let lam = DualVariables::new(vec![1e9, 1e9]);
        let st = FadingState {
            alpha: vec![3.0, 2.0],
        };
        let p = brute_force_state(&lam, &st, &s, 1e-9).unwrap();
        assert!(p.watts.iter().all(|v| *v < 1e-6), "{:?}", p.watts);
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let rrhs: Vec<RrhSpec> = (0..6).map(|_| rrh(1.0, 1.0)).collect();
        let s = scenario(rrhs, 2.0, 0.05);
        let lam = DualVariables::new(vec![0.1; 6]);
        let st = FadingState {
            alpha: vec![1.0; 6],
        };
        assert!(brute_force_state(&lam, &st, &s, 1e-6).is_err());
    }

    #[test]
    fn allocation_structure_on_random_instances() {
        let mut rng = substream(33, "structure");
        for _ in 0..2000 {
            let (s, lam, st) = random_instance(&mut rng, 5);
            let alloc = allocate_state_detailed(&lam, &st, &s);
            let p = &alloc.powers.watts;
            // at most one strictly interior coordinate
            let interior = p
                .iter()
                .enumerate()
                .filter(|(i, &v)| v > 0.0 && v < s.rrhs[*i].p_peak)
                .count();
            assert!(interior <= 1, "powers {p:?}");
            // every active price ratio <= every silent price ratio
            let worst_active = p
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(i, _)| price_ratio(lam.lambda[i], st.alpha[i]))
                .fold(f64::NEG_INFINITY, f64::max);
            let best_silent = p
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 0.0)
                .map(|(i, _)| price_ratio(lam.lambda[i], st.alpha[i]))
                .fold(f64::INFINITY, f64::min);
            assert!(worst_active <= best_silent);
            assert!(!alloc.clamped);
        }
    }

    #[test]
    fn raising_a_price_never_raises_its_power() {
        let mut rng = substream(44, "monotone");
        for _ in 0..1000 {
            let (s, mut lam, st) = random_instance(&mut rng, 4);
            let i = rng.random_range(0..s.n_rrhs());
            let before = allocate_state(&lam, &st, &s).watts[i];
            lam.lambda[i] *= 1.0 + rng.random_range(0.01..3.0);
            let after = allocate_state(&lam, &st, &s).watts[i];
            assert!(after <= before + 1e-12);
        }
    }
}
