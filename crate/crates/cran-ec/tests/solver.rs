//! Integration tests for the dual solver and the multiuser extension.

use cran_ec::allocator::allocate_multiuser;
use cran_ec::channel::{sample_states, substream, MultiuserScenario, RrhSpec, Scenario};
use cran_ec::dual_solver::{
    allocate_multiuser_ergodic, initial_prices, solve, solve_multiuser, AvgPowerMode,
    MultiuserConfig, MultiuserObjective, SolveConfig,
};
use cran_ec::metrics::{estimate_ec_on, multiuser_sum_ec, Policy};

/// Step parameter matched to the price scale: at large θ the optimal
/// prices live orders of magnitude below 1 and a unit step would fling
/// the iterate far outside the basin the diminishing schedule can recover
/// from.
fn adaptive_step(s: &Scenario) -> f64 {
    let l0 = initial_prices(s);
    (10.0 * l0.lambda.iter().cloned().fold(f64::INFINITY, f64::min)).clamp(1e-5, 1.0)
}

fn reference_scenario(theta: f64) -> Scenario {
    Scenario::new(
        vec![
            RrhSpec {
                mean_cpnr: 3.89,
                p_avg: 0.5,
                p_peak: 1.0,
            },
            RrhSpec {
                mean_cpnr: 1.43,
                p_avg: 0.5,
                p_peak: 1.0,
            },
        ],
        2.0,
        0.1e-3,
        200e3,
        theta,
    )
    .unwrap()
}

#[test]
fn online_and_analytic_prices_agree() {
    let s = reference_scenario(0.05);
    let analytic = solve(
        &s,
        &SolveConfig {
            mode: AvgPowerMode::Analytic,
            tol: 0.005,
            max_iter: 4000,
            ..SolveConfig::default()
        },
    )
    .unwrap();
    assert!(analytic.converged);
    // the statistics-free scheme: one draw per iteration, running mean
    let online = solve(
        &s,
        &SolveConfig {
            mode: AvgPowerMode::Online,
            tol: 1e-4, // keep it averaging for the whole budget
            max_iter: 200_000,
            seed: 31,
            ..SolveConfig::default()
        },
    )
    .unwrap();
    for i in 0..2 {
        let a = analytic.lambda.lambda[i];
        let o = online.lambda.lambda[i];
        assert!(
            (a - o).abs() / a < 0.05,
            "rrh {i}: analytic {a} vs online {o}"
        );
    }
}

#[test]
fn batch_mc_meets_budgets_on_five_rrhs() {
    // the larger topology has no closed forms; the sampled estimator must
    // still settle the budgets
    let cpnrs = [64.3, 5.3, 63.1, 3.8, 5.1];
    let s = Scenario::new(
        cpnrs
            .iter()
            .map(|&a| RrhSpec {
                mean_cpnr: a,
                p_avg: 0.5,
                p_peak: 1.0,
            })
            .collect(),
        2.0,
        0.1e-3,
        200e3,
        0.05,
    )
    .unwrap();
    // batches sized so three standard errors of one estimate fit the
    // tolerance band, and a step small enough for the weakest RRH's
    // price scale (the strong-CPNR links price two decades below it)
    let report = solve(
        &s,
        &SolveConfig {
            mode: AvgPowerMode::BatchMc,
            batch_samples: 20_000,
            max_iter: 3000,
            step_a: 0.05,
            tol: 0.03,
            seed: 7,
            ..SolveConfig::default()
        },
    )
    .unwrap();
    assert!(report.converged, "stopped at {}", report.iterations);
    for (i, p) in report.final_pbar().iter().enumerate() {
        assert!((p - 0.5).abs() <= 0.03 * 0.5 + 0.01, "rrh {i}: pbar {p}");
    }
}

#[test]
fn ec_is_nonincreasing_in_theta_when_reoptimized() {
    let thetas = [0.02, 0.08, 0.2, 0.4];
    let mut last = f64::INFINITY;
    for (i, &theta) in thetas.iter().enumerate() {
        let s = reference_scenario(theta);
        let report = solve(
            &s,
            &SolveConfig {
                mode: AvgPowerMode::Analytic,
                tol: 0.01,
                max_iter: 4000,
                step_a: adaptive_step(&s),
                ..SolveConfig::default()
            },
        )
        .unwrap();
        assert!(report.converged, "theta {theta}");
        let policy = Policy::Proposed {
            lambda: report.lambda,
        };
        let mut rng = substream(5, "trend"); // common states across theta
        let states = sample_states(&s, 60_000, &mut rng).unwrap();
        let ec = estimate_ec_on(|st| policy.allocate(st, &s), &s, &states)
            .unwrap()
            .normalized_ec;
        assert!(
            ec <= last * (1.0 + 1e-3),
            "theta {theta} (index {i}): ec {ec} after {last}"
        );
        last = ec;
    }
}

fn symmetric_mu(theta: f64) -> MultiuserScenario {
    MultiuserScenario {
        p_avg: vec![0.5, 0.5],
        m: 2.0,
        t_f: 0.1e-3,
        bandwidth: 200e3,
        user_theta: vec![theta, theta],
        user_mean_cpnr: vec![vec![2.0, 1.0], vec![1.0, 2.0]],
    }
}

#[test]
fn multiuser_symmetry() {
    let mu = symmetric_mu(0.2);
    let report = solve_multiuser(
        &mu,
        &MultiuserConfig {
            max_iter: 40_000,
            seed: 11,
            ..MultiuserConfig::default()
        },
    )
    .unwrap();
    assert!(report.converged, "stopped at {}", report.iterations);
    let l = &report.lambda.lambda;
    assert!(
        (l[0] - l[1]).abs() / l[0].max(l[1]) < 0.05,
        "asymmetric prices {l:?}"
    );
    let (_, per_user) = multiuser_sum_ec(
        &mu,
        |alpha| allocate_multiuser(&report.lambda.lambda, &report.kappa, alpha, &mu),
        100_000,
        17,
    )
    .unwrap();
    assert!(
        (per_user[0] - per_user[1]).abs() / per_user[0] < 0.05,
        "asymmetric ECs {per_user:?}"
    );
}

#[test]
fn multiuser_single_user_binds_every_budget() {
    // with no peak limits a free RRH would be pumped without bound, so
    // at the optimum every budget is tight
    let mu = MultiuserScenario {
        p_avg: vec![0.5, 0.5],
        m: 2.0,
        t_f: 0.1e-3,
        bandwidth: 200e3,
        user_theta: vec![0.15],
        user_mean_cpnr: vec![vec![3.0, 1.5]],
    };
    // a lone user served by whichever RRH is cheapest per state makes the
    // per-RRH power stream bursty; the averaging needs room to resolve it
    let report = solve_multiuser(
        &mu,
        &MultiuserConfig {
            max_iter: 150_000,
            tol: 0.03,
            seed: 13,
            ..MultiuserConfig::default()
        },
    )
    .unwrap();
    assert!(report.converged, "stopped at {}", report.iterations);
    for (i, p) in report.avg_power.iter().enumerate() {
        assert!((p - 0.5).abs() <= 0.03 * 0.5, "rrh {i}: {p}");
    }
    assert!(report.lambda.lambda.iter().all(|l| *l > 0.0));
}

#[test]
fn multiuser_ec_objective_beats_ergodic_at_high_theta() {
    // square deployment, users near the center; watt-referenced mean
    // CPNRs for the four links of each user
    let mu = MultiuserScenario {
        p_avg: vec![0.5; 4],
        m: 2.0,
        t_f: 0.1e-3,
        bandwidth: 200e3,
        user_theta: vec![0.4, 0.4],
        user_mean_cpnr: vec![vec![2.0, 3.56, 3.56, 2.0], vec![3.56, 3.56, 2.0, 2.0]],
    };
    let ec_report = solve_multiuser(
        &mu,
        &MultiuserConfig {
            max_iter: 60_000,
            seed: 19,
            objective: MultiuserObjective::EffectiveCapacity,
            ..MultiuserConfig::default()
        },
    )
    .unwrap();
    let erg_report = solve_multiuser(
        &mu,
        &MultiuserConfig {
            max_iter: 60_000,
            seed: 19,
            objective: MultiuserObjective::Ergodic,
            ..MultiuserConfig::default()
        },
    )
    .unwrap();
    // common fading draws for the comparison
    let (sum_ec, _) = multiuser_sum_ec(
        &mu,
        |alpha| allocate_multiuser(&ec_report.lambda.lambda, &ec_report.kappa, alpha, &mu),
        150_000,
        23,
    )
    .unwrap();
    let (sum_erg, _) = multiuser_sum_ec(
        &mu,
        |alpha| {
            let floored: Vec<f64> = erg_report
                .lambda
                .lambda
                .iter()
                .map(|l| l.max(1e-12))
                .collect();
            Ok(allocate_multiuser_ergodic(&floored, alpha))
        },
        150_000,
        23,
    )
    .unwrap();
    assert!(
        sum_ec > sum_erg,
        "EC-aware {sum_ec} should beat delay-blind {sum_erg} at theta 0.4"
    );
}

#[test]
fn multiuser_replay_is_deterministic() {
    let mu = symmetric_mu(0.25);
    let cfg = MultiuserConfig {
        max_iter: 3000,
        seed: 3,
        ..MultiuserConfig::default()
    };
    let a = solve_multiuser(&mu, &cfg).unwrap();
    let b = solve_multiuser(&mu, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn joint_adaptation_beats_per_link_adaptation() {
    // each RRH adapting on its own channel ignores the joint fading
    // state; the coordinated policy must win, visibly but not wildly
    let s = reference_scenario(0.1);
    let report = solve(
        &s,
        &SolveConfig {
            mode: AvgPowerMode::Analytic,
            tol: 0.01,
            max_iter: 4000,
            ..SolveConfig::default()
        },
    )
    .unwrap();
    assert!(report.converged);
    let proposed = Policy::Proposed {
        lambda: report.lambda,
    };
    let independent =
        cran_ec::metrics::baseline_policy(cran_ec::metrics::BaselineKind::Independent, &s, None)
            .unwrap();
    let mut rng = substream(43, "joint-vs-independent");
    let states = sample_states(&s, 80_000, &mut rng).unwrap();
    let ec_prop = estimate_ec_on(|st| proposed.allocate(st, &s), &s, &states)
        .unwrap()
        .normalized_ec;
    let ec_ind = estimate_ec_on(|st| independent.allocate(st, &s), &s, &states)
        .unwrap()
        .normalized_ec;
    let gain = ec_prop / ec_ind - 1.0;
    assert!(
        (0.05..=0.30).contains(&gain),
        "gain over independent adaptation {gain}"
    );
}

#[test]
fn duality_gap_proxy_shrinks_along_the_iteration() {
    // weak duality sandwich: the dual function value bounds the optimal
    // inner expectation from below, the policy's own expectation
    // approaches it from the infeasible side, and both meet at the fixed
    // point; the implied EC gap must shrink as the prices converge.
    let s = reference_scenario(0.05);
    let eps = s.epsilon();
    let theta = s.theta;
    let report = solve(
        &s,
        &SolveConfig {
            mode: AvgPowerMode::BatchMc,
            batch_samples: 2000,
            max_iter: 600,
            tol: 1e-6, // keep iterating; we want the trajectory
            seed: 29,
            ..SolveConfig::default()
        },
    )
    .unwrap();
    let mut rng = substream(37, "gap");
    let states = sample_states(&s, 120_000, &mut rng).unwrap();
    let gap_at = |k: usize| {
        let lambda = cran_ec::allocator::DualVariables::new(report.trace[k].lambda.clone());
        let mut inner = 0.0;
        let mut dual = 0.0;
        for st in &states {
            let p = cran_ec::allocator::allocate_state(&lambda, st, &s);
            let gain: f64 = p.watts.iter().zip(&st.alpha).map(|(p, a)| p * a).sum();
            let e = (-eps * gain.ln_1p()).exp();
            inner += e;
            dual += e + p
                .watts
                .iter()
                .zip(&lambda.lambda)
                .map(|(p, l)| l * p)
                .sum::<f64>();
        }
        let n = states.len() as f64;
        let inner = inner / n;
        let dual_value = dual / n
            - lambda
                .lambda
                .iter()
                .zip(&s.rrhs)
                .map(|(l, r)| l * r.p_avg)
                .sum::<f64>();
        let primal_ec = -inner.ln() / theta;
        let bound_ec = -dual_value.ln() / theta;
        (primal_ec - bound_ec).abs()
    };
    let early = gap_at(4);
    let late = gap_at(report.trace.len() - 1);
    assert!(
        late < early / 5.0,
        "gap did not shrink: early {early}, late {late}"
    );
}

#[test]
fn burn_in_discards_early_samples() {
    let s = reference_scenario(0.05);
    let with_burn = solve(
        &s,
        &SolveConfig {
            mode: AvgPowerMode::Online,
            burn_in: 500,
            max_iter: 5000,
            tol: 1e-4,
            seed: 41,
            ..SolveConfig::default()
        },
    )
    .unwrap();
    let without = solve(
        &s,
        &SolveConfig {
            mode: AvgPowerMode::Online,
            burn_in: 0,
            max_iter: 5000,
            tol: 1e-4,
            seed: 41,
            ..SolveConfig::default()
        },
    )
    .unwrap();
    assert_ne!(with_burn.trace.last(), without.trace.last());
    // prices move the same way early on (burn-in only affects the average)
    assert_eq!(with_burn.trace[0].lambda, without.trace[0].lambda);
}
