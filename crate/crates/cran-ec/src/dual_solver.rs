//! Projected subgradient loop on the average-power prices.
//!
//! The dual of the effective-capacity problem separates per fading state
//! once prices λ are fixed, so the outer loop is simple: estimate the
//! expected power E[P*(λ)] spent by the per-state optimum, step the prices
//! along the constraint violation d = E\[P*\] − P^avg with a diminishing
//! step ζ_k = a/k, and project back onto λ ≥ 0. Three estimators of the
//! expectation are supported:
//!
//! - `Online`: one fading draw per iteration, with the running mean
//!   P̄_k = (p_k + (k-1) P̄_{k-1})/k standing in for the expectation (the
//!   early entries mix allocations made under stale prices — that is the
//!   point of the scheme: it needs no fading statistics);
//! - `BatchMc`: a fresh Monte Carlo batch per iteration;
//! - `Analytic`: the exact expressions of [`crate::analytics`], available
//!   for one or two RRHs.

use std::io::Write;

use crate::allocator::{allocate_ergodic, allocate_multiuser, allocate_state, DualVariables};
use crate::analytics::{avg_power_single, avg_power_two};
use crate::channel::{substream, FadingSampler, FadingState, MultiuserScenario, Scenario};
use crate::error::{Error, Result};

/// How the per-iteration average-power estimate is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AvgPowerMode {
    Online,
    Analytic,
    BatchMc,
}

impl std::str::FromStr for AvgPowerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "online" => Ok(AvgPowerMode::Online),
            "analytic" => Ok(AvgPowerMode::Analytic),
            "batch-mc" => Ok(AvgPowerMode::BatchMc),
            other => Err(Error::Config(format!(
                "unknown average-power mode {other:?} (expected online, analytic or batch-mc)"
            ))),
        }
    }
}

impl AvgPowerMode {
    pub fn label(&self) -> &'static str {
        match self {
            AvgPowerMode::Online => "online",
            AvgPowerMode::Analytic => "analytic",
            AvgPowerMode::BatchMc => "batch-mc",
        }
    }
}

/// Solver knobs.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    /// Step-size parameter a in ζ_k = a/k.
    pub step_a: f64,
    pub max_iter: usize,
    /// Relative average-power tolerance of the convergence test.
    pub tol: f64,
    pub seed: u64,
    pub mode: AvgPowerMode,
    /// Samples per iteration in `BatchMc` mode.
    pub batch_samples: usize,
    /// Iterations whose online running mean is discarded before averaging
    /// restarts (0 follows the plain recursion).
    pub burn_in: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            step_a: 1.0,
            max_iter: 2000,
            tol: 0.02,
            seed: 0,
            mode: AvgPowerMode::Online,
            batch_samples: 1000,
            burn_in: 0,
        }
    }
}

/// One row of the iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    /// Prices used during this iteration.
    pub lambda: Vec<f64>,
    /// Average-power estimate after this iteration.
    pub pbar: Vec<f64>,
    pub subgrad_norm: f64,
}

/// Solver outcome with the full trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub lambda: DualVariables,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl SolveReport {
    /// Final average-power estimate.
    pub fn final_pbar(&self) -> &[f64] {
        &self.trace.last().expect("at least one iteration ran").pbar
    }

    /// Write the trace as CSV: iter, lambda_1..I, pbar_1..I, subgrad_norm.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.lambda.len();
        write!(w, "iter")?;
        for i in 1..=n {
            write!(w, ",lambda_{i}")?;
        }
        for i in 1..=n {
            write!(w, ",pbar_{i}")?;
        }
        writeln!(w, ",subgrad_norm")?;
        for row in &self.trace {
            write!(w, "{}", row.iter)?;
            for v in &row.lambda {
                write!(w, ",{v}")?;
            }
            for v in &row.pbar {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", row.subgrad_norm)?;
        }
        Ok(())
    }
}

/// Mutable state of the outer dual iteration: the prices, the iteration
/// counter, and the running average-power estimate they act on. [`solve`]
/// drives this loop with a convergence test and trace; the pieces are
/// public for custom loops.
///
/// ```
/// use cran_ec::allocator::{allocate_state, DualVariables};
/// use cran_ec::channel::{sample_fading, substream, RrhSpec, Scenario};
/// use cran_ec::dual_solver::{initial_prices, DualState};
///
/// let s = Scenario::new(
///     vec![RrhSpec { mean_cpnr: 2.5, p_avg: 0.5, p_peak: 1.0 }],
///     2.0, 1e-4, 2e5, 0.05,
/// ).unwrap();
/// let mut state = DualState::new(initial_prices(&s), 1.0);
/// let mut rng = substream(1, "custom-loop");
/// for _ in 0..200 {
///     let fading = sample_fading(&s, &mut rng).unwrap();
///     let p = allocate_state(&state.lambda, &fading, &s);
///     state.track(&p.watts);
///     state.step(&s);
/// }
/// assert_eq!(state.k, 200);
/// assert!((state.avg_power[0] - 0.5).abs() < 0.15);
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambda: DualVariables,
    /// Completed iterations.
    pub k: usize,
    /// Running mean of the per-state allocations so far.
    pub avg_power: Vec<f64>,
    /// Step parameter a in ζ_k = a/k.
    pub step_a: f64,
}

impl DualState {
    pub fn new(lambda: DualVariables, step_a: f64) -> DualState {
        let n = lambda.len();
        DualState {
            lambda,
            k: 0,
            avg_power: vec![0.0; n],
            step_a,
        }
    }

    /// Fold one per-state allocation into the running mean.
    pub fn track(&mut self, p_state: &[f64]) {
        self.k += 1;
        online_track(&mut self.avg_power, self.k, p_state);
    }

    /// Projected price update along the current budget violation.
    pub fn step(&mut self, scenario: &Scenario) {
        let d = subgradient(&self.avg_power, scenario);
        self.lambda = update_duals(&self.lambda, &d, self.step_a, self.k.max(1));
    }
}

/// Constraint-violation subgradient d_i = P̄_i − P_i^avg.
pub fn subgradient(avg_power_estimate: &[f64], scenario: &Scenario) -> Vec<f64> {
    debug_assert_eq!(avg_power_estimate.len(), scenario.n_rrhs());
    avg_power_estimate
        .iter()
        .zip(&scenario.rrhs)
        .map(|(p, r)| p - r.p_avg)
        .collect()
}

/// Projected price update λ ← [λ + (a/k) d]⁺ for iteration k ≥ 1.
pub fn update_duals(lambda: &DualVariables, d: &[f64], step_a: f64, k: usize) -> DualVariables {
    debug_assert!(k >= 1);
    let step = step_a / k as f64;
    DualVariables::new(
        lambda
            .lambda
            .iter()
            .zip(d)
            .map(|(l, di)| (l + step * di).max(0.0))
            .collect(),
    )
}

/// Running-mean update P̄_k = (p_k + (k-1) P̄_{k-1})/k for k ≥ 1.
pub fn online_track(pbar: &mut [f64], k: usize, p_state: &[f64]) {
    debug_assert!(k >= 1);
    let kf = k as f64;
    for (avg, p) in pbar.iter_mut().zip(p_state) {
        *avg = (p + (kf - 1.0) * *avg) / kf;
    }
}

/// The solver's starting prices: the marginal utility each RRH would see
/// at the mean fading point with every budget fully spent. At the optimum
/// an active price equals a utility of exactly this shape, so the start
/// lands within a small factor of the fixed point across the whole θ
/// range. This is also the natural scale for the step parameter: steps of
/// order `a·(P̄ - P^avg)` should not dwarf these values, which matters at
/// large θ where the prices live on a tiny scale.
pub fn initial_prices(scenario: &Scenario) -> DualVariables {
    initial_lambda(scenario)
}

fn initial_lambda(scenario: &Scenario) -> DualVariables {
    let eps = scenario.epsilon();
    let mean_spend: f64 = scenario.rrhs.iter().map(|r| r.p_avg * r.mean_cpnr).sum();
    DualVariables::new(
        scenario
            .rrhs
            .iter()
            .map(|r| {
                if eps > 0.0 {
                    eps * r.mean_cpnr * (-(eps + 1.0) * mean_spend.ln_1p()).exp()
                } else {
                    r.mean_cpnr / ((1.0 + mean_spend) * std::f64::consts::LN_2)
                }
            })
            .collect(),
    )
}

/// Prices this small are treated as inactive constraints by the
/// convergence test, and floored before entering the analytic forms.
const LAMBDA_EPS: f64 = 1e-9;

/// Window length and movement bound of the price-stability test.
const STABILITY_WINDOW: usize = 50;
const STABILITY_REL: f64 = 1e-3;

fn converged_at(trace: &[TraceRow], scenario: &Scenario, tol: f64, stderr: &[f64]) -> bool {
    let k = trace.len();
    if k < STABILITY_WINDOW + 1 {
        return false;
    }
    let row = &trace[k - 1];
    for (i, r) in scenario.rrhs.iter().enumerate() {
        // a stochastic estimate must actually resolve the tolerance band,
        // otherwise the test can fire on noise
        if 3.0 * stderr[i] > tol * r.p_avg {
            return false;
        }
        if row.lambda[i] > LAMBDA_EPS {
            // active price: the budget must be met tightly
            if (row.pbar[i] - r.p_avg).abs() > tol * r.p_avg {
                return false;
            }
        } else if row.pbar[i] > (1.0 + tol) * r.p_avg {
            // free price: the budget may be slack but not violated
            return false;
        }
    }
    let past = &trace[k - 1 - STABILITY_WINDOW];
    let dist: f64 = row
        .lambda
        .iter()
        .zip(&past.lambda)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = past
        .lambda
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(LAMBDA_EPS);
    dist / scale <= STABILITY_REL
}

enum Estimator<'a> {
    Online {
        sampler: FadingSampler,
        rng: rand_chacha::ChaCha12Rng,
        pbar: Vec<f64>,
        psq: Vec<f64>,
        tracked: usize,
        burn_in: usize,
    },
    BatchMc {
        sampler: FadingSampler,
        rng: rand_chacha::ChaCha12Rng,
        batch: usize,
    },
    Analytic,
    #[allow(clippy::type_complexity)]
    Custom(&'a mut dyn FnMut(usize, &DualVariables) -> Result<Vec<f64>>),
}

/// Floor for prices entering the closed forms: below this the policy is
/// peak-pinned to machine accuracy while the h-coefficients degenerate
/// (λ = 0 puts an infinity into the region classification).
const ANALYTIC_LAMBDA_FLOOR: f64 = 1e-9;

fn analytic_expectation(lambda: &DualVariables, scenario: &Scenario) -> Result<Vec<f64>> {
    let floored = DualVariables::new(
        lambda
            .lambda
            .iter()
            .map(|l| l.max(ANALYTIC_LAMBDA_FLOOR))
            .collect(),
    );
    match scenario.n_rrhs() {
        1 => Ok(vec![avg_power_single(floored.lambda[0], scenario)?]),
        2 => {
            let pair = avg_power_two(&floored, scenario)?;
            Ok(vec![pair.rrh1, pair.rrh2])
        }
        n => Err(Error::Config(format!(
            "analytic average power is only available for one or two RRHs (scenario has {n})"
        ))),
    }
}

fn run_loop<A>(
    scenario: &Scenario,
    config: &SolveConfig,
    mut estimator: Estimator<'_>,
    allocate: A,
) -> Result<SolveReport>
where
    A: Fn(&DualVariables, &FadingState, &Scenario) -> Vec<f64>,
{
    scenario.validate()?;
    if !(config.step_a > 0.0) {
        return Err(Error::Config(format!(
            "step parameter a = {} must be > 0",
            config.step_a
        )));
    }
    if config.max_iter == 0 {
        return Err(Error::Config("max_iter must be >= 1".into()));
    }
    let mut lambda = initial_lambda(scenario);
    let mut trace: Vec<TraceRow> = Vec::with_capacity(config.max_iter.min(1 << 20));
    let mut converged = false;
    let mut iterations = config.max_iter;
    let n = scenario.n_rrhs();
    for k in 1..=config.max_iter {
        let (pbar, stderr) = match &mut estimator {
            Estimator::Online {
                sampler,
                rng,
                pbar,
                psq,
                tracked,
                burn_in,
            } => {
                let state = sampler.sample(rng);
                let p = allocate(&lambda, &state, scenario);
                if *tracked == 0 && k <= *burn_in {
                    // discard: average restarts after the burn-in
                } else {
                    *tracked += 1;
                    online_track(pbar, *tracked, &p);
                    let sq: Vec<f64> = p.iter().map(|v| v * v).collect();
                    online_track(psq, *tracked, &sq);
                }
                if *tracked == 0 {
                    (p, vec![f64::INFINITY; n])
                } else {
                    let se = (0..n)
                        .map(|i| {
                            let var = (psq[i] - pbar[i] * pbar[i]).max(0.0);
                            (var / *tracked as f64).sqrt()
                        })
                        .collect();
                    (pbar.clone(), se)
                }
            }
            Estimator::BatchMc {
                sampler,
                rng,
                batch,
            } => {
                let mut acc = vec![0.0; n];
                let mut accsq = vec![0.0; n];
                for _ in 0..*batch {
                    let state = sampler.sample(rng);
                    let p = allocate(&lambda, &state, scenario);
                    for i in 0..n {
                        acc[i] += p[i];
                        accsq[i] += p[i] * p[i];
                    }
                }
                let bf = *batch as f64;
                let se = (0..n)
                    .map(|i| {
                        let mean = acc[i] / bf;
                        ((accsq[i] / bf - mean * mean).max(0.0) / bf).sqrt()
                    })
                    .collect();
                for a in acc.iter_mut() {
                    *a /= bf;
                }
                (acc, se)
            }
            Estimator::Analytic => (analytic_expectation(&lambda, scenario)?, vec![0.0; n]),
            Estimator::Custom(f) => (f(k, &lambda)?, vec![0.0; n]),
        };
        let d = subgradient(&pbar, scenario);
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        trace.push(TraceRow {
            iter: k,
            lambda: lambda.lambda.clone(),
            pbar,
            subgrad_norm: norm,
        });
        if converged_at(&trace, scenario, config.tol, &stderr) {
            converged = true;
            iterations = k;
            break;
        }
        lambda = update_duals(&lambda, &d, config.step_a, k);
    }
    Ok(SolveReport {
        lambda,
        iterations,
        converged,
        trace,
    })
}

fn make_estimator<'a>(scenario: &Scenario, config: &SolveConfig) -> Result<Estimator<'a>> {
    Ok(match config.mode {
        AvgPowerMode::Online => Estimator::Online {
            sampler: FadingSampler::new(scenario)?,
            rng: substream(config.seed, "dual-online"),
            pbar: vec![0.0; scenario.n_rrhs()],
            psq: vec![0.0; scenario.n_rrhs()],
            tracked: 0,
            burn_in: config.burn_in,
        },
        AvgPowerMode::BatchMc => {
            if config.batch_samples == 0 {
                return Err(Error::Config("batch_samples must be >= 1".into()));
            }
            Estimator::BatchMc {
                sampler: FadingSampler::new(scenario)?,
                rng: substream(config.seed, "dual-batch"),
                batch: config.batch_samples,
            }
        }
        AvgPowerMode::Analytic => {
            if scenario.n_rrhs() > 2 {
                return Err(Error::Config(format!(
                    "analytic average power is only available for one or two RRHs (scenario has {})",
                    scenario.n_rrhs()
                )));
            }
            Estimator::Analytic
        }
    })
}

/// Solve for the prices of the effective-capacity policy.
pub fn solve(scenario: &Scenario, config: &SolveConfig) -> Result<SolveReport> {
    if scenario.epsilon() == 0.0 {
        return solve_ergodic(scenario, config);
    }
    let estimator = make_estimator(scenario, config)?;
    run_loop(scenario, config, estimator, |l, st, sc| {
        allocate_state(l, st, sc).watts
    })
}

/// Solve for the prices of the ergodic-capacity policy (θ → 0 limit).
/// The closed-form expectation path is not available here.
pub fn solve_ergodic(scenario: &Scenario, config: &SolveConfig) -> Result<SolveReport> {
    if config.mode == AvgPowerMode::Analytic {
        return Err(Error::Config(
            "the ergodic policy has no analytic average-power mode; use online or batch-mc".into(),
        ));
    }
    let estimator = make_estimator(scenario, config)?;
    run_loop(scenario, config, estimator, |l, st, sc| {
        allocate_ergodic(l, st, sc).watts
    })
}

/// Prices of the delay-blind (ergodic) policy by a damped multiplicative
/// fixed point on a frozen set of fading draws: each sweep rescales every
/// price by (measured average power / budget)^0.8 until the budgets are
/// met *on those draws* to high accuracy. Deterministic given the seed,
/// and accurate to the Monte Carlo error of `n_states` samples — the
/// subgradient loop cannot certify that tightly from noisy estimates, and
/// a baseline with leaky budgets would flatter itself in comparisons.
pub fn ergodic_prices_crn(
    scenario: &Scenario,
    n_states: usize,
    seed: u64,
) -> Result<DualVariables> {
    scenario.validate()?;
    if n_states < 1000 {
        return Err(Error::Config(
            "ergodic_prices_crn needs >= 1000 states".into(),
        ));
    }
    let mut rng = substream(seed, "ergodic-crn");
    let states = crate::channel::sample_states(scenario, n_states, &mut rng)?;
    let mut lambda = initial_lambda(&scenario.with_theta(0.0));
    let n = scenario.n_rrhs();
    for _ in 0..60 {
        let mut mean = vec![0.0f64; n];
        for st in &states {
            let p = allocate_ergodic(&lambda, st, scenario);
            for i in 0..n {
                mean[i] += p.watts[i];
            }
        }
        let mut settled = true;
        for i in 0..n {
            mean[i] /= n_states as f64;
            let ratio = (mean[i] / scenario.rrhs[i].p_avg).clamp(0.2, 5.0);
            settled &= (ratio - 1.0).abs() < 1e-4;
            lambda.lambda[i] *= ratio.powf(0.8);
        }
        if settled {
            break;
        }
    }
    Ok(lambda)
}

/// Multiuser objective choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiuserObjective {
    /// Sum of per-user effective capacities.
    EffectiveCapacity,
    /// Sum of per-user ergodic capacities (delay-blind baseline).
    Ergodic,
}

/// Multiuser solver knobs.
#[derive(Debug, Clone)]
pub struct MultiuserConfig {
    pub step_a: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Weight of the fresh estimate in the κ fixed-point update.
    pub kappa_damping: f64,
    /// Iterations after which the running averages restart, so the κ/λ
    /// settling transient does not pollute the tracked expectations.
    pub burn_in: usize,
    pub objective: MultiuserObjective,
}

impl Default for MultiuserConfig {
    fn default() -> Self {
        MultiuserConfig {
            step_a: 1.0,
            max_iter: 100_000,
            tol: 0.02,
            seed: 0,
            kappa_damping: 0.5,
            burn_in: 500,
            objective: MultiuserObjective::EffectiveCapacity,
        }
    }
}

/// Multiuser solver outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiuserReport {
    pub lambda: DualVariables,
    /// Per-user κ at the fixed point (empty for the ergodic objective).
    pub kappa: Vec<f64>,
    /// Per-RRH running average power.
    pub avg_power: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Water-filling allocation of the multiuser ergodic baseline: each user
/// rides its cheapest RRH at level 1/(λ ln 2).
pub fn allocate_multiuser_ergodic(lambda: &[f64], alpha_users: &[Vec<f64>]) -> Vec<(usize, f64)> {
    alpha_users
        .iter()
        .map(|alpha| {
            let order = crate::allocator::sort_by_price_ratio(lambda, alpha);
            let best = order[0];
            let a = alpha[best];
            if a <= 0.0 {
                return (best, 0.0);
            }
            let lam = lambda[best].max(LAMBDA_EPS * 1e-3);
            let p = 1.0 / (lam * std::f64::consts::LN_2) - 1.0 / a;
            (best, p.max(0.0))
        })
        .collect()
}

/// Interleaved dual/κ iteration for the multiuser problem: per iteration,
/// draw the fading matrix, allocate each user on its cheapest RRH, track
/// the per-RRH running power and the per-user mean of Z_k^{-ε_k}, damp κ
/// toward T_f B θ_k E[Z_k^{-ε_k}], and step the prices.
pub fn solve_multiuser(
    scenario: &MultiuserScenario,
    config: &MultiuserConfig,
) -> Result<MultiuserReport> {
    scenario.validate()?;
    if !(config.step_a > 0.0) {
        return Err(Error::Config("step parameter must be > 0".into()));
    }
    if !(config.kappa_damping > 0.0 && config.kappa_damping <= 1.0) {
        return Err(Error::Config("kappa_damping must lie in (0, 1]".into()));
    }
    let n_rrh = scenario.n_rrhs();
    let n_users = scenario.n_users();
    let tfb = scenario.t_f * scenario.bandwidth;
    let mut rng = substream(config.seed, "multiuser");
    let samplers: Vec<Vec<rand_distr::Gamma<f64>>> = scenario
        .user_mean_cpnr
        .iter()
        .map(|row| {
            row.iter()
                .map(|ab| {
                    rand_distr::Gamma::new(scenario.m, ab / scenario.m).map_err(|e| {
                        Error::domain("solve_multiuser", format!("gamma distribution: {e}"))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let ec_objective = config.objective == MultiuserObjective::EffectiveCapacity;
    // Operating-point guesses: each user takes a 1/K share of every
    // budget, giving a typical SINR term Z̄_k and from it the κ fixed
    // point and the marginal-utility price scale ᾱ/(Z̄ ln 2).
    let z_typical: Vec<f64> = (0..n_users)
        .map(|k| {
            1.0 + scenario
                .p_avg
                .iter()
                .zip(&scenario.user_mean_cpnr[k])
                .map(|(p, a)| p * a)
                .sum::<f64>()
                / n_users as f64
        })
        .collect();
    let mut kappa: Vec<f64> = (0..n_users)
        .map(|k| {
            tfb * scenario.user_theta[k]
                * (-scenario.epsilon_user(k) * (z_typical[k] - 1.0).ln_1p()).exp()
        })
        .collect();
    let mut zbar = vec![1.0f64; n_users];
    let mut lambda = DualVariables::new(
        (0..n_rrh)
            .map(|i| {
                (0..n_users)
                    .map(|k| {
                        scenario.user_mean_cpnr[k][i] / (z_typical[k] * std::f64::consts::LN_2)
                    })
                    .sum::<f64>()
                    / n_users as f64
            })
            .collect(),
    );
    let mut pbar = vec![0.0f64; n_rrh];
    let mut psq = vec![0.0f64; n_rrh];
    let mut tracked = 0usize;
    let mut lambda_hist: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;
    let mut iterations = config.max_iter;
    for k in 1..=config.max_iter {
        use rand_distr::Distribution;
        let alpha_users: Vec<Vec<f64>> = samplers
            .iter()
            .map(|row| row.iter().map(|d| d.sample(&mut rng)).collect())
            .collect();
        let lambda_floored =
            DualVariables::new(lambda.lambda.iter().map(|l| l.max(1e-12)).collect());
        let assignment = if ec_objective {
            allocate_multiuser(&lambda_floored.lambda, &kappa, &alpha_users, scenario)?
        } else {
            allocate_multiuser_ergodic(&lambda_floored.lambda, &alpha_users)
        };
        if k == config.burn_in {
            // the settling transient is over; restart the averages
            tracked = 0;
            pbar.iter_mut().for_each(|p| *p = 0.0);
            psq.iter_mut().for_each(|p| *p = 0.0);
            zbar.iter_mut().for_each(|z| *z = 1.0);
        }
        tracked += 1;
        let mut p_state = vec![0.0f64; n_rrh];
        for (user, &(rrh, p)) in assignment.iter().enumerate() {
            p_state[rrh] += p;
            if ec_objective {
                let eps = scenario.epsilon_user(user);
                let zk = (-eps * (p * alpha_users[user][rrh]).ln_1p()).exp();
                online_track(std::slice::from_mut(&mut zbar[user]), tracked, &[zk]);
            }
        }
        online_track(&mut pbar, tracked, &p_state);
        let sq: Vec<f64> = p_state.iter().map(|p| p * p).collect();
        online_track(&mut psq, tracked, &sq);
        if ec_objective {
            for user in 0..n_users {
                let fresh = tfb * scenario.user_theta[user] * zbar[user];
                kappa[user] =
                    (1.0 - config.kappa_damping) * kappa[user] + config.kappa_damping * fresh;
            }
        }
        let d: Vec<f64> = pbar
            .iter()
            .zip(&scenario.p_avg)
            .map(|(p, avg)| p - avg)
            .collect();
        lambda_hist.push(lambda.lambda.clone());
        // convergence: budgets met with the averaging deep enough to
        // resolve the tolerance (three standard errors of the tracked
        // mean inside it), and the price trajectory settled. All prices
        // stay active here: with no peak limit a free RRH would be
        // pumped without bound.
        if k > STABILITY_WINDOW && k > config.burn_in + STABILITY_WINDOW {
            let resolved = (0..n_rrh).all(|i| {
                let var = (psq[i] - pbar[i] * pbar[i]).max(0.0);
                3.0 * (var / tracked as f64).sqrt() <= config.tol * scenario.p_avg[i]
            });
            let ok_power = pbar
                .iter()
                .zip(&scenario.p_avg)
                .all(|(p, avg)| (p - avg).abs() <= config.tol * avg);
            let past = &lambda_hist[k - 1 - STABILITY_WINDOW];
            let dist: f64 = lambda
                .lambda
                .iter()
                .zip(past)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let scale = past.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            if resolved && ok_power && dist / scale <= STABILITY_REL {
                converged = true;
                iterations = k;
                break;
            }
        }
        lambda = update_duals(&lambda, &d, config.step_a, k);
    }
    Ok(MultiuserReport {
        lambda,
        kappa: if ec_objective { kappa } else { Vec::new() },
        avg_power: pbar,
        iterations,
        converged,
    })
}

/// Dual loop with a caller-supplied expectation estimator; used by tests
/// to drive the loop with frozen estimates.
pub fn solve_with_estimator(
    scenario: &Scenario,
    config: &SolveConfig,
    estimate: &mut dyn FnMut(usize, &DualVariables) -> Result<Vec<f64>>,
) -> Result<SolveReport> {
    run_loop(
        scenario,
        config,
        Estimator::Custom(estimate),
        |l, st, sc| allocate_state(l, st, sc).watts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::RrhSpec;
    use approx::assert_relative_eq;

    fn two_rrh_reference(theta: f64) -> Scenario {
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
    fn subgradient_is_componentwise_difference() {
        let s = two_rrh_reference(0.05);
        assert_eq!(subgradient(&[0.5, 0.5], &s), vec![0.0, 0.0]);
        assert_eq!(subgradient(&[0.0, 0.5], &s), vec![-0.5, 0.0]);
        let d = subgradient(&[0.7, 0.1], &s);
        assert_relative_eq!(d[0], 0.2, max_relative = 1e-14);
        assert_relative_eq!(d[1], -0.4, max_relative = 1e-14);
    }

    #[test]
    fn update_examples() {
        let lam = DualVariables::new(vec![1.0]);
        assert_eq!(update_duals(&lam, &[0.0], 1.0, 3).lambda, vec![1.0]);
        // projection at the boundary
        let lam = DualVariables::new(vec![0.1]);
        assert_eq!(update_duals(&lam, &[-0.5], 1.0, 1).lambda, vec![0.0]);
        let lam = DualVariables::new(vec![1.0]);
        assert_relative_eq!(
            update_duals(&lam, &[0.2], 1.0, 4).lambda[0],
            1.05,
            max_relative = 1e-15
        );
    }

    #[test]
    fn online_tracking_is_the_batch_mean() {
        let mut rng = substream(1, "track");
        use rand::Rng;
        let mut pbar = vec![0.0f64; 3];
        let mut all: Vec<Vec<f64>> = Vec::new();
        for k in 1..=1000 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            online_track(&mut pbar, k, &p);
            all.push(p);
        }
        for i in 0..3 {
            let batch: f64 = all.iter().map(|p| p[i]).sum::<f64>() / 1000.0;
            assert_relative_eq!(pbar[i], batch, max_relative = 1e-12);
        }
        // constant stream fixes the mean immediately
        let mut pbar = vec![0.0f64];
        for k in 1..=10 {
            online_track(&mut pbar, k, &[0.4]);
            assert_relative_eq!(pbar[0], 0.4, max_relative = 1e-15);
        }
    }

    #[test]
    fn slack_budgets_free_the_prices() {
        // peak spend never exceeds the budget: the optimum price is zero
        // and the iterates decay toward it until the budget is met within
        // tolerance (the diminishing steps freeze the tail of the decay)
        let s = Scenario::new(
            vec![RrhSpec {
                mean_cpnr: 2.0,
                p_avg: 1.0,
                p_peak: 1.0,
            }],
            2.0,
            0.1e-3,
            200e3,
            0.05,
        )
        .unwrap();
        let report = solve(
            &s,
            &SolveConfig {
                mode: AvgPowerMode::Analytic,
                max_iter: 3000,
                ..SolveConfig::default()
            },
        )
        .unwrap();
        assert!(report.converged);
        assert!(report.lambda.lambda[0] < report.trace[0].lambda[0] / 2.0);
        let pbar = report.final_pbar()[0];
        assert!(pbar <= 1.0 + 1e-9 && pbar >= 0.97, "pbar {pbar}");
    }

    #[test]
    fn analytic_mode_rejects_three_rrhs() {
        let mut s = two_rrh_reference(0.05);
        s.rrhs.push(RrhSpec {
            mean_cpnr: 1.0,
            p_avg: 0.5,
            p_peak: 1.0,
        });
        let err = solve(
            &s,
            &SolveConfig {
                mode: AvgPowerMode::Analytic,
                ..SolveConfig::default()
            },
        );
        assert!(err.is_err());
    }

    #[test]
    fn analytic_solve_meets_the_budgets() {
        let report = solve(
            &two_rrh_reference(0.05),
            &SolveConfig {
                mode: AvgPowerMode::Analytic,
                ..SolveConfig::default()
            },
        )
        .unwrap();
        assert!(
            report.converged,
            "no convergence in {} iters",
            report.iterations
        );
        let pbar = report.final_pbar();
        assert!((pbar[0] - 0.5).abs() <= 0.02 * 0.5, "pbar {pbar:?}");
        assert!((pbar[1] - 0.5).abs() <= 0.02 * 0.5, "pbar {pbar:?}");
    }

    #[test]
    fn theta_zero_routes_to_the_water_filling_policy() {
        let s = two_rrh_reference(0.0);
        let report = solve(
            &s,
            &SolveConfig {
                mode: AvgPowerMode::Online,
                max_iter: 60_000,
                tol: 0.05,
                seed: 23,
                ..SolveConfig::default()
            },
        )
        .unwrap();
        assert!(report.converged, "stopped at {}", report.iterations);
        for (p, r) in report.final_pbar().iter().zip(&s.rrhs) {
            assert!((p - r.p_avg).abs() <= 0.05 * r.p_avg, "pbar {p}");
        }
        // frozen-draw fixed point lands in the same neighborhood
        let crn = ergodic_prices_crn(&s, 100_000, 23).unwrap();
        for (a, b) in report.lambda.lambda.iter().zip(&crn.lambda) {
            assert!((a - b).abs() / b < 0.2, "online {a} vs crn {b}");
        }
    }

    #[test]
    fn deterministic_replay() {
        let cfg = SolveConfig {
            mode: AvgPowerMode::BatchMc,
            batch_samples: 200,
            max_iter: 300,
            seed: 77,
            ..SolveConfig::default()
        };
        let a = solve(&two_rrh_reference(0.05), &cfg).unwrap();
        let b = solve(&two_rrh_reference(0.05), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_csv_shape() {
        let report = solve(
            &two_rrh_reference(0.05),
            &SolveConfig {
                mode: AvgPowerMode::Analytic,
                max_iter: 60,
                ..SolveConfig::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        report.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,lambda_1,lambda_2,pbar_1,pbar_2,subgrad_norm"
        );
        assert_eq!(text.lines().count(), report.trace.len() + 1);
    }
}
