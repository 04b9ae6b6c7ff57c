//! Effective-capacity estimation, delay-outage evaluation, and the
//! comparison baselines.
//!
//! The effective capacity of a policy is
//! EC(θ) = -(1/θ) ln E[e^{-θ R}], with R = T_f B log2(1 + Σ p_i α_i) the
//! per-frame service in bits. The inner expectation is estimated over
//! fading draws through a log-sum-exp so that large θ cannot underflow
//! the average.

use crate::allocator::{
    allocate_ergodic, allocate_single, allocate_state, channel_inversion_policy, DualVariables,
    PowerVector,
};
use crate::analytics::single_rrh_dual;
use crate::channel::{FadingState, MultiuserScenario, Scenario};
use crate::error::{Error, Result};

/// Monte Carlo effective-capacity estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EcEstimate {
    /// Effective capacity in bits per frame.
    pub ec_bits_per_frame: f64,
    /// The same normalized by T_f B, in bits/s/Hz.
    pub normalized_ec: f64,
    /// Delta-method standard error of `ec_bits_per_frame`.
    pub std_error: f64,
    pub samples: usize,
}

impl EcEstimate {
    /// Arrival rate μ = EC / T_f in bits per second.
    pub fn mu_bits_per_s(&self, scenario: &Scenario) -> f64 {
        self.ec_bits_per_frame / scenario.t_f
    }
}

/// Delay-outage inputs: total budget and its non-queueing parts.
#[derive(Debug, Clone, PartialEq)]
pub struct OutageSpec {
    /// Maximum tolerable delay, seconds.
    pub d_max: f64,
    /// Transmission delay, seconds.
    pub d_t: f64,
    /// Fronthaul delay, seconds.
    pub d_f: f64,
    /// Probability that the buffer is non-empty (1 is the conservative
    /// bound; the exact value needs an external queueing analysis).
    pub epsilon_prefactor: f64,
}

impl Default for OutageSpec {
    fn default() -> Self {
        OutageSpec {
            d_max: 1e-3,
            d_t: 0.1e-3,
            d_f: 0.1e-3,
            epsilon_prefactor: 1.0,
        }
    }
}

impl OutageSpec {
    /// Queueing-delay budget D_q = D_max - D_T - D_F.
    pub fn d_q(&self) -> f64 {
        self.d_max - self.d_t - self.d_f
    }
}

/// Delay-violation probability ε e^{-θ μ D_q}, clamped to [0, 1].
pub fn delay_outage(theta: f64, mu_bits_per_s: f64, spec: &OutageSpec) -> Result<f64> {
    let d_q = spec.d_q();
    if !(d_q > 0.0) {
        return Err(Error::domain(
            "delay_outage",
            format!("queueing budget d_q = {d_q} must be > 0"),
        ));
    }
    if !(mu_bits_per_s > 0.0) {
        return Err(Error::domain(
            "delay_outage",
            format!("arrival rate mu = {mu_bits_per_s} must be > 0"),
        ));
    }
    if !(spec.epsilon_prefactor > 0.0 && spec.epsilon_prefactor <= 1.0) {
        return Err(Error::domain(
            "delay_outage",
            "epsilon prefactor must lie in (0, 1]",
        ));
    }
    Ok((spec.epsilon_prefactor * (-theta * mu_bits_per_s * d_q).exp()).clamp(0.0, 1.0))
}

/// Estimate the effective capacity of `policy` on the given fading states
/// (common-random-number evaluation).
pub fn estimate_ec_on<F>(
    policy: F,
    scenario: &Scenario,
    states: &[FadingState],
) -> Result<EcEstimate>
where
    F: Fn(&FadingState) -> PowerVector,
{
    if states.is_empty() {
        return Err(Error::domain("estimate_ec", "no fading states supplied"));
    }
    let eps = scenario.epsilon();
    let tfb = scenario.t_f * scenario.bandwidth;
    let n = states.len();
    if eps == 0.0 {
        // delay-tolerant limit: the mean service rate (ergodic capacity)
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for st in states {
            let p = policy(st);
            let gain: f64 = p.watts.iter().zip(&st.alpha).map(|(p, a)| p * a).sum();
            let r = tfb * gain.ln_1p() / std::f64::consts::LN_2;
            sum += r;
            sumsq += r * r;
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        return Ok(EcEstimate {
            ec_bits_per_frame: mean,
            normalized_ec: mean / tfb,
            std_error: (var / n as f64).sqrt(),
            samples: n,
        });
    }
    // x_s = -ε ln(1 + Σ p α) = -θ R_s; average e^{x_s} by log-sum-exp
    let mut xs = Vec::with_capacity(n);
    let mut x_max = f64::NEG_INFINITY;
    for st in states {
        let p = policy(st);
        let gain: f64 = p.watts.iter().zip(&st.alpha).map(|(p, a)| p * a).sum();
        let x = -eps * gain.ln_1p();
        x_max = x_max.max(x);
        xs.push(x);
    }
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for x in &xs {
        let y = (x - x_max).exp();
        sum += y;
        sumsq += y * y;
    }
    let mean_y = sum / n as f64;
    let var_y = (sumsq / n as f64 - mean_y * mean_y).max(0.0);
    let theta = eps * std::f64::consts::LN_2 / tfb;
    let ln_mean = x_max + mean_y.ln();
    let ec = -ln_mean / theta;
    let rel_se = (var_y / n as f64).sqrt() / mean_y;
    Ok(EcEstimate {
        ec_bits_per_frame: ec,
        normalized_ec: ec / tfb,
        std_error: rel_se / theta,
        samples: n,
    })
}

/// Estimate the effective capacity of `policy` over `n_samples` seeded
/// fading draws (at least 1000; fewer draws make the log-mean estimator
/// untrustworthy at large θ).
pub fn estimate_ec<F>(
    policy: F,
    scenario: &Scenario,
    n_samples: usize,
    seed: u64,
) -> Result<EcEstimate>
where
    F: Fn(&FadingState) -> PowerVector,
{
    if n_samples < 1000 {
        return Err(Error::domain(
            "estimate_ec",
            format!("n_samples = {n_samples} must be >= 1000"),
        ));
    }
    let mut rng = crate::channel::substream(seed, "ec-estimate");
    let states = crate::channel::sample_states(scenario, n_samples, &mut rng)?;
    estimate_ec_on(policy, scenario, &states)
}

/// Per-RRH Monte Carlo average power (mean, standard error) of a policy
/// on the given states.
pub fn mc_average_power_on<F>(
    policy: F,
    scenario: &Scenario,
    states: &[FadingState],
) -> Vec<(f64, f64)>
where
    F: Fn(&FadingState) -> PowerVector,
{
    let n = scenario.n_rrhs();
    let mut sum = vec![0.0f64; n];
    let mut sumsq = vec![0.0f64; n];
    for st in states {
        let p = policy(st);
        for i in 0..n {
            sum[i] += p.watts[i];
            sumsq[i] += p.watts[i] * p.watts[i];
        }
    }
    let count = states.len() as f64;
    (0..n)
        .map(|i| {
            let mean = sum[i] / count;
            let var = (sumsq[i] / count - mean * mean).max(0.0);
            (mean, (var / count).sqrt())
        })
        .collect()
}

/// The comparison policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Only the strongest-mean-CPNR RRH serves, with its own optimal
    /// single-link adaptation.
    Nearest,
    /// Every RRH transmits its average budget in every frame.
    Constant,
    /// Each RRH adapts on its own channel, ignoring the others.
    Independent,
    /// Delay-blind ergodic-capacity allocation.
    Ergodic,
    /// Fixed-rate channel inversion (zero-delay limit; no peak limit).
    Inversion,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(BaselineKind::Nearest),
            "constant" => Ok(BaselineKind::Constant),
            "independent" => Ok(BaselineKind::Independent),
            "ergodic" => Ok(BaselineKind::Ergodic),
            "inversion" => Ok(BaselineKind::Inversion),
            other => Err(Error::Config(format!("unknown baseline policy {other:?}"))),
        }
    }
}

/// A ready-to-evaluate power policy.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// The delay-QoS-aware optimum at the given prices.
    Proposed {
        lambda: DualVariables,
    },
    /// Ergodic-capacity optimum at the given prices.
    Ergodic {
        lambda: DualVariables,
    },
    Constant,
    Nearest {
        rrh: usize,
        lambda1: f64,
    },
    Independent {
        lambdas: Vec<f64>,
    },
    Inversion {
        beta: Vec<f64>,
    },
}

impl Policy {
    pub fn label(&self) -> &'static str {
        match self {
            Policy::Proposed { .. } => "proposed",
            Policy::Ergodic { .. } => "ergodic",
            Policy::Constant => "constant",
            Policy::Nearest { .. } => "nearest",
            Policy::Independent { .. } => "independent",
            Policy::Inversion { .. } => "inversion",
        }
    }

    /// Powers for one fading state under this policy's own constraint set.
    pub fn allocate(&self, state: &FadingState, scenario: &Scenario) -> PowerVector {
        match self {
            Policy::Proposed { lambda } => allocate_state(lambda, state, scenario),
            Policy::Ergodic { lambda } => allocate_ergodic(lambda, state, scenario),
            Policy::Constant => PowerVector {
                watts: scenario.avg_powers(),
            },
            Policy::Nearest { rrh, lambda1 } => {
                let mut watts = vec![0.0; scenario.n_rrhs()];
                let sub = scenario.single(*rrh);
                watts[*rrh] = allocate_single(*lambda1, state.alpha[*rrh], &sub);
                PowerVector { watts }
            }
            Policy::Independent { lambdas } => {
                let watts = (0..scenario.n_rrhs())
                    .map(|i| {
                        let sub = scenario.single(i);
                        allocate_single(lambdas[i], state.alpha[i], &sub)
                    })
                    .collect();
                PowerVector { watts }
            }
            Policy::Inversion { beta } => {
                let watts = beta
                    .iter()
                    .zip(&state.alpha)
                    .map(|(b, a)| if *a > 0.0 { b / a } else { 0.0 })
                    .collect();
                PowerVector { watts }
            }
        }
    }
}

/// Build a baseline policy. `Ergodic` expects its precomputed prices (from
/// [`crate::dual_solver::solve_ergodic`]); the single-link baselines find
/// their own prices by bisecting the closed-form average power.
pub fn baseline_policy(
    kind: BaselineKind,
    scenario: &Scenario,
    precomputed: Option<&DualVariables>,
) -> Result<Policy> {
    scenario.validate()?;
    match kind {
        BaselineKind::Constant => Ok(Policy::Constant),
        BaselineKind::Inversion => {
            let (beta, _ec) = channel_inversion_policy(scenario);
            Ok(Policy::Inversion { beta })
        }
        BaselineKind::Nearest => {
            let rrh = scenario
                .rrhs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.mean_cpnr.total_cmp(&b.1.mean_cpnr))
                .map(|(i, _)| i)
                .expect("validated scenario has RRHs");
            let lambda1 = single_rrh_dual(&scenario.single(rrh))?;
            Ok(Policy::Nearest { rrh, lambda1 })
        }
        BaselineKind::Independent => {
            let lambdas = (0..scenario.n_rrhs())
                .map(|i| single_rrh_dual(&scenario.single(i)))
                .collect::<Result<Vec<f64>>>()?;
            Ok(Policy::Independent { lambdas })
        }
        BaselineKind::Ergodic => {
            let lambda = precomputed.ok_or_else(|| {
                Error::Config("the ergodic baseline needs precomputed prices".into())
            })?;
            Ok(Policy::Ergodic {
                lambda: lambda.clone(),
            })
        }
    }
}

/// Per-user normalized effective capacities and their sum for a multiuser
/// assignment rule, evaluated on common fading draws.
pub fn multiuser_sum_ec<F>(
    scenario: &MultiuserScenario,
    assign: F,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&[Vec<f64>]) -> Result<Vec<(usize, f64)>>,
{
    scenario.validate()?;
    if n_samples < 1000 {
        return Err(Error::domain(
            "multiuser_sum_ec",
            "n_samples must be >= 1000",
        ));
    }
    use rand_distr::Distribution;
    let mut rng = crate::channel::substream(seed, "multiuser-ec");
    let samplers: Vec<Vec<rand_distr::Gamma<f64>>> = scenario
        .user_mean_cpnr
        .iter()
        .map(|row| {
            row.iter()
                .map(|ab| {
                    rand_distr::Gamma::new(scenario.m, ab / scenario.m)
                        .map_err(|e| Error::domain("multiuser_sum_ec", format!("{e}")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n_users = scenario.n_users();
    let mut x_all: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples); n_users];
    for _ in 0..n_samples {
        let alpha: Vec<Vec<f64>> = samplers
            .iter()
            .map(|row| row.iter().map(|d| d.sample(&mut rng)).collect())
            .collect();
        let assignment = assign(&alpha)?;
        for (user, &(rrh, p)) in assignment.iter().enumerate() {
            let eps = scenario.epsilon_user(user);
            x_all[user].push(-eps * (p * alpha[user][rrh]).ln_1p());
        }
    }
    let mut per_user = Vec::with_capacity(n_users);
    for (user, xs) in x_all.iter().enumerate() {
        let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean_y: f64 = xs.iter().map(|x| (x - x_max).exp()).sum::<f64>() / xs.len() as f64;
        let eps = scenario.epsilon_user(user);
        per_user.push(-(x_max + mean_y.ln()) / (eps * std::f64::consts::LN_2));
    }
    Ok((per_user.iter().sum(), per_user))
}
