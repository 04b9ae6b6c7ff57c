//! Batch experiment front-end.
//!
//! Experiments are described by a TOML config (see the repository README
//! and `book/src/cli.md` for the schema) and emit CSV tables with a
//! provenance comment carrying the config hash and seed, so a rerun with
//! the same inputs is byte-identical. Subcommands:
//!
//! - `solve`: dual-price convergence trace;
//! - `sweep`: normalized EC versus θ for a set of policies;
//! - `audit`: closed-form average powers against Monte Carlo;
//! - `outage`: delay-outage probability versus θ;
//! - `multiuser`: per-user policies under shared average-power budgets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocator::DualVariables;
use crate::analytics::{avg_power_single, avg_power_two_detailed, BranchEval};
use crate::channel::{
    derive_seed, mean_cpnr_from_geometry, sample_states, substream, MultiuserScenario, Scenario,
};
use crate::dual_solver::{
    ergodic_prices_crn, solve, solve_multiuser, AvgPowerMode, MultiuserConfig, MultiuserObjective,
    SolveConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{
    baseline_policy, delay_outage, estimate_ec_on, mc_average_power_on, BaselineKind, EcEstimate,
    OutageSpec, Policy,
};

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

/// One RRH in the config: either a direct mean-CPNR override (canonical)
/// or link geometry. The override wins when both are present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RrhConfig {
    pub mean_cpnr: Option<f64>,
    pub distance_km: Option<f64>,
    #[serde(default)]
    pub shadow_db: f64,
    pub p_avg: f64,
    pub p_peak: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub m: f64,
    /// Frame length in seconds.
    pub t_f: f64,
    /// Bandwidth in hertz.
    pub bandwidth: f64,
    pub theta: f64,
    /// Noise power spectral density for the geometry path, dBm/Hz.
    #[serde(default = "default_noise_density")]
    pub noise_dbm_per_hz: f64,
    pub rrhs: Vec<RrhConfig>,
}

fn default_noise_density() -> f64 {
    -174.0
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario> {
        let rrhs = self
            .rrhs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mean_cpnr = match (r.mean_cpnr, r.distance_km) {
                    (Some(a), _) => a,
                    (None, Some(d)) => mean_cpnr_from_geometry(
                        d,
                        r.shadow_db,
                        self.noise_dbm_per_hz,
                        self.bandwidth,
                    )?,
                    (None, None) => {
                        return Err(Error::Config(format!(
                            "RRH {i}: set mean_cpnr or distance_km"
                        )))
                    }
                };
                Ok(crate::channel::RrhSpec {
                    mean_cpnr,
                    p_avg: r.p_avg,
                    p_peak: r.p_peak,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Scenario::new(rrhs, self.m, self.t_f, self.bandwidth, self.theta)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveSection {
    pub a: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub mode: String,
    /// Batch size per iteration in batch-mc mode.
    pub samples: usize,
    pub burn_in: usize,
    pub out: Option<PathBuf>,
}

impl Default for SolveSection {
    fn default() -> Self {
        SolveSection {
            a: 1.0,
            max_iter: 2000,
            tol: 0.02,
            seed: 0,
            mode: "batch-mc".into(),
            samples: 1000,
            burn_in: 0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub thetas: Vec<f64>,
    pub policies: Vec<String>,
    /// Fading samples per (θ, policy) estimate.
    pub samples: usize,
    pub seed: u64,
    pub a: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub mode: String,
    pub solver_samples: usize,
    pub d_max: f64,
    pub d_t: f64,
    pub d_f: f64,
    pub epsilon_prefactor: f64,
    pub out: Option<PathBuf>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            thetas: Vec::new(),
            policies: vec![
                "proposed".into(),
                "nearest".into(),
                "constant".into(),
                "independent".into(),
                "ergodic".into(),
                "inversion".into(),
            ],
            samples: 100_000,
            seed: 0,
            a: 1.0,
            max_iter: 2000,
            tol: 0.02,
            mode: "batch-mc".into(),
            solver_samples: 1000,
            d_max: 1e-3,
            d_t: 0.1e-3,
            d_f: 0.1e-3,
            epsilon_prefactor: 1.0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditSection {
    /// Number of random price draws (0 picks 50 for one RRH, 20 for two).
    pub draws: usize,
    pub samples: usize,
    pub seed: u64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub out: Option<PathBuf>,
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection {
            draws: 0,
            samples: 1_000_000,
            seed: 0,
            lambda_lo: 0.02,
            lambda_hi: 2.0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OutageSection {
    pub thetas: Vec<f64>,
    /// Delay budgets in seconds.
    pub d_max: Vec<f64>,
    pub d_t: f64,
    pub d_f: f64,
    pub epsilon_prefactor: f64,
    pub samples: usize,
    pub seed: u64,
    pub a: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub mode: String,
    pub solver_samples: usize,
    pub out: Option<PathBuf>,
}

impl Default for OutageSection {
    fn default() -> Self {
        OutageSection {
            thetas: Vec::new(),
            d_max: vec![1e-3],
            d_t: 0.1e-3,
            d_f: 0.1e-3,
            epsilon_prefactor: 1.0,
            samples: 100_000,
            seed: 0,
            a: 1.0,
            max_iter: 2000,
            tol: 0.02,
            mode: "batch-mc".into(),
            solver_samples: 1000,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiuserSection {
    pub user_theta: Vec<f64>,
    /// Mean CPNR rows, one per user (entries per RRH).
    pub user_mean_cpnr: Vec<Vec<f64>>,
    /// "effective-capacity" or "ergodic".
    pub objective: String,
    pub a: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub kappa_damping: f64,
    /// Samples for the final EC evaluation.
    pub samples: usize,
    pub out: Option<PathBuf>,
}

impl Default for MultiuserSection {
    fn default() -> Self {
        MultiuserSection {
            user_theta: Vec::new(),
            user_mean_cpnr: Vec::new(),
            objective: "effective-capacity".into(),
            a: 1.0,
            max_iter: 100_000,
            tol: 0.02,
            seed: 0,
            kappa_damping: 0.5,
            samples: 200_000,
            out: None,
        }
    }
}

/// Top-level config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigFile {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub outage: OutageSection,
    #[serde(default)]
    pub multiuser: MultiuserSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Command-line overrides applied on top of the relevant config section.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub step_a: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub mode: Option<String>,
    pub out: Option<PathBuf>,
}

/// What a command produced.
#[derive(Debug)]
pub struct RunSummary {
    pub out_path: PathBuf,
    pub rows: usize,
    pub notes: Vec<String>,
}

// ---------------------------------------------------------------------------
// CSV plumbing
// ---------------------------------------------------------------------------

fn config_hash<S: Serialize>(command: &str, scenario: &ScenarioConfig, section: &S) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(toml::to_string(scenario).unwrap_or_default().as_bytes());
    h.update(toml::to_string(section).unwrap_or_default().as_bytes());
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn provenance(command: &str, hash: &str, seed: u64) -> String {
    format!("# cran-ec {command} config_hash={hash} seed={seed}\n")
}

fn write_output(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, content)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn resolved_solve_config(
    section: &SolveSection,
    ov: &Overrides,
) -> Result<(SolveConfig, SolveSection)> {
    let mut sec = section.clone();
    if let Some(s) = ov.seed {
        sec.seed = s;
    }
    if let Some(s) = ov.samples {
        sec.samples = s;
    }
    if let Some(a) = ov.step_a {
        sec.a = a;
    }
    if let Some(m) = ov.max_iter {
        sec.max_iter = m;
    }
    if let Some(t) = ov.tol {
        sec.tol = t;
    }
    if let Some(m) = &ov.mode {
        sec.mode = m.clone();
    }
    if let Some(o) = &ov.out {
        sec.out = Some(o.clone());
    }
    let mode: AvgPowerMode = sec.mode.parse()?;
    Ok((
        SolveConfig {
            step_a: sec.a,
            max_iter: sec.max_iter,
            tol: sec.tol,
            seed: sec.seed,
            mode,
            batch_samples: sec.samples,
            burn_in: sec.burn_in,
        },
        sec,
    ))
}

pub fn run_solve(config: &ConfigFile, ov: &Overrides) -> Result<RunSummary> {
    let scenario = config.scenario.build()?;
    let (solve_cfg, sec) = resolved_solve_config(&config.solve, ov)?;
    let report = solve(&scenario, &solve_cfg)?;
    let mut hash_sec = sec.clone();
    hash_sec.out = None;
    let hash = config_hash("solve", &config.scenario, &hash_sec);
    let mut out = provenance("solve", &hash, sec.seed);
    let _ = writeln!(
        out,
        "# mode={} step_a={} converged={} iterations={}",
        solve_cfg.mode.label(),
        sec.a,
        report.converged,
        report.iterations
    );
    let _ = writeln!(out, "# final_lambda={}", join(&report.lambda.lambda, ";"));
    let _ = writeln!(out, "# final_pbar={}", join(report.final_pbar(), ";"));
    let mut buf = Vec::new();
    report
        .write_trace_csv(&mut buf)
        .expect("writing to memory cannot fail");
    out.push_str(&String::from_utf8(buf).expect("trace CSV is UTF-8"));
    let path = sec.out.unwrap_or_else(|| PathBuf::from("solve_trace.csv"));
    write_output(&path, &out)?;
    Ok(RunSummary {
        out_path: path,
        rows: report.trace.len(),
        notes: vec![format!(
            "converged={} after {} iterations, lambda=[{}]",
            report.converged,
            report.iterations,
            join(&report.lambda.lambda, ", ")
        )],
    })
}

fn join(vals: &[f64], sep: &str) -> String {
    vals.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepCell {
    theta: f64,
    policy: Policy,
    ec: EcEstimate,
    pbar: Vec<(f64, f64)>,
    outage: f64,
    warning: Option<String>,
}

fn policy_for(
    name: &str,
    scenario_theta: &Scenario,
    erg_lambda: &DualVariables,
    solver: &SolveConfig,
    cell_seed: u64,
) -> Result<(Policy, Option<String>)> {
    if name == "proposed" {
        let mut cfg = solver.clone();
        cfg.seed = cell_seed;
        if cfg.mode == AvgPowerMode::Analytic && scenario_theta.n_rrhs() > 2 {
            return Err(Error::Config(
                "analytic mode in a sweep needs one or two RRHs; use batch-mc or online".into(),
            ));
        }
        let report = solve(scenario_theta, &cfg)?;
        let warning = if report.converged {
            None
        } else {
            Some(format!(
                "proposed duals not converged at theta={} after {} iterations",
                scenario_theta.theta, report.iterations
            ))
        };
        return Ok((
            Policy::Proposed {
                lambda: report.lambda,
            },
            warning,
        ));
    }
    let kind: BaselineKind = name.parse()?;
    Ok((
        baseline_policy(kind, scenario_theta, Some(erg_lambda))?,
        None,
    ))
}

pub fn run_sweep(config: &ConfigFile, ov: &Overrides) -> Result<RunSummary> {
    let scenario = config.scenario.build()?;
    let mut sec = config.sweep.clone();
    if let Some(s) = ov.seed {
        sec.seed = s;
    }
    if let Some(s) = ov.samples {
        sec.samples = s;
    }
    if let Some(a) = ov.step_a {
        sec.a = a;
    }
    if let Some(m) = ov.max_iter {
        sec.max_iter = m;
    }
    if let Some(t) = ov.tol {
        sec.tol = t;
    }
    if let Some(m) = &ov.mode {
        sec.mode = m.clone();
    }
    if let Some(o) = &ov.out {
        sec.out = Some(o.clone());
    }
    if sec.thetas.is_empty() {
        return Err(Error::Config("sweep.thetas must not be empty".into()));
    }
    if sec.policies.is_empty() {
        return Err(Error::Config("sweep.policies must not be empty".into()));
    }
    let mode: AvgPowerMode = sec.mode.parse()?;
    let solver = SolveConfig {
        step_a: sec.a,
        max_iter: sec.max_iter,
        tol: sec.tol,
        seed: sec.seed,
        mode,
        batch_samples: sec.solver_samples,
        burn_in: 0,
    };
    // θ-independent prices for the delay-blind baseline, computed once
    // on frozen draws so its budgets hold tightly (a baseline that leaks
    // power flatters itself in the comparison)
    let needs_ergodic = sec.policies.iter().any(|p| p == "ergodic");
    let erg_lambda = if needs_ergodic {
        ergodic_prices_crn(
            &scenario,
            sec.samples.max(100_000),
            derive_seed(sec.seed, "sweep-ergodic"),
        )?
    } else {
        DualVariables::new(vec![0.0; scenario.n_rrhs()])
    };
    let outage_spec = OutageSpec {
        d_max: sec.d_max,
        d_t: sec.d_t,
        d_f: sec.d_f,
        epsilon_prefactor: sec.epsilon_prefactor,
    };
    let cells: Vec<Result<Vec<SweepCell>>> = sec
        .thetas
        .par_iter()
        .enumerate()
        .map(|(ti, &theta)| {
            let st = scenario.with_theta(theta);
            let mut rng = substream(sec.seed, &format!("sweep-states-{ti}"));
            let states = sample_states(&st, sec.samples, &mut rng)?;
            sec.policies
                .iter()
                .map(|name| {
                    let (policy, warning) = policy_for(
                        name,
                        &st,
                        &erg_lambda,
                        &solver,
                        derive_seed(sec.seed, &format!("sweep-solve-{ti}")),
                    )?;
                    let ec = estimate_ec_on(|f| policy.allocate(f, &st), &st, &states)?;
                    let pbar = mc_average_power_on(|f| policy.allocate(f, &st), &st, &states);
                    let outage = if ec.ec_bits_per_frame > 0.0 {
                        delay_outage(theta, ec.mu_bits_per_s(&st), &outage_spec)?
                    } else {
                        1.0
                    };
                    Ok(SweepCell {
                        theta,
                        policy,
                        ec,
                        pbar,
                        outage,
                        warning,
                    })
                })
                .collect()
        })
        .collect();
    let mut hash_sec = sec.clone();
    hash_sec.out = None;
    let hash = config_hash("sweep", &config.scenario, &hash_sec);
    let mut out = provenance("sweep", &hash, sec.seed);
    let mut warnings: Vec<String> = Vec::new();
    for group in &cells {
        if let Ok(group) = group {
            for c in group {
                if let Some(w) = &c.warning {
                    warnings.push(w.clone());
                }
            }
        }
    }
    for w in &warnings {
        let _ = writeln!(out, "# warning: {w}");
    }
    let n = scenario.n_rrhs();
    out.push_str("theta,policy,ec_norm,ec_stderr");
    for i in 1..=n {
        let _ = write!(out, ",pbar_{i}");
    }
    out.push_str(",outage\n");
    let mut rows = 0;
    for cell_group in cells {
        for c in cell_group? {
            let tfb = scenario.t_f * scenario.bandwidth;
            let _ = write!(
                out,
                "{},{},{},{}",
                c.theta,
                c.policy.label(),
                c.ec.normalized_ec,
                c.ec.std_error / tfb
            );
            for (mean, _se) in &c.pbar {
                let _ = write!(out, ",{mean}");
            }
            let _ = writeln!(out, ",{}", c.outage);
            rows += 1;
        }
    }
    let path = sec.out.unwrap_or_else(|| PathBuf::from("sweep.csv"));
    write_output(&path, &out)?;
    Ok(RunSummary {
        out_path: path,
        rows,
        notes: warnings,
    })
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

fn flags_string(eval: &BranchEval) -> String {
    [
        eval.flags.c1,
        eval.flags.c2,
        eval.flags.c3,
        eval.flags.c4,
        eval.flags.c5,
        eval.flags.c6,
        eval.flags.c7,
    ]
    .iter()
    .map(|b| if *b { '1' } else { '0' })
    .collect()
}

fn roots_string(eval: &BranchEval) -> String {
    let fmt = |r: Option<(f64, f64)>| match r {
        Some((a, b)) => format!("{a}:{b}"),
        None => "-".into(),
    };
    format!(
        "{};{};{}",
        fmt(eval.flags.lead_peak_roots),
        fmt(eval.flags.follow_peak_roots),
        fmt(eval.flags.follow_active_roots)
    )
}

fn terms_string(eval: &BranchEval) -> String {
    let lead = eval
        .t_lead
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>();
    let follow = eval
        .t_follow
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>();
    format!("{}|{}", lead.join(";"), follow.join(";"))
}

pub fn run_audit(config: &ConfigFile, ov: &Overrides) -> Result<RunSummary> {
    let scenario = config.scenario.build()?;
    let n = scenario.n_rrhs();
    if n > 2 {
        return Err(Error::Config(format!(
            "audit compares the closed forms, which exist for one or two RRHs only \
             (scenario has {n})"
        )));
    }
    if !(scenario.epsilon() > 0.0) {
        return Err(Error::Config("audit requires theta > 0".into()));
    }
    let mut sec = config.audit.clone();
    if let Some(s) = ov.seed {
        sec.seed = s;
    }
    if let Some(s) = ov.samples {
        sec.samples = s;
    }
    if let Some(o) = &ov.out {
        sec.out = Some(o.clone());
    }
    if sec.draws == 0 {
        sec.draws = if n == 1 { 50 } else { 20 };
    }
    if !(sec.lambda_lo > 0.0 && sec.lambda_hi > sec.lambda_lo) {
        return Err(Error::Config(
            "audit needs 0 < lambda_lo < lambda_hi".into(),
        ));
    }
    let mut lam_rng = substream(sec.seed, "audit-lambda");
    use rand::Rng;
    let log_lo = sec.lambda_lo.ln();
    let log_hi = sec.lambda_hi.ln();
    let draws: Vec<Vec<f64>> = (0..sec.draws)
        .map(|_| {
            (0..n)
                .map(|_| (lam_rng.random_range(log_lo..log_hi)).exp())
                .collect()
        })
        .collect();
    let results: Vec<Result<String>> = draws
        .par_iter()
        .enumerate()
        .map(|(d, lam)| {
            let lambda = DualVariables::new(lam.clone());
            let mut rng = substream(sec.seed, &format!("audit-mc-{d}"));
            let states = sample_states(&scenario, sec.samples, &mut rng)?;
            let policy = Policy::Proposed {
                lambda: lambda.clone(),
            };
            let mc = mc_average_power_on(|f| policy.allocate(f, &scenario), &scenario, &states);
            let mut row = String::new();
            let _ = write!(row, "{d}");
            for l in lam {
                let _ = write!(row, ",{l}");
            }
            if n == 1 {
                let analytic = avg_power_single(lam[0], &scenario)?;
                let rel = (analytic - mc[0].0).abs() / mc[0].0.max(1e-12);
                let _ = write!(row, ",{analytic},{},{},{rel}", mc[0].0, mc[0].1);
            } else {
                let report = avg_power_two_detailed(&lambda, &scenario)?;
                let a = [report.pair.rrh1, report.pair.rrh2];
                for v in a {
                    let _ = write!(row, ",{v}");
                }
                for (mean, _) in &mc {
                    let _ = write!(row, ",{mean}");
                }
                for (_, se) in &mc {
                    let _ = write!(row, ",{se}");
                }
                for i in 0..2 {
                    let rel = (a[i] - mc[i].0).abs() / mc[i].0.max(1e-12);
                    let _ = write!(row, ",{rel}");
                }
                let _ = write!(
                    row,
                    ",{},{},{},{},{},{}",
                    flags_string(&report.forward),
                    flags_string(&report.reverse),
                    roots_string(&report.forward),
                    roots_string(&report.reverse),
                    terms_string(&report.forward),
                    terms_string(&report.reverse)
                );
            }
            row.push('\n');
            Ok(row)
        })
        .collect();
    let mut hash_sec = sec.clone();
    hash_sec.out = None;
    let hash = config_hash("audit", &config.scenario, &hash_sec);
    let mut out = provenance("audit", &hash, sec.seed);
    if n == 1 {
        out.push_str("draw,lambda_1,analytic_1,mc_1,mc_se_1,rel_err_1\n");
    } else {
        out.push_str(
            "draw,lambda_1,lambda_2,analytic_1,analytic_2,mc_1,mc_2,mc_se_1,mc_se_2,\
             rel_err_1,rel_err_2,flags_fwd,flags_rev,roots_fwd,roots_rev,terms_fwd,terms_rev\n",
        );
    }
    let mut rows = 0;
    for r in results {
        out.push_str(&r?);
        rows += 1;
    }
    let path = sec.out.unwrap_or_else(|| PathBuf::from("audit.csv"));
    write_output(&path, &out)?;
    Ok(RunSummary {
        out_path: path,
        rows,
        notes: vec![],
    })
}

// ---------------------------------------------------------------------------
// outage
// ---------------------------------------------------------------------------

pub fn run_outage(config: &ConfigFile, ov: &Overrides) -> Result<RunSummary> {
    let scenario = config.scenario.build()?;
    let mut sec = config.outage.clone();
    if let Some(s) = ov.seed {
        sec.seed = s;
    }
    if let Some(s) = ov.samples {
        sec.samples = s;
    }
    if let Some(a) = ov.step_a {
        sec.a = a;
    }
    if let Some(m) = ov.max_iter {
        sec.max_iter = m;
    }
    if let Some(t) = ov.tol {
        sec.tol = t;
    }
    if let Some(m) = &ov.mode {
        sec.mode = m.clone();
    }
    if let Some(o) = &ov.out {
        sec.out = Some(o.clone());
    }
    if sec.thetas.is_empty() {
        return Err(Error::Config("outage.thetas must not be empty".into()));
    }
    if sec.d_max.is_empty() {
        return Err(Error::Config("outage.d_max must not be empty".into()));
    }
    for &d in &sec.d_max {
        if d - sec.d_t - sec.d_f <= 0.0 {
            return Err(Error::Config(format!(
                "d_max = {d} leaves no queueing budget after d_t + d_f = {}",
                sec.d_t + sec.d_f
            )));
        }
    }
    let mode: AvgPowerMode = sec.mode.parse()?;
    let solver = SolveConfig {
        step_a: sec.a,
        max_iter: sec.max_iter,
        tol: sec.tol,
        seed: sec.seed,
        mode,
        batch_samples: sec.solver_samples,
        burn_in: 0,
    };
    let cells: Vec<Result<Vec<(f64, f64, EcEstimate, f64)>>> = sec
        .thetas
        .par_iter()
        .enumerate()
        .map(|(ti, &theta)| {
            let st = scenario.with_theta(theta);
            let mut cfg = solver.clone();
            cfg.seed = derive_seed(sec.seed, &format!("outage-solve-{ti}"));
            let report = solve(&st, &cfg)?;
            if !report.converged {
                return Err(Error::Config(format!(
                    "dual solve did not converge at theta = {theta} within {} iterations; \
                     raise max_iter/solver_samples or adjust the step parameter",
                    report.iterations
                )));
            }
            let policy = Policy::Proposed {
                lambda: report.lambda,
            };
            let mut rng = substream(sec.seed, &format!("outage-states-{ti}"));
            let states = sample_states(&st, sec.samples, &mut rng)?;
            let ec = estimate_ec_on(|f| policy.allocate(f, &st), &st, &states)?;
            sec.d_max
                .iter()
                .map(|&d_max| {
                    let spec = OutageSpec {
                        d_max,
                        d_t: sec.d_t,
                        d_f: sec.d_f,
                        epsilon_prefactor: sec.epsilon_prefactor,
                    };
                    let outage = delay_outage(theta, ec.mu_bits_per_s(&st), &spec)?;
                    Ok((theta, d_max, ec.clone(), outage))
                })
                .collect()
        })
        .collect();
    let mut hash_sec = sec.clone();
    hash_sec.out = None;
    let hash = config_hash("outage", &config.scenario, &hash_sec);
    let mut out = provenance("outage", &hash, sec.seed);
    out.push_str("theta,d_max,ec_norm,mu_bits_per_s,outage\n");
    let mut rows = 0;
    for group in cells {
        for (theta, d_max, ec, outage) in group? {
            let _ = writeln!(
                out,
                "{theta},{d_max},{},{},{outage}",
                ec.normalized_ec,
                ec.mu_bits_per_s(&scenario.with_theta(theta))
            );
            rows += 1;
        }
    }
    let path = sec.out.unwrap_or_else(|| PathBuf::from("outage.csv"));
    write_output(&path, &out)?;
    Ok(RunSummary {
        out_path: path,
        rows,
        notes: vec![],
    })
}

// ---------------------------------------------------------------------------
// multiuser
// ---------------------------------------------------------------------------

pub fn run_multiuser(config: &ConfigFile, ov: &Overrides) -> Result<RunSummary> {
    let scenario = config.scenario.build()?;
    let mut sec = config.multiuser.clone();
    if let Some(s) = ov.seed {
        sec.seed = s;
    }
    if let Some(s) = ov.samples {
        sec.samples = s;
    }
    if let Some(a) = ov.step_a {
        sec.a = a;
    }
    if let Some(m) = ov.max_iter {
        sec.max_iter = m;
    }
    if let Some(t) = ov.tol {
        sec.tol = t;
    }
    if let Some(o) = &ov.out {
        sec.out = Some(o.clone());
    }
    if sec.user_theta.is_empty() {
        return Err(Error::Config(
            "multiuser.user_theta must not be empty".into(),
        ));
    }
    let mu = MultiuserScenario {
        p_avg: scenario.avg_powers(),
        m: scenario.m,
        t_f: scenario.t_f,
        bandwidth: scenario.bandwidth,
        user_theta: sec.user_theta.clone(),
        user_mean_cpnr: sec.user_mean_cpnr.clone(),
    };
    mu.validate()?;
    let objective = match sec.objective.as_str() {
        "effective-capacity" => MultiuserObjective::EffectiveCapacity,
        "ergodic" => MultiuserObjective::Ergodic,
        other => {
            return Err(Error::Config(format!(
                "unknown multiuser objective {other:?} (expected effective-capacity or ergodic)"
            )))
        }
    };
    let cfg = MultiuserConfig {
        step_a: sec.a,
        max_iter: sec.max_iter,
        tol: sec.tol,
        seed: sec.seed,
        kappa_damping: sec.kappa_damping,
        objective,
        ..MultiuserConfig::default()
    };
    let report = solve_multiuser(&mu, &cfg)?;
    let lambda = report.lambda.clone();
    let kappa = report.kappa.clone();
    let ec_seed = derive_seed(sec.seed, "multiuser-final-ec");
    let (sum_ec, per_user) = crate::metrics::multiuser_sum_ec(
        &mu,
        |alpha| {
            let floored: Vec<f64> = lambda.lambda.iter().map(|l| l.max(1e-12)).collect();
            match objective {
                MultiuserObjective::EffectiveCapacity => {
                    crate::allocator::allocate_multiuser(&floored, &kappa, alpha, &mu)
                }
                MultiuserObjective::Ergodic => Ok(crate::dual_solver::allocate_multiuser_ergodic(
                    &floored, alpha,
                )),
            }
        },
        sec.samples,
        ec_seed,
    )?;
    let mut hash_sec = sec.clone();
    hash_sec.out = None;
    let hash = config_hash("multiuser", &config.scenario, &hash_sec);
    let mut out = provenance("multiuser", &hash, sec.seed);
    let _ = writeln!(
        out,
        "# objective={} converged={} iterations={}",
        sec.objective, report.converged, report.iterations
    );
    let _ = writeln!(out, "# lambda={}", join(&report.lambda.lambda, ";"));
    let _ = writeln!(out, "# avg_power={}", join(&report.avg_power, ";"));
    let _ = writeln!(out, "# sum_ec_norm={sum_ec}");
    out.push_str("user,theta,kappa,ec_norm\n");
    for (k, ec) in per_user.iter().enumerate() {
        // the delay-blind objective has no kappa; leave the column empty
        let kap = report
            .kappa
            .get(k)
            .map(|v| v.to_string())
            .unwrap_or_default();
        let _ = writeln!(out, "{k},{},{kap},{ec}", mu.user_theta[k]);
    }
    let path = sec.out.unwrap_or_else(|| PathBuf::from("multiuser.csv"));
    write_output(&path, &out)?;
    Ok(RunSummary {
        out_path: path,
        rows: per_user.len(),
        notes: vec![format!("sum_ec_norm={sum_ec}")],
    })
}
