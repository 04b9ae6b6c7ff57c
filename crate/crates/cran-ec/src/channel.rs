//! Network scenario and Nakagami-m fading model.
//!
//! The channel-power-to-noise ratio (CPNR) α_i from RRH i to the user is
//! gamma distributed with shape m and mean ᾱ_i, i.e. the power gain of a
//! Nakagami-m fading channel. Fading is block-static per frame and
//! independent across frames and across RRHs.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One transmit point: its mean CPNR and power budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrhSpec {
    /// Average received CPNR ᾱ (linear, dimensionless).
    pub mean_cpnr: f64,
    /// Average transmit power budget, watts.
    pub p_avg: f64,
    /// Peak (instantaneous) transmit power limit, watts.
    pub p_peak: f64,
}

/// Static description of the network and QoS target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub rrhs: Vec<RrhSpec>,
    /// Nakagami shape parameter, m ≥ 0.5.
    pub m: f64,
    /// Frame length, seconds.
    pub t_f: f64,
    /// System bandwidth, hertz.
    pub bandwidth: f64,
    /// QoS exponent θ ≥ 0 (per-bit delay-violation decay rate).
    pub theta: f64,
}

impl Scenario {
    pub fn new(rrhs: Vec<RrhSpec>, m: f64, t_f: f64, bandwidth: f64, theta: f64) -> Result<Self> {
        let s = Scenario {
            rrhs,
            m,
            t_f,
            bandwidth,
            theta,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rrhs.is_empty() {
            return Err(Error::Scenario("at least one RRH is required".into()));
        }
        for (i, r) in self.rrhs.iter().enumerate() {
            if !(r.mean_cpnr.is_finite() && r.mean_cpnr > 0.0) {
                return Err(Error::Scenario(format!(
                    "RRH {i}: mean_cpnr = {} must be > 0",
                    r.mean_cpnr
                )));
            }
            if !(r.p_avg.is_finite() && r.p_avg > 0.0) {
                return Err(Error::Scenario(format!(
                    "RRH {i}: p_avg = {} must be > 0",
                    r.p_avg
                )));
            }
            if !(r.p_peak.is_finite() && r.p_peak >= r.p_avg) {
                return Err(Error::Scenario(format!(
                    "RRH {i}: p_peak = {} must be >= p_avg = {}",
                    r.p_peak, r.p_avg
                )));
            }
        }
        if !(self.m.is_finite() && self.m >= 0.5) {
            return Err(Error::Scenario(format!("m = {} must be >= 0.5", self.m)));
        }
        if !(self.t_f.is_finite() && self.t_f > 0.0) {
            return Err(Error::Scenario(format!("t_f = {} must be > 0", self.t_f)));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::Scenario(format!(
                "bandwidth = {} must be > 0",
                self.bandwidth
            )));
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(Error::Scenario(format!(
                "theta = {} must be >= 0",
                self.theta
            )));
        }
        Ok(())
    }

    pub fn n_rrhs(&self) -> usize {
        self.rrhs.len()
    }

    /// Transformed QoS exponent ε(θ) = θ·T_f·B / ln 2.
    pub fn epsilon(&self) -> f64 {
        self.theta * self.t_f * self.bandwidth / std::f64::consts::LN_2
    }

    /// Same network evaluated at a different QoS exponent.
    pub fn with_theta(&self, theta: f64) -> Scenario {
        Scenario {
            theta,
            ..self.clone()
        }
    }

    /// One-RRH sub-scenario, used by the nearest/independent baselines.
    pub fn single(&self, rrh: usize) -> Scenario {
        Scenario {
            rrhs: vec![self.rrhs[rrh].clone()],
            ..self.clone()
        }
    }

    pub fn mean_cpnrs(&self) -> Vec<f64> {
        self.rrhs.iter().map(|r| r.mean_cpnr).collect()
    }

    pub fn peak_powers(&self) -> Vec<f64> {
        self.rrhs.iter().map(|r| r.p_peak).collect()
    }

    pub fn avg_powers(&self) -> Vec<f64> {
        self.rrhs.iter().map(|r| r.p_avg).collect()
    }
}

/// Multi-point network serving several users on orthogonal channels.
///
/// Peak limits are not part of this formulation; each RRH keeps its
/// average-power budget and each user has its own QoS exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiuserScenario {
    /// Per-RRH average power budgets, watts.
    pub p_avg: Vec<f64>,
    pub m: f64,
    pub t_f: f64,
    pub bandwidth: f64,
    /// QoS exponent per user.
    pub user_theta: Vec<f64>,
    /// Mean CPNR matrix, `user_mean_cpnr[k][i]` from RRH i to user k.
    pub user_mean_cpnr: Vec<Vec<f64>>,
}

impl MultiuserScenario {
    pub fn validate(&self) -> Result<()> {
        if self.p_avg.is_empty() || self.user_theta.is_empty() {
            return Err(Error::Scenario(
                "multiuser scenario needs at least one RRH and one user".into(),
            ));
        }
        if self.user_mean_cpnr.len() != self.user_theta.len() {
            return Err(Error::Scenario(
                "user_mean_cpnr must have one row per user".into(),
            ));
        }
        for (k, row) in self.user_mean_cpnr.iter().enumerate() {
            if row.len() != self.p_avg.len() {
                return Err(Error::Scenario(format!(
                    "user {k}: CPNR row length {} != number of RRHs {}",
                    row.len(),
                    self.p_avg.len()
                )));
            }
            if row.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                return Err(Error::Scenario(format!("user {k}: CPNRs must be > 0")));
            }
        }
        if self.user_theta.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Scenario("user thetas must be > 0".into()));
        }
        if self.p_avg.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Scenario("p_avg entries must be > 0".into()));
        }
        if !(self.m.is_finite() && self.m >= 0.5) {
            return Err(Error::Scenario(format!("m = {} must be >= 0.5", self.m)));
        }
        Ok(())
    }

    pub fn n_rrhs(&self) -> usize {
        self.p_avg.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_theta.len()
    }

    /// ε(θ_k) for user k.
    pub fn epsilon_user(&self, k: usize) -> f64 {
        self.user_theta[k] * self.t_f * self.bandwidth / std::f64::consts::LN_2
    }
}

/// One realization of the CPNR vector α.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingState {
    pub alpha: Vec<f64>,
}

/// 3GPP-style path loss 148.1 + 37.6·log10(d_km), in dB.
pub fn path_loss_db(distance_km: f64) -> f64 {
    148.1 + 37.6 * distance_km.log10()
}

/// Mean CPNR from link geometry.
///
/// `noise_dbm_per_hz` is the noise power spectral density (e.g. -174);
/// the noise power is integrated over `bandwidth_hz` and the ratio is
/// formed in decibels: ᾱ = 10^[(-PL + shadow - N) / 10].
pub fn mean_cpnr_from_geometry(
    distance_km: f64,
    shadow_db: f64,
    noise_dbm_per_hz: f64,
    bandwidth_hz: f64,
) -> Result<f64> {
    if !(distance_km.is_finite() && distance_km > 0.0) {
        return Err(Error::domain(
            "mean_cpnr_from_geometry",
            format!("distance_km = {distance_km} must be > 0"),
        ));
    }
    if !(bandwidth_hz.is_finite() && bandwidth_hz > 0.0) {
        return Err(Error::domain(
            "mean_cpnr_from_geometry",
            format!("bandwidth_hz = {bandwidth_hz} must be > 0"),
        ));
    }
    let noise_dbm = noise_dbm_per_hz + 10.0 * bandwidth_hz.log10();
    Ok(10f64.powf((-path_loss_db(distance_km) + shadow_db - noise_dbm) / 10.0))
}

/// Nakagami-m power-gain density f(α) = α^{m-1}/Γ(m) (m/ᾱ)^m e^{-mα/ᾱ}.
pub fn pdf(alpha: f64, m: f64, mean_cpnr: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::domain(
            "pdf",
            format!("alpha = {alpha} must be >= 0"),
        ));
    }
    if !(m.is_finite() && m >= 0.5) {
        return Err(Error::domain("pdf", format!("m = {m} must be >= 0.5")));
    }
    if !(mean_cpnr.is_finite() && mean_cpnr > 0.0) {
        return Err(Error::domain(
            "pdf",
            format!("mean_cpnr = {mean_cpnr} must be > 0"),
        ));
    }
    if alpha == 0.0 {
        // α^{m-1} controls the limit: finite only at m = 1.
        return Ok(if m > 1.0 {
            0.0
        } else if m == 1.0 {
            1.0 / mean_cpnr
        } else {
            f64::INFINITY
        });
    }
    let log_f = (m - 1.0) * alpha.ln() - crate::specfun::ln_gamma(m)? + m * (m / mean_cpnr).ln()
        - m * alpha / mean_cpnr;
    Ok(log_f.exp())
}

/// Deterministic derived seed for nested solvers.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}

/// Deterministic named substream of a top-level seed.
///
/// Every consumer of randomness derives its own stream, so experiments are
/// reproducible regardless of evaluation order or thread count.
pub fn substream(seed: u64, label: &str) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha12Rng::from_seed(key)
}

/// Seeded sampler for the joint fading state of a scenario.
pub struct FadingSampler {
    dists: Vec<Gamma<f64>>,
}

impl FadingSampler {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let dists = scenario
            .rrhs
            .iter()
            .map(|r| {
                Gamma::new(scenario.m, r.mean_cpnr / scenario.m)
                    .map_err(|e| Error::domain("sample_fading", format!("gamma distribution: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FadingSampler { dists })
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> FadingState {
        FadingState {
            alpha: self.dists.iter().map(|d| d.sample(rng)).collect(),
        }
    }
}

/// Draw one fading state; each α_i is gamma with shape m and mean ᾱ_i.
pub fn sample_fading(scenario: &Scenario, rng: &mut impl rand::Rng) -> Result<FadingState> {
    Ok(FadingSampler::new(scenario)?.sample(rng))
}

/// Draw a batch of independent fading states.
pub fn sample_states(
    scenario: &Scenario,
    n: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<FadingState>> {
    let sampler = FadingSampler::new(scenario)?;
    Ok((0..n).map(|_| sampler.sample(rng)).collect())
}
