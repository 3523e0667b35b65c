//! Asymptotic secret key rate under heterodyne detection and collective
//! attacks, `SKR = beta * I_AB - S_BE`.
//!
//! All variances are in shot-noise units (vacuum quadrature variance 1). The
//! channel is treated as linear: Bob's covariance block is
//! `Y = 2 T <n> + T xi + 1` and the cross term is `C = sqrt(T) Z`, with `Z`
//! taken from the discrete ensemble (see [`crate::fock`]). Eve's Holevo
//! information is bounded by the Gaussian state with that covariance matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::{Constellation, ConstellationError};
use crate::fock;

/// Slack below 1 tolerated on symplectic eigenvalues.
pub const NU_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("Fock cutoff {cutoff} too small: retained norm {norm}")]
    Truncation { cutoff: usize, norm: f64 },
    #[error("Z did not stabilise; last cutoff {cutoff}, change {delta:e}")]
    NotConverged { cutoff: usize, delta: f64 },
    #[error("average state has eigenvalue {0:e} below the clamping floor")]
    NegativeEigenvalue(f64),
    #[error("numerical domain error: {0}")]
    Domain(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("invalid protocol configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    transmittance: f64,
    excess_noise: f64,
}

impl ChannelParams {
    pub fn new(transmittance: f64, excess_noise: f64) -> Result<Self, EngineError> {
        if !(transmittance.is_finite() && (0.0..=1.0).contains(&transmittance)) {
            return Err(EngineError::InvalidChannel(format!(
                "transmittance {transmittance} outside [0, 1]"
            )));
        }
        if !(excess_noise.is_finite() && excess_noise >= 0.0) {
            return Err(EngineError::InvalidChannel(format!(
                "excess noise {excess_noise} must be finite and >= 0"
            )));
        }
        Ok(Self {
            transmittance,
            excess_noise,
        })
    }

    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }

    pub fn excess_noise(&self) -> f64 {
        self.excess_noise
    }
}

/// Where excess noise is referred to. `Input` scales it by `T` at Bob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseReference {
    #[default]
    Input,
    Output,
}

impl NoiseReference {
    /// Excess noise as seen at Bob, in SNU.
    fn at_bob(self, ch: &ChannelParams) -> f64 {
        match self {
            NoiseReference::Input => ch.transmittance * ch.excess_noise,
            NoiseReference::Output => ch.excess_noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detection {
    #[default]
    Heterodyne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FockCutoff {
    #[default]
    Auto,
    Fixed(usize),
}

impl FockCutoff {
    /// Same policy with the starting cutoff doubled; used for retries.
    pub fn doubled(self, c: &Constellation) -> Self {
        match self {
            FockCutoff::Auto => FockCutoff::Fixed(2 * fock::auto_cutoff_start(c)),
            FockCutoff::Fixed(n) => FockCutoff::Fixed(2 * n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub beta: f64,
    #[serde(default)]
    pub detection: Detection,
    #[serde(default)]
    pub fock_cutoff: FockCutoff,
    #[serde(default)]
    pub noise_reference: NoiseReference,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            beta: 0.95,
            detection: Detection::Heterodyne,
            fock_cutoff: FockCutoff::Auto,
            noise_reference: NoiseReference::Input,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(EngineError::InvalidConfig(format!(
                "reconciliation efficiency {} outside (0, 1]",
                self.beta
            )));
        }
        if let FockCutoff::Fixed(n) = self.fock_cutoff {
            if n < 4 {
                return Err(EngineError::InvalidConfig(format!(
                    "fixed Fock cutoff must be >= 4, got {n}"
                )));
            }
        }
        Ok(())
    }
}

/// The two numbers the key rate needs from a constellation: `<n>` and `Z`.
///
/// Both are independent of the channel, so a sweep computes them once per
/// alpha and reuses them for every `(T, xi)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationStats {
    pub n_mean: f64,
    pub z: f64,
    /// Fock cutoff `z` was evaluated at; `None` for closed-form stats.
    pub cutoff: Option<usize>,
}

impl ModulationStats {
    pub fn compute(c: &Constellation, policy: FockCutoff) -> Result<Self, EngineError> {
        let (z, cutoff) = match policy {
            FockCutoff::Auto => fock::correlation_z_converged(c, fock::auto_cutoff_start(c))?,
            FockCutoff::Fixed(n) => (fock::correlation_z(c, n)?, n),
        };
        Ok(Self {
            n_mean: c.mean_photon_number(),
            z,
            cutoff: Some(cutoff),
        })
    }

    /// Gaussian-modulation limit, `Z = 2 sqrt(<n>(<n>+1))`.
    pub fn gaussian(n_mean: f64) -> Self {
        Self {
            n_mean,
            z: gaussian_z(n_mean),
            cutoff: None,
        }
    }
}

pub fn gaussian_z(n_mean: f64) -> f64 {
    2.0 * (n_mean * (n_mean + 1.0)).sqrt()
}

/// All intermediate quantities of one key-rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkrBreakdown {
    pub n_mean: f64,
    #[serde(rename = "Z")]
    pub z: f64,
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "Y")]
    pub y: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    #[serde(rename = "I_AB")]
    pub i_ab: f64,
    #[serde(rename = "S_BE")]
    pub s_be: f64,
    pub beta: f64,
    pub skr: f64,
}

/// Heterodyne Gaussian-channel information, `log2(1 + 2 T <n> / (2 + T xi))`.
pub fn mutual_information(ch: &ChannelParams, n_mean: f64) -> f64 {
    mutual_information_referenced(ch, n_mean, NoiseReference::Input)
}

pub fn mutual_information_referenced(
    ch: &ChannelParams,
    n_mean: f64,
    reference: NoiseReference,
) -> f64 {
    let snr = 2.0 * ch.transmittance * n_mean / (2.0 + reference.at_bob(ch));
    snr.ln_1p() / std::f64::consts::LN_2
}

/// Symplectic eigenvalues `(nu1 >= nu2)` of `[[X I, C sz], [C sz, Y I]]`.
pub fn symplectic_eigenvalues(x: f64, y: f64, c: f64) -> Result<(f64, f64), EngineError> {
    let delta = x * x + y * y - 2.0 * c * c;
    let det_root = x * y - c * c;
    let disc = delta * delta - 4.0 * det_root * det_root;
    if disc < -1e-9 * delta.abs().max(1.0).powi(2) {
        return Err(EngineError::Domain(format!(
            "covariance matrix has complex symplectic spectrum (discriminant {disc:e})"
        )));
    }
    let nu1 = ((delta + disc.max(0.0).sqrt()) / 2.0).sqrt();
    if !(det_root > 0.0 && nu1 > 0.0) {
        return Err(EngineError::Domain(format!(
            "covariance matrix is not positive definite (XY - C^2 = {det_root:e})"
        )));
    }
    // nu1 nu2 = XY - C^2, more accurate than the small root of the quadratic
    let nu2 = det_root / nu1;
    if nu2 < 1.0 - NU_TOLERANCE {
        return Err(EngineError::Domain(format!(
            "unphysical covariance matrix: nu2 = {nu2}"
        )));
    }
    Ok((nu1, nu2))
}

/// Bosonic entropy function `g(x)` in bits, with `g(1) = 0`.
pub fn g_function(x: f64) -> Result<f64, EngineError> {
    if x.is_nan() || x < 1.0 - NU_TOLERANCE {
        return Err(EngineError::Domain(format!("g(x) needs x >= 1, got {x}")));
    }
    if x <= 1.0 {
        return Ok(0.0);
    }
    let plus = (x + 1.0) / 2.0;
    let minus = (x - 1.0) / 2.0;
    Ok(plus * plus.log2() - minus * minus.log2())
}

/// Key rate for a constellation over a channel.
pub fn compute_skr(
    c: &Constellation,
    ch: &ChannelParams,
    cfg: &ProtocolConfig,
) -> Result<SkrBreakdown, EngineError> {
    cfg.validate()?;
    let stats = ModulationStats::compute(c, cfg.fock_cutoff)?;
    skr_from_stats(&stats, ch, cfg)
}

/// Key rate from precomputed modulation statistics.
pub fn skr_from_stats(
    stats: &ModulationStats,
    ch: &ChannelParams,
    cfg: &ProtocolConfig,
) -> Result<SkrBreakdown, EngineError> {
    let n = stats.n_mean;
    let t = ch.transmittance;
    let x = 2.0 * n + 1.0;
    let y = 2.0 * t * n + cfg.noise_reference.at_bob(ch) + 1.0;
    let c = t.sqrt() * stats.z;
    let (nu1, nu2) = symplectic_eigenvalues(x, y, c)?;
    let nu3 = x - c * c / (y + 1.0);
    let i_ab = mutual_information_referenced(ch, n, cfg.noise_reference);
    let mut s_be = g_function(nu1)? + g_function(nu2)? - g_function(nu3)?;
    if s_be < 0.0 {
        if s_be < -1e-10 {
            return Err(EngineError::Domain(format!(
                "negative Holevo bound S_BE = {s_be:e}"
            )));
        }
        s_be = 0.0;
    }
    let skr = cfg.beta * i_ab - s_be;
    let out = SkrBreakdown {
        n_mean: n,
        z: stats.z,
        x,
        y,
        c,
        nu1,
        nu2,
        nu3,
        i_ab,
        s_be,
        beta: cfg.beta,
        skr,
    };
    let fields = [n, stats.z, x, y, c, nu1, nu2, nu3, i_ab, s_be, skr];
    if fields.iter().any(|v| !v.is_finite()) {
        return Err(EngineError::NonFinite(format!("key rate breakdown {out:?}")));
    }
    Ok(out)
}
