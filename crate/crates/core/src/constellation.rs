//! Coherent-state constellations for discrete-modulated CV-QKD.
//!
//! A [`Constellation`] is a finite alphabet of coherent-state amplitudes
//! (photon-number units, so `|alpha|^2` is a mean photon number) with one
//! probability per symbol. Three layouts are supported: M-PSK, M-QAM with
//! binomial or discrete-Gaussian weights, and uniform M-APSK.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ring capacities for APSK, innermost ring first.
pub const APSK_RING_CAPACITIES: [usize; 7] = [4, 12, 16, 32, 64, 128, 256];

/// Default `nu` for discrete-Gaussian QAM weights. Not a fitted value.
pub const DEFAULT_QAM_NU: f64 = 0.1;

const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstellationError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported constellation: {0}")]
    Unsupported(String),
    #[error("invalid constellation: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolTag {
    #[serde(rename = "PSK")]
    Psk,
    #[serde(rename = "QAM")]
    Qam,
    #[serde(rename = "APSK")]
    Apsk,
}

impl fmt::Display for ProtocolTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolTag::Psk => "psk",
            ProtocolTag::Qam => "qam",
            ProtocolTag::Apsk => "apsk",
        })
    }
}

/// Probability weighting of QAM grid points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QamDistribution {
    Binomial,
    DiscreteGaussian { nu: f64 },
}

impl Default for QamDistribution {
    fn default() -> Self {
        QamDistribution::Binomial
    }
}

impl QamDistribution {
    pub fn discrete_gaussian(nu: f64) -> Result<Self, ConstellationError> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(ConstellationError::InvalidArgument(format!(
                "discrete-Gaussian nu must be finite and positive, got {nu}"
            )));
        }
        Ok(QamDistribution::DiscreteGaussian { nu })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstellationPoint {
    pub amplitude: Complex64,
    pub probability: f64,
}

/// A probability-weighted set of coherent-state amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ConstellationJson", try_from = "ConstellationJson")]
pub struct Constellation {
    points: Vec<ConstellationPoint>,
    protocol: ProtocolTag,
    alpha: f64,
}

impl Constellation {
    /// Builds a constellation from explicit points, checking normalization,
    /// positivity and uniqueness of amplitudes.
    pub fn from_points(
        protocol: ProtocolTag,
        alpha: f64,
        points: Vec<ConstellationPoint>,
    ) -> Result<Self, ConstellationError> {
        if points.is_empty() {
            return Err(ConstellationError::Invalid("no points".into()));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(ConstellationError::Invalid(format!(
                "alpha scale must be finite and non-negative, got {alpha}"
            )));
        }
        let mut total = 0.0;
        for (i, pt) in points.iter().enumerate() {
            if !(pt.probability > 0.0 && pt.probability <= 1.0) {
                return Err(ConstellationError::Invalid(format!(
                    "point {i} has probability {} outside (0, 1]",
                    pt.probability
                )));
            }
            if !(pt.amplitude.re.is_finite() && pt.amplitude.im.is_finite()) {
                return Err(ConstellationError::Invalid(format!(
                    "point {i} has a non-finite amplitude"
                )));
            }
            total += pt.probability;
        }
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(ConstellationError::Invalid(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if (points[i].amplitude - points[j].amplitude).norm() < 1e-14 {
                    return Err(ConstellationError::Invalid(format!(
                        "points {i} and {j} share an amplitude"
                    )));
                }
            }
        }
        Ok(Self {
            points,
            protocol,
            alpha,
        })
    }

    /// M-PSK: `alpha * exp(i 2 pi k / M)` with uniform probability.
    pub fn psk(m: usize, alpha: f64) -> Result<Self, ConstellationError> {
        if m < 2 {
            return Err(ConstellationError::InvalidArgument(format!(
                "PSK needs M >= 2, got {m}"
            )));
        }
        check_alpha(alpha)?;
        let p = 1.0 / m as f64;
        let points = (0..m)
            .map(|k| ConstellationPoint {
                amplitude: root_of_unity(k, m) * alpha,
                probability: p,
            })
            .collect();
        Ok(Self {
            points,
            protocol: ProtocolTag::Psk,
            alpha,
        })
    }

    /// Square M-QAM on an `m x m` grid, `M = m^2`.
    pub fn qam(
        m_total: usize,
        alpha: f64,
        dist: QamDistribution,
    ) -> Result<Self, ConstellationError> {
        let m = integer_sqrt(m_total)
            .filter(|&m| m >= 2)
            .ok_or_else(|| {
                ConstellationError::InvalidArgument(format!(
                    "QAM needs M = m^2 with m >= 2, got {m_total}"
                ))
            })?;
        check_alpha(alpha)?;
        let spacing = alpha * 2f64.sqrt() / ((m - 1) as f64).sqrt();
        let centre = (m - 1) as f64 / 2.0;
        let coord = |k: usize| spacing * (k as f64 - centre);

        let raw: Vec<(Complex64, f64)> = match dist {
            QamDistribution::Binomial => {
                let row = binomial_row(m - 1);
                let scale = 2f64.powi(-2 * (m as i32 - 1));
                grid(m)
                    .map(|(k, l)| {
                        (
                            Complex64::new(coord(k), coord(l)),
                            row[k] * row[l] * scale,
                        )
                    })
                    .collect()
            }
            QamDistribution::DiscreteGaussian { nu } => {
                QamDistribution::discrete_gaussian(nu)?;
                grid(m)
                    .map(|(k, l)| {
                        let z = Complex64::new(coord(k), coord(l));
                        (z, (-nu * z.norm_sqr()).exp())
                    })
                    .collect()
            }
        };
        let total: f64 = raw.iter().map(|(_, w)| w).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(ConstellationError::InvalidArgument(
                "QAM weights underflowed; nu too large for this alpha".into(),
            ));
        }
        let points = raw
            .into_iter()
            .map(|(amplitude, w)| ConstellationPoint {
                amplitude,
                probability: w / total,
            })
            .collect::<Vec<_>>();
        if points.iter().any(|p| p.probability <= 0.0) {
            return Err(ConstellationError::InvalidArgument(
                "QAM weight underflowed to zero; nu too large for this alpha".into(),
            ));
        }
        Ok(Self {
            points,
            protocol: ProtocolTag::Qam,
            alpha,
        })
    }

    /// Uniform M-APSK on `R` concentric rings with radii `(p / R) * alpha`.
    ///
    /// `M` must be a prefix sum of [`APSK_RING_CAPACITIES`]; anything else is
    /// refused rather than guessed.
    pub fn apsk(m: usize, alpha: f64) -> Result<Self, ConstellationError> {
        let rings = apsk_ring_count(m)?;
        check_alpha(alpha)?;
        let mut points = Vec::with_capacity(m);
        for p in 1..=rings {
            let per_ring = APSK_RING_CAPACITIES[p - 1];
            let radius = alpha * p as f64 / rings as f64;
            let prob = 1.0 / (rings * per_ring) as f64;
            for k in 0..per_ring {
                points.push(ConstellationPoint {
                    amplitude: root_of_unity(k, per_ring) * radius,
                    probability: prob,
                });
            }
        }
        Ok(Self {
            points,
            protocol: ProtocolTag::Apsk,
            alpha,
        })
    }

    pub fn points(&self) -> &[ConstellationPoint] {
        &self.points
    }

    pub fn protocol(&self) -> ProtocolTag {
        self.protocol
    }

    pub fn alpha_scale(&self) -> f64 {
        self.alpha
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    /// `<n> = sum_k p_k |alpha_k|^2`.
    pub fn mean_photon_number(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.probability * p.amplitude.norm_sqr())
            .sum()
    }

    pub fn mean_amplitude(&self) -> Complex64 {
        self.points
            .iter()
            .map(|p| p.amplitude * p.probability)
            .sum()
    }

    pub fn max_photon_number(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.amplitude.norm_sqr())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("constellation serializes")
    }
}

/// Number of APSK rings for a total of `m` points.
pub fn apsk_ring_count(m: usize) -> Result<usize, ConstellationError> {
    let mut total = 0;
    for (i, cap) in APSK_RING_CAPACITIES.iter().enumerate() {
        total += cap;
        if total == m {
            return Ok(i + 1);
        }
        if total > m {
            break;
        }
    }
    Err(ConstellationError::Unsupported(format!(
        "{m}-APSK is not a cumulative sum of ring capacities {APSK_RING_CAPACITIES:?}"
    )))
}

fn check_alpha(alpha: f64) -> Result<(), ConstellationError> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(ConstellationError::InvalidArgument(format!(
            "alpha must be finite and positive, got {alpha}"
        )))
    }
}

fn root_of_unity(k: usize, m: usize) -> Complex64 {
    // reduce k/m first so the angle comes from the smallest exact fraction
    let g = gcd(k, m);
    let (num, den) = (k / g, m / g);
    let (s, c) = (2.0 * PI * num as f64 / den as f64).sin_cos();
    Complex64::new(c, s)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

fn integer_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

fn binomial_row(n: usize) -> Vec<f64> {
    let mut row = vec![1.0; n + 1];
    for k in 1..n {
        row[k] = row[k - 1] * (n - k + 1) as f64 / k as f64;
    }
    row
}

fn grid(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |k| (0..m).map(move |l| (k, l)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Psk,
    Qam,
    Apsk,
}

/// A constellation family at a fixed size, instantiated for any `alpha`.
///
/// Textual form: `psk16`, `apsk64`, `qam16` (binomial) or `qam16-gauss0.1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    pub m: usize,
    #[serde(default)]
    pub qam: QamDistribution,
}

impl ProtocolSpec {
    pub fn new(kind: ProtocolKind, m: usize) -> Result<Self, ConstellationError> {
        Self::with_distribution(kind, m, QamDistribution::Binomial)
    }

    pub fn with_distribution(
        kind: ProtocolKind,
        m: usize,
        qam: QamDistribution,
    ) -> Result<Self, ConstellationError> {
        let spec = Self { kind, m, qam };
        // validate the size once with a harmless alpha
        spec.build(1.0)?;
        Ok(spec)
    }

    pub fn build(&self, alpha: f64) -> Result<Constellation, ConstellationError> {
        match self.kind {
            ProtocolKind::Psk => Constellation::psk(self.m, alpha),
            ProtocolKind::Qam => Constellation::qam(self.m, alpha, self.qam),
            ProtocolKind::Apsk => Constellation::apsk(self.m, alpha),
        }
    }
}

impl fmt::Display for ProtocolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.qam) {
            (ProtocolKind::Psk, _) => write!(f, "psk{}", self.m),
            (ProtocolKind::Apsk, _) => write!(f, "apsk{}", self.m),
            (ProtocolKind::Qam, QamDistribution::Binomial) => write!(f, "qam{}", self.m),
            (ProtocolKind::Qam, QamDistribution::DiscreteGaussian { nu }) => {
                write!(f, "qam{}-gauss{}", self.m, nu)
            }
        }
    }
}

impl FromStr for ProtocolSpec {
    type Err = ConstellationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || ConstellationError::InvalidArgument(format!("unrecognised protocol '{s}'"));
        let (kind, rest) = if let Some(r) = s.strip_prefix("apsk") {
            (ProtocolKind::Apsk, r)
        } else if let Some(r) = s.strip_prefix("psk") {
            (ProtocolKind::Psk, r)
        } else if let Some(r) = s.strip_prefix("qam") {
            (ProtocolKind::Qam, r)
        } else {
            return Err(bad());
        };
        let (size, dist) = match rest.split_once('-') {
            None => (rest, QamDistribution::Binomial),
            Some((size, suffix)) if kind == ProtocolKind::Qam => {
                let nu = suffix
                    .strip_prefix("gauss")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(bad)?;
                (size, QamDistribution::discrete_gaussian(nu)?)
            }
            Some(_) => return Err(bad()),
        };
        let m = size.parse::<usize>().map_err(|_| bad())?;
        ProtocolSpec::with_distribution(kind, m, dist)
    }
}

#[derive(Serialize, Deserialize)]
struct PointJson {
    re: f64,
    im: f64,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct ConstellationJson {
    protocol: ProtocolTag,
    #[serde(rename = "M")]
    m: usize,
    alpha: f64,
    points: Vec<PointJson>,
}

impl From<Constellation> for ConstellationJson {
    fn from(c: Constellation) -> Self {
        Self {
            protocol: c.protocol,
            m: c.points.len(),
            alpha: c.alpha,
            points: c
                .points
                .iter()
                .map(|p| PointJson {
                    re: p.amplitude.re,
                    im: p.amplitude.im,
                    p: p.probability,
                })
                .collect(),
        }
    }
}

impl TryFrom<ConstellationJson> for Constellation {
    type Error = ConstellationError;

    fn try_from(j: ConstellationJson) -> Result<Self, Self::Error> {
        if j.m != j.points.len() {
            return Err(ConstellationError::Invalid(format!(
                "M = {} but {} points listed",
                j.m,
                j.points.len()
            )));
        }
        let points = j
            .points
            .into_iter()
            .map(|p| ConstellationPoint {
                amplitude: Complex64::new(p.re, p.im),
                probability: p.p,
            })
            .collect();
        Constellation::from_points(j.protocol, j.alpha, points)
    }
}
