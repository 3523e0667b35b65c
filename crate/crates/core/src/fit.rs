//! Cubic surface fit `alpha(T, xi)` over a boundary mesh and the alpha_ave
//! level metric.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{BoundaryMesh, SweepGrid};

pub const BASIS_ID: &str = "cubic-t-xi";
pub const BASIS_LEN: usize = 10;
pub const BASIS_NAMES: [&str; BASIS_LEN] = [
    "1", "T", "xi", "T^2", "T*xi", "xi^2", "T^3", "T^2*xi", "T*xi^2", "xi^3",
];

/// Relative residual norm under which a basis column counts as dependent.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {needed} present cells in the region, found {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("rank-deficient design, dependent terms: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("no present cells in region {0}")]
    EmptyRegion(Region),
    #[error("metrics use different regions: {0} vs {1}")]
    RegionMismatch(Region, Region),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("non-finite value in fit: {0}")]
    NonFinite(String),
    #[error("unknown basis '{0}'")]
    UnknownBasis(String),
}

/// Closed rectangle in `(T, xi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    #[serde(rename = "T")]
    pub t: (f64, f64),
    pub xi: (f64, f64),
}

impl Region {
    pub fn new(t: (f64, f64), xi: (f64, f64)) -> Result<Self, FitError> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ok(t) || !ok(xi) {
            return Err(FitError::InvalidRegion(format!("T {t:?}, xi {xi:?}")));
        }
        Ok(Self { t, xi })
    }

    /// Bounding box of a sweep grid.
    pub fn of_grid(grid: &SweepGrid) -> Self {
        let (t, xi) = (grid.t_axis(), grid.xi_axis());
        Self {
            t: (t[0], t[t.len() - 1]),
            xi: (xi[0], xi[xi.len() - 1]),
        }
    }

    pub fn contains(&self, t: f64, xi: f64) -> bool {
        t >= self.t.0 && t <= self.t.1 && xi >= self.xi.0 && xi <= self.xi.1
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "T in [{}, {}], xi in [{}, {}]",
            self.t.0, self.t.1, self.xi.0, self.xi.1
        )
    }
}

/// The ten basis monomials at `(T, xi)`, in coefficient order.
pub fn basis(t: f64, xi: f64) -> [f64; BASIS_LEN] {
    [
        1.0,
        t,
        xi,
        t * t,
        t * xi,
        xi * xi,
        t * t * t,
        t * t * xi,
        t * xi * xi,
        xi * xi * xi,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolySurface {
    pub protocol: String,
    pub basis: String,
    pub coeffs: [f64; BASIS_LEN],
    pub r_square: f64,
    #[serde(rename = "region")]
    pub fit_region: Region,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_hash: Option<String>,
}

impl PolySurface {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let s: PolySurface = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if s.basis != BASIS_ID {
            return Err(FitError::UnknownBasis(s.basis).to_string());
        }
        if s.coeffs.iter().any(|c| !c.is_finite()) {
            return Err("non-finite coefficient".into());
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("surface serializes")
    }

    /// Value at `(T, xi)` plus whether the point lies outside the fit region.
    pub fn evaluate_checked(&self, t: f64, xi: f64) -> (f64, bool) {
        (evaluate_surface(self, t, xi), !self.fit_region.contains(t, xi))
    }
}

pub fn evaluate_surface(s: &PolySurface, t: f64, xi: f64) -> f64 {
    evaluate_coeffs(&s.coeffs, t, xi)
}

pub fn evaluate_coeffs(coeffs: &[f64; BASIS_LEN], t: f64, xi: f64) -> f64 {
    basis(t, xi).iter().zip(coeffs).map(|(b, c)| b * c).sum()
}

/// Least-squares fit to the present cells of `mesh` inside `region`.
pub fn fit_surface(mesh: &BoundaryMesh, region: &Region) -> Result<PolySurface, FitError> {
    let pts: Vec<(f64, f64, f64)> = mesh
        .present()
        .filter(|(t, xi, _)| region.contains(*t, *xi))
        .map(|(t, xi, p)| (t, xi, p.alpha_min))
        .collect();
    let (coeffs, r_square) = fit_points(&pts)?;
    Ok(PolySurface {
        protocol: mesh.protocol.clone(),
        basis: BASIS_ID.to_owned(),
        coeffs,
        r_square,
        fit_region: *region,
        cell_count: Some(pts.len()),
        source_hash: None,
    })
}

/// Unweighted least squares of `z` on the cubic basis. Returns the
/// coefficients and R².
pub fn fit_points(pts: &[(f64, f64, f64)]) -> Result<([f64; BASIS_LEN], f64), FitError> {
    if pts.len() < BASIS_LEN {
        return Err(FitError::TooFewPoints {
            needed: BASIS_LEN,
            found: pts.len(),
        });
    }
    if pts.iter().any(|(t, x, z)| !(t.is_finite() && x.is_finite() && z.is_finite())) {
        return Err(FitError::NonFinite("input point".into()));
    }
    let n = pts.len();
    let mut a = DMatrix::<f64>::from_fn(n, BASIS_LEN, |i, j| basis(pts[i].0, pts[i].1)[j]);
    let y = DVector::<f64>::from_iterator(n, pts.iter().map(|p| p.2));

    let scales: Vec<f64> = (0..BASIS_LEN).map(|j| a.column(j).norm()).collect();
    let deficient = dependent_columns(&a, &scales);
    if !deficient.is_empty() {
        return Err(FitError::RankDeficient(
            deficient.iter().map(|&j| BASIS_NAMES[j].to_owned()).collect(),
        ));
    }
    for (j, s) in scales.iter().enumerate() {
        a.column_mut(j).unscale_mut(*s);
    }

    let qr = a.clone().qr();
    let rhs = qr.q().transpose() * &y;
    let scaled = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| FitError::RankDeficient(vec!["(singular R)".into()]))?;
    let mut coeffs = [0.0; BASIS_LEN];
    for j in 0..BASIS_LEN {
        coeffs[j] = scaled[j] / scales[j];
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(FitError::NonFinite("coefficient".into()));
    }

    let residual = &y - &a * &scaled;
    let ss_res = residual.norm_squared();
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    // the mean of constant data carries round-off, so test for it directly
    let constant = y.iter().all(|&v| v == y[0]);
    let r_square = if constant || ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok((coeffs, r_square))
}

/// Gram-Schmidt over the columns in basis order; a column whose residual
/// after projection is negligible relative to its own norm is dependent on
/// the earlier ones.
fn dependent_columns(a: &DMatrix<f64>, scales: &[f64]) -> Vec<usize> {
    let mut accepted: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..a.ncols() {
        if scales[j] == 0.0 {
            out.push(j);
            continue;
        }
        let mut v: DVector<f64> = a.column(j).into_owned() / scales[j];
        for _ in 0..2 {
            for q in &accepted {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
        }
        let r = v.norm();
        if r < RANK_TOLERANCE.sqrt() {
            out.push(j);
        } else {
            accepted.push(v / r);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricSource {
    #[default]
    Mesh,
    Surface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetric {
    pub protocol: String,
    pub alpha_ave: f64,
    pub region: Region,
    pub cell_count: usize,
    #[serde(default)]
    pub source: MetricSource,
}

/// Mean `alpha_min` over the present cells inside `region`.
pub fn alpha_ave(mesh: &BoundaryMesh, region: &Region) -> Result<LevelMetric, FitError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (_, _, p) in mesh.present().filter(|(t, xi, _)| region.contains(*t, *xi)) {
        sum += p.alpha_min;
        count += 1;
    }
    if count == 0 {
        return Err(FitError::EmptyRegion(*region));
    }
    Ok(LevelMetric {
        protocol: mesh.protocol.clone(),
        alpha_ave: sum / count as f64,
        region: *region,
        cell_count: count,
        source: MetricSource::Mesh,
    })
}

/// Mean of the fitted surface over an `n x n` grid spanning `region`.
pub fn alpha_ave_surface(
    s: &PolySurface,
    region: &Region,
    n: usize,
) -> Result<LevelMetric, FitError> {
    if n < 2 {
        return Err(FitError::InvalidRegion("surface average needs n >= 2".into()));
    }
    let lerp = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            sum += evaluate_surface(s, lerp(region.t, i), lerp(region.xi, j));
        }
    }
    Ok(LevelMetric {
        protocol: s.protocol.clone(),
        alpha_ave: sum / (n * n) as f64,
        region: *region,
        cell_count: n * n,
        source: MetricSource::Surface,
    })
}

/// Sorts metrics by ascending alpha_ave; lower means more channels admit a
/// positive key rate.
pub fn compare_levels(metrics: &[LevelMetric]) -> Result<Vec<LevelMetric>, FitError> {
    if let Some(first) = metrics.first() {
        if let Some(m) = metrics.iter().find(|m| m.region != first.region) {
            return Err(FitError::RegionMismatch(first.region, m.region));
        }
    }
    let mut out = metrics.to_vec();
    out.sort_by(|a, b| a.alpha_ave.total_cmp(&b.alpha_ave));
    Ok(out)
}
