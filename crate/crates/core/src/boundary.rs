//! Minimum-positive key rate boundary over transmittance, excess noise and
//! modulation amplitude.
//!
//! For each `(T, xi)` cell the alpha axis is scanned in ascending order and
//! the smallest strictly positive key rate is kept; its alpha is the cell's
//! boundary point. Cells with no positive key rate anywhere on the axis form
//! the cut-off region.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::ProtocolSpec;
use crate::engine::{self, ChannelParams, EngineError, ModulationStats, ProtocolConfig};

/// Bisection stops once the bracket is narrower than this (SNU).
pub const REFINE_TOLERANCE: f64 = 1e-4;
/// A sweep with more failed cells than this fraction is aborted.
pub const MAX_FAILED_FRACTION: f64 = 0.01;

pub const CSV_HEADER: [&str; 6] = ["protocol", "T", "xi", "alpha_min", "skr_at_min", "status"];

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid bracket [{lo}, {hi}]: skr(lo) = {f_lo:e}, skr(hi) = {f_hi:e}")]
    Bracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
    #[error("sweep aborted: {failed} of {total} cells failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("mesh CSV: {0}")]
    Csv(String),
}

impl From<csv::Error> for BoundaryError {
    fn from(e: csv::Error) -> Self {
        BoundaryError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisSpacing {
    #[default]
    Linear,
    Log,
}

/// `steps` points from `min` to `max` inclusive. The end points are exact.
pub fn axis(min: f64, max: f64, steps: usize, spacing: AxisSpacing) -> Vec<f64> {
    if steps == 1 {
        return vec![min];
    }
    let last = (steps - 1) as f64;
    (0..steps)
        .map(|i| {
            if i == steps - 1 {
                return max;
            }
            let f = i as f64 / last;
            match spacing {
                AxisSpacing::Linear => min + (max - min) * f,
                AxisSpacing::Log => (min.ln() + (max.ln() - min.ln()) * f).exp(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    t_axis: Vec<f64>,
    xi_axis: Vec<f64>,
    alpha_axis: Vec<f64>,
}

impl SweepGrid {
    pub fn new(
        t_axis: Vec<f64>,
        xi_axis: Vec<f64>,
        alpha_axis: Vec<f64>,
    ) -> Result<Self, BoundaryError> {
        check_axis("T", &t_axis, |t| (0.0..=1.0).contains(&t))?;
        check_axis("xi", &xi_axis, |x| x > 0.0)?;
        check_axis("alpha", &alpha_axis, |a| a > 0.0)?;
        Ok(Self {
            t_axis,
            xi_axis,
            alpha_axis,
        })
    }

    /// Default ranges: T in [0, 1] (50 steps), xi in [0.001, 0.5] (50 linear
    /// steps), alpha in [0.1, 0.5] (40 steps).
    pub fn reference() -> Self {
        Self::new(
            axis(0.0, 1.0, 50, AxisSpacing::Linear),
            axis(0.001, 0.5, 50, AxisSpacing::Linear),
            axis(0.1, 0.5, 40, AxisSpacing::Linear),
        )
        .expect("default grid is valid")
    }

    pub fn t_axis(&self) -> &[f64] {
        &self.t_axis
    }

    pub fn xi_axis(&self) -> &[f64] {
        &self.xi_axis
    }

    pub fn alpha_axis(&self) -> &[f64] {
        &self.alpha_axis
    }

    pub fn alpha_bounds(&self) -> (f64, f64) {
        (self.alpha_axis[0], *self.alpha_axis.last().unwrap())
    }

    /// Largest gap between consecutive alpha grid values.
    pub fn alpha_step(&self) -> f64 {
        self.alpha_axis
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn cell_count(&self) -> usize {
        self.t_axis.len() * self.xi_axis.len()
    }
}

fn check_axis(name: &str, v: &[f64], ok: impl Fn(f64) -> bool) -> Result<(), BoundaryError> {
    if v.len() < 2 {
        return Err(BoundaryError::Grid(format!("{name} axis needs >= 2 points")));
    }
    if let Some(bad) = v.iter().find(|&&x| !x.is_finite() || !ok(x)) {
        return Err(BoundaryError::Grid(format!("{name} axis value {bad} out of range")));
    }
    if v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BoundaryError::Grid(format!("{name} axis is not strictly increasing")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub alpha_min: f64,
    pub skr_at_min: f64,
    pub refined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellStatus {
    Ok(BoundaryPoint),
    /// No positive key rate anywhere on the alpha axis.
    None,
    Failed { reason: String },
}

impl CellStatus {
    pub fn point(&self) -> Option<&BoundaryPoint> {
        match self {
            CellStatus::Ok(p) => Some(p),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CellStatus::Ok(_) => "ok",
            CellStatus::None => "none",
            CellStatus::Failed { .. } => "failed",
        }
    }
}

/// Per-cell boundary points, row-major over `(T, xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMesh {
    pub protocol: String,
    pub grid: SweepGrid,
    cells: Vec<CellStatus>,
}

impl BoundaryMesh {
    pub fn from_cells(
        protocol: impl Into<String>,
        grid: SweepGrid,
        cells: Vec<CellStatus>,
    ) -> Result<Self, BoundaryError> {
        if cells.len() != grid.cell_count() {
            return Err(BoundaryError::Grid(format!(
                "{} cells for a {}x{} grid",
                cells.len(),
                grid.t_axis.len(),
                grid.xi_axis.len()
            )));
        }
        Ok(Self {
            protocol: protocol.into(),
            grid,
            cells,
        })
    }

    pub fn cells(&self) -> &[CellStatus] {
        &self.cells
    }

    pub fn cell(&self, t_index: usize, xi_index: usize) -> &CellStatus {
        &self.cells[t_index * self.grid.xi_axis.len() + xi_index]
    }

    /// `(T, xi, status)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64, &CellStatus)> + '_ {
        let n_xi = self.grid.xi_axis.len();
        self.cells.iter().enumerate().map(move |(i, c)| {
            (self.grid.t_axis[i / n_xi], self.grid.xi_axis[i % n_xi], c)
        })
    }

    pub fn present(&self) -> impl Iterator<Item = (f64, f64, &BoundaryPoint)> + '_ {
        self.iter().filter_map(|(t, xi, c)| c.point().map(|p| (t, xi, p)))
    }

    pub fn present_count(&self) -> usize {
        self.cells.iter().filter(|c| c.point().is_some()).count()
    }

    pub fn failed_count(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| matches!(c, CellStatus::Failed { .. }))
            .count()
    }

    /// Index of the grid value nearest to `v` (ties go to the lower index).
    pub fn nearest_index(axis: &[f64], v: f64) -> usize {
        let mut best = 0;
        for (i, &a) in axis.iter().enumerate() {
            if (a - v).abs() < (axis[best] - v).abs() {
                best = i;
            }
        }
        best
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), BoundaryError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for (t, xi, cell) in self.iter() {
            let (a, s) = match cell.point() {
                Some(p) => (fmt_f64(p.alpha_min), fmt_f64(p.skr_at_min)),
                None => (String::new(), String::new()),
            };
            out.write_record([
                self.protocol.as_str(),
                &fmt_f64(t),
                &fmt_f64(xi),
                &a,
                &s,
                cell.label(),
            ])?;
        }
        out.flush().map_err(|e| BoundaryError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Reads a mesh CSV. The alpha axis is not part of the file and must be
    /// supplied by the caller.
    pub fn read_csv<R: Read>(r: R, alpha_axis: Vec<f64>) -> Result<Self, BoundaryError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != CSV_HEADER {
            return Err(BoundaryError::Csv(format!("unexpected header {header:?}")));
        }
        let mut protocol: Option<String> = None;
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize| -> Result<f64, BoundaryError> {
                field(i).parse::<f64>().map_err(|_| {
                    BoundaryError::Csv(format!("row {}: bad number '{}'", line + 2, field(i)))
                })
            };
            match &protocol {
                None => protocol = Some(field(0).to_owned()),
                Some(p) if p != field(0) => {
                    return Err(BoundaryError::Csv(format!(
                        "row {}: mixed protocols '{p}' and '{}'",
                        line + 2,
                        field(0)
                    )))
                }
                _ => {}
            }
            let cell = match field(5) {
                "ok" => CellStatus::Ok(BoundaryPoint {
                    alpha_min: num(3)?,
                    skr_at_min: num(4)?,
                    refined: false,
                }),
                "none" => CellStatus::None,
                "failed" => CellStatus::Failed {
                    reason: "read from file".into(),
                },
                other => {
                    return Err(BoundaryError::Csv(format!(
                        "row {}: unknown status '{other}'",
                        line + 2
                    )))
                }
            };
            rows.push((num(1)?, num(2)?, cell));
        }
        let protocol = protocol.ok_or_else(|| BoundaryError::Csv("no rows".into()))?;

        let mut t_axis: Vec<f64> = Vec::new();
        let mut xi_axis: Vec<f64> = Vec::new();
        for (t, xi, _) in &rows {
            if t_axis.last() != Some(t) {
                t_axis.push(*t);
            }
            if t_axis.len() == 1 {
                xi_axis.push(*xi);
            }
        }
        let grid = SweepGrid::new(t_axis, xi_axis, alpha_axis)?;
        let n_xi = grid.xi_axis.len();
        for (i, (t, xi, _)) in rows.iter().enumerate() {
            if grid.t_axis.get(i / n_xi) != Some(t) || grid.xi_axis[i % n_xi] != *xi {
                return Err(BoundaryError::Csv(format!(
                    "row {} breaks the T-major grid layout",
                    i + 2
                )));
            }
        }
        let cells = rows.into_iter().map(|(_, _, c)| c).collect();
        Self::from_cells(protocol, grid, cells)
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that parses back to the same f64
    format!("{v:?}")
}

/// Result of scanning one alpha axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanHit {
    pub index: usize,
    pub alpha: f64,
    pub skr: f64,
}

/// Ascending scan keeping the smallest strictly positive key rate.
///
/// A new value replaces the current minimum only when it is both positive
/// and strictly smaller, so ties keep the smaller alpha.
pub fn scan_min_positive<F>(alphas: &[f64], mut skr_at: F) -> Result<Option<ScanHit>, EngineError>
where
    F: FnMut(usize, f64) -> Result<f64, EngineError>,
{
    let mut best: Option<ScanHit> = None;
    for (index, &alpha) in alphas.iter().enumerate() {
        let skr = skr_at(index, alpha)?;
        let current = best.map_or(f64::INFINITY, |b| b.skr);
        if skr > 0.0 && skr < current {
            best = Some(ScanHit { index, alpha, skr });
        }
    }
    Ok(best)
}

/// Minimum positive key rate over `alpha_axis` for one channel.
///
/// Returns `(alpha_min, skr_min)`, or `None` when no alpha gives a positive
/// key rate.
pub fn min_positive_scan(
    protocol: &ProtocolSpec,
    ch: &ChannelParams,
    alpha_axis: &[f64],
    cfg: &ProtocolConfig,
) -> Result<Option<(f64, f64)>, EngineError> {
    let hit = scan_min_positive(alpha_axis, |_, alpha| {
        let stats = stats_with_retry(protocol, alpha, cfg)?;
        Ok(engine::skr_from_stats(&stats, ch, cfg)?.skr)
    })?;
    Ok(hit.map(|h| (h.alpha, h.skr)))
}

/// Bisects a sign change of `f` on `[lo, hi]` down to `tol`.
///
/// Requires `f(lo) <= 0 < f(hi)`. Returns `lo` when `f(lo)` is exactly zero,
/// otherwise the midpoint of the final bracket.
pub fn refine_crossing<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64, BoundaryError>
where
    F: FnMut(f64) -> Result<f64, EngineError>,
{
    let (f_lo, f_hi) = (f(lo)?, f(hi)?);
    if !(lo < hi && f_lo <= 0.0 && f_hi > 0.0) {
        return Err(BoundaryError::Bracket { lo, hi, f_lo, f_hi });
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Modulation statistics for one alpha, retried once with a doubled cutoff.
pub fn stats_with_retry(
    protocol: &ProtocolSpec,
    alpha: f64,
    cfg: &ProtocolConfig,
) -> Result<ModulationStats, EngineError> {
    let c = protocol.build(alpha)?;
    ModulationStats::compute(&c, cfg.fock_cutoff)
        .or_else(|_| ModulationStats::compute(&c, cfg.fock_cutoff.doubled(&c)))
}

/// Statistics for every alpha on the grid, in axis order.
pub fn alpha_stats(
    grid: &SweepGrid,
    protocol: &ProtocolSpec,
    cfg: &ProtocolConfig,
) -> Vec<Result<ModulationStats, EngineError>> {
    grid.alpha_axis
        .par_iter()
        .map(|&a| stats_with_retry(protocol, a, cfg))
        .collect()
}

#[derive(Default)]
pub struct SweepOptions<'a> {
    /// Bisect each boundary crossing below the grid alpha.
    pub refine: bool,
    /// Called with `(cells_done, cells_total)` as cells complete.
    pub progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
}

/// Runs the scan for every `(T, xi)` cell. Cells run on the current rayon
/// pool; the result is ordered by cell index and does not depend on
/// scheduling.
pub fn sweep(
    grid: &SweepGrid,
    protocol: &ProtocolSpec,
    cfg: &ProtocolConfig,
    opts: &SweepOptions<'_>,
) -> Result<BoundaryMesh, BoundaryError> {
    cfg.validate()?;
    let stats = alpha_stats(grid, protocol, cfg);
    let total = grid.cell_count();
    let done = AtomicUsize::new(0);
    let n_xi = grid.xi_axis.len();

    let cells: Vec<CellStatus> = (0..total)
        .into_par_iter()
        .map(|i| {
            let cell = sweep_cell(
                grid.t_axis[i / n_xi],
                grid.xi_axis[i % n_xi],
                grid,
                &stats,
                protocol,
                cfg,
                opts.refine,
            );
            if let Some(cb) = opts.progress {
                cb(done.fetch_add(1, Ordering::Relaxed) + 1, total);
            }
            cell
        })
        .collect();

    let failed = cells
        .iter()
        .filter(|c| matches!(c, CellStatus::Failed { .. }))
        .count();
    if failed as f64 > MAX_FAILED_FRACTION * total as f64 {
        return Err(BoundaryError::TooManyFailures { failed, total });
    }
    BoundaryMesh::from_cells(protocol.to_string(), grid.clone(), cells)
}

fn sweep_cell(
    t: f64,
    xi: f64,
    grid: &SweepGrid,
    stats: &[Result<ModulationStats, EngineError>],
    protocol: &ProtocolSpec,
    cfg: &ProtocolConfig,
    refine: bool,
) -> CellStatus {
    let run = || -> Result<CellStatus, BoundaryError> {
        let ch = ChannelParams::new(t, xi)?;
        let skr_at = |i: usize| -> Result<f64, EngineError> {
            let s = stats[i].as_ref().map_err(Clone::clone)?;
            Ok(engine::skr_from_stats(s, &ch, cfg)?.skr)
        };
        let Some(hit) = scan_min_positive(&grid.alpha_axis, |i, _| skr_at(i))? else {
            return Ok(CellStatus::None);
        };
        let mut point = BoundaryPoint {
            alpha_min: hit.alpha,
            skr_at_min: hit.skr,
            refined: false,
        };
        if refine && hit.index > 0 && skr_at(hit.index - 1)? <= 0.0 {
            point.alpha_min = refine_crossing(
                |a| {
                    let s = stats_with_retry(protocol, a, cfg)?;
                    Ok(engine::skr_from_stats(&s, &ch, cfg)?.skr)
                },
                grid.alpha_axis[hit.index - 1],
                hit.alpha,
                REFINE_TOLERANCE,
            )?;
            point.refined = true;
        }
        Ok(CellStatus::Ok(point))
    };
    run().unwrap_or_else(|e| CellStatus::Failed {
        reason: e.to_string(),
    })
}

/// For each T row, the largest xi that still has a boundary point.
pub fn cutoff_curve(mesh: &BoundaryMesh) -> Vec<(f64, f64)> {
    let grid = &mesh.grid;
    (0..grid.t_axis.len())
        .filter_map(|ti| {
            (0..grid.xi_axis.len())
                .rev()
                .find(|&xj| mesh.cell(ti, xj).point().is_some())
                .map(|xj| (grid.t_axis[ti], grid.xi_axis[xj]))
        })
        .collect()
}
