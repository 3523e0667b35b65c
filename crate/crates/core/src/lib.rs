//! Minimum-positive secret key rate boundaries for discrete-modulated
//! CV-QKD constellations.
//!
//! - [`constellation`]: PSK, QAM and APSK coherent-state alphabets.
//! - [`engine`]: key rate for one constellation over a lossy, noisy channel.
//! - [`boundary`]: sweep over `(T, xi, alpha)` and the boundary mesh.
//! - [`fit`]: cubic surface fit and the alpha_ave level metric.

pub mod boundary;
pub mod constellation;
pub mod engine;
pub mod fit;
pub mod fock;

pub use boundary::{
    cutoff_curve, min_positive_scan, refine_crossing, sweep, AxisSpacing, BoundaryError,
    BoundaryMesh, BoundaryPoint, CellStatus, SweepGrid, SweepOptions,
};
pub use constellation::{
    Constellation, ConstellationError, ConstellationPoint, ProtocolKind, ProtocolSpec,
    ProtocolTag, QamDistribution,
};
pub use engine::{
    compute_skr, ChannelParams, Detection, EngineError, FockCutoff, ModulationStats,
    NoiseReference, ProtocolConfig, SkrBreakdown,
};
pub use fit::{
    alpha_ave, compare_levels, evaluate_surface, fit_surface, FitError, LevelMetric, PolySurface,
    Region,
};
