//! `atlas`: map, fit and rank minimum positive secret key rate boundaries of
//! discrete-modulated CV-QKD protocols.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod manifest;
mod plot;

/// Exit 2: bad usage, configuration or input files. Exit 3: a computation
/// failed.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Compute(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Compute(m) => write!(f, "computation failed: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "atlas", version, about, long_about = None)]
pub struct Cli {
    /// Worker threads for sweeps (0 = all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sweep (T, xi, alpha) and write one boundary mesh per protocol.
    Sweep(SweepArgs),
    /// Fit the cubic surface alpha(T, xi) to a mesh.
    Fit(FitArgs),
    /// Rank meshes by their mean boundary alpha over a region.
    Metric(MetricArgs),
    /// Minimum alpha with a positive key rate at one channel.
    Query(QueryArgs),
    /// Render meshes as SVG slices or heatmaps.
    Plot(PlotArgs),
    /// Export constellations, meshes, cut-off curves or key rate breakdowns.
    #[command(subcommand)]
    Export(ExportCommand),
}

#[derive(Args, Debug, Clone, Default)]
pub struct RegionArgs {
    /// T bounds of the region, e.g. `0,1`. Defaults to the whole grid.
    #[arg(long, value_parser = parse_range, value_name = "LO,HI", allow_hyphen_values = true)]
    pub t_range: Option<(f64, f64)>,
    /// xi bounds of the region, e.g. `0,0.042`. Defaults to the whole grid.
    #[arg(long, value_parser = parse_range, value_name = "LO,HI", allow_hyphen_values = true)]
    pub xi_range: Option<(f64, f64)>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected LO,HI, got '{s}'"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}"));
    Ok((num(lo)?, num(hi)?))
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Run configuration (TOML).
    #[arg(long, conflicts_with = "defaults")]
    pub config: Option<PathBuf>,
    /// Protocols such as psk16, qam16, qam16-gauss0.1, apsk64. Replaces the
    /// configured list.
    #[arg(long = "protocol", value_delimiter = ',')]
    pub protocols: Vec<String>,
    /// Use the default grid and engine settings.
    #[arg(long)]
    pub defaults: bool,
    #[arg(long)]
    pub t_steps: Option<usize>,
    #[arg(long)]
    pub xi_min: Option<f64>,
    #[arg(long)]
    pub xi_max: Option<f64>,
    #[arg(long)]
    pub xi_steps: Option<usize>,
    #[arg(long, value_enum)]
    pub xi_spacing: Option<Spacing>,
    #[arg(long)]
    pub alpha_steps: Option<usize>,
    /// Bisect each boundary crossing below the grid alpha.
    #[arg(long)]
    pub refine: bool,
    /// Also dump every key rate breakdown as JSON lines.
    #[arg(long)]
    pub breakdown: bool,
    /// Output directory.
    #[arg(long, env = "ATLAS_OUT_DIR")]
    pub out: Option<PathBuf>,
    /// Print progress to stderr.
    #[arg(long)]
    pub progress: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Mesh CSV written by `sweep`.
    pub mesh: PathBuf,
    #[command(flatten)]
    pub region: RegionArgs,
    /// Write the surface JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Accept meshes whose manifest is missing or does not match.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct MetricArgs {
    /// Mesh CSVs written by `sweep`.
    #[arg(required = true)]
    pub meshes: Vec<PathBuf>,
    #[command(flatten)]
    pub region: RegionArgs,
    /// Machine-readable output.
    #[arg(long)]
    pub json: bool,
    /// Average the fitted surface instead of the mesh cells.
    #[arg(long)]
    pub from_surface: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySource {
    /// Nearest mesh cell.
    MeshCell,
    /// Fresh scan at the exact channel, with the crossing bisected.
    Refined,
    /// Fitted surface, feasibility taken from the nearest mesh cell.
    Surface,
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    /// Mesh CSV; decides feasibility and supplies the protocol.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Surface JSON, for `--source surface`.
    #[arg(long)]
    pub surface: Option<PathBuf>,
    /// Transmittance in [0, 1].
    #[arg(long = "T", alias = "t", allow_negative_numbers = true)]
    pub t: f64,
    /// Excess noise (SNU), > 0.
    #[arg(long, allow_negative_numbers = true)]
    pub xi: f64,
    #[arg(long, value_enum, default_value_t = QuerySource::MeshCell)]
    pub source: QuerySource,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// alpha_min against xi at fixed T.
    Slice,
    /// alpha_min over the (xi, T) grid with the cut-off shaded.
    Heatmap,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(required = true)]
    pub meshes: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Transmittance rows for slice plots.
    #[arg(long = "T", value_delimiter = ',', default_value = "0.5,0.75,1")]
    pub t_values: Vec<f64>,
    /// SVG file; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
pub enum ExportCommand {
    /// Constellation points as JSON.
    Constellation {
        #[arg(long)]
        protocol: String,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mesh as JSON, including the grid axes.
    Mesh {
        mesh: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Largest feasible xi per T row, as CSV.
    Cutoff {
        mesh: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Every intermediate quantity of one key rate evaluation.
    Breakdown {
        #[arg(long)]
        protocol: String,
        #[arg(long = "T", alias = "t")]
        t: f64,
        #[arg(long)]
        xi: f64,
        #[arg(long)]
        alpha: f64,
        /// Engine settings; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
