use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use atlas_core::boundary::{alpha_stats, scan_min_positive, stats_with_retry, REFINE_TOLERANCE};
use atlas_core::engine::skr_from_stats;
use atlas_core::fit::{alpha_ave_surface, LevelMetric};
use atlas_core::{
    alpha_ave, compare_levels, compute_skr, cutoff_curve, fit_surface, refine_crossing, AxisSpacing,
    BoundaryMesh, ChannelParams, PolySurface, ProtocolConfig, ProtocolSpec, Region, SweepOptions,
};
use serde::Serialize;

use crate::config::{sha256_hex, RunConfig};
use crate::manifest::{
    check_comparable, load_mesh, manifest_path, tool_id, write_json, CellCounts, LoadedMesh,
    Manifest, Timings,
};
use crate::{
    Cli, CliError, Command, ExportCommand, FitArgs, MetricArgs, PlotArgs, PlotKind, QueryArgs,
    QuerySource, RegionArgs, Spacing, SweepArgs,
};

const DEFAULT_OUT_DIR: &str = "atlas-out";
/// Grid used to average a fitted surface over a region.
const SURFACE_AVERAGE_POINTS: usize = 101;

pub fn run(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads;
    match cli.command {
        Command::Sweep(args) => sweep(args, threads),
        Command::Fit(args) => fit(args),
        Command::Metric(args) => metric(args),
        Command::Query(args) => query(args),
        Command::Plot(args) => plot(args),
        Command::Export(cmd) => export(cmd),
    }
}

fn init_threads(n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("--threads: {e}")))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(CliError::Usage(format!("stdout: {e}")))
                }
                _ => Ok(()),
            }
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn sweep_config(args: &SweepArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            if args.protocols.is_empty() {
                return Err(CliError::Usage(
                    "give --protocol or --config (see `atlas sweep --help`)".into(),
                ));
            }
            RunConfig::default()
        }
    };
    if !args.protocols.is_empty() {
        cfg.protocols = args.protocols.clone();
    }
    let g = &mut cfg.grid;
    if let Some(v) = args.t_steps {
        g.t_steps = v;
    }
    if let Some(v) = args.xi_min {
        g.xi_min = v;
    }
    if let Some(v) = args.xi_max {
        g.xi_max = v;
    }
    if let Some(v) = args.xi_steps {
        g.xi_steps = v;
    }
    if let Some(v) = args.xi_spacing {
        g.xi_spacing = match v {
            Spacing::Linear => AxisSpacing::Linear,
            Spacing::Log => AxisSpacing::Log,
        };
    }
    if let Some(v) = args.alpha_steps {
        g.alpha_steps = v;
    }
    cfg.refine |= args.refine;
    cfg.output.breakdown |= args.breakdown;
    cfg.validate()?;
    Ok(cfg)
}

fn sweep(args: SweepArgs, threads: Option<usize>) -> Result<(), CliError> {
    let mut cfg = sweep_config(&args)?;
    if let Some(n) = threads {
        cfg.threads = n;
    }
    init_threads(cfg.threads)?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;

    let grid = cfg.grid.build()?;
    let engine = cfg.engine.build()?;
    let specs = cfg.protocol_specs()?;
    let config_hash = cfg.config_hash();
    let comparison_hash = cfg.comparison_hash();
    let mut written = Vec::new();

    for spec in &specs {
        let name = spec.to_string();
        let start = Instant::now();
        let report = |done: usize, total: usize| {
            if done % (total / 20).max(1) == 0 || done == total {
                eprintln!("{name}: {done}/{total} cells");
            }
        };
        let opts = SweepOptions {
            refine: cfg.refine,
            progress: args.progress.then_some(&report as &(dyn Fn(usize, usize) + Sync)),
        };
        let mesh = atlas_core::sweep(&grid, spec, &engine, &opts)
            .map_err(|e| CliError::Compute(format!("{name}: {e}")))?;
        let sweep_ms = start.elapsed().as_secs_f64() * 1e3;

        let write_start = Instant::now();
        let csv = mesh.to_csv_string();
        let csv_path = out_dir.join(format!("{name}.csv"));
        std::fs::write(&csv_path, &csv).map_err(|e| CliError::io(&csv_path, e))?;
        if cfg.output.breakdown {
            write_breakdowns(&out_dir.join(format!("{name}.breakdown.jsonl")), &mesh, spec, &engine)?;
        }
        let counts = CellCounts::of(&mesh);
        let manifest = Manifest {
            tool: tool_id(),
            protocol: name.clone(),
            config_hash: config_hash.clone(),
            comparison_hash: comparison_hash.clone(),
            mesh_file: csv_path.file_name().unwrap().to_string_lossy().into_owned(),
            mesh_sha256: sha256_hex(csv.as_bytes()),
            cells: counts.clone(),
            refine: cfg.refine,
            threads: rayon::current_num_threads(),
            timings: Timings {
                sweep_ms,
                write_ms: write_start.elapsed().as_secs_f64() * 1e3,
            },
            config: cfg.clone(),
        };
        write_json(&manifest_path(&csv_path), &manifest)?;
        println!(
            "{name}: {} cells, {} feasible, {} cut-off, {} failed -> {} ({:.2} s)",
            counts.total,
            counts.present,
            counts.absent,
            counts.failed,
            csv_path.display(),
            sweep_ms / 1e3
        );
        written.push((csv_path, mesh));
    }

    if let Some(study) = &cfg.study {
        let region = study.region()?;
        let mut metrics = Vec::new();
        for (csv_path, mesh) in &written {
            // The ranking only needs the mesh; a region too thin for the
            // cubic is reported and the surface skipped.
            match fit_surface(mesh, &region) {
                Ok(mut s) => {
                    s.source_hash = Some(config_hash.clone());
                    let path = csv_path.with_extension("surface.json");
                    std::fs::write(&path, s.to_json() + "\n")
                        .map_err(|e| CliError::io(&path, e))?;
                }
                Err(e) => eprintln!("warning: {}: no surface over {region}: {e}", mesh.protocol),
            }
            metrics.push(
                alpha_ave(mesh, &region)
                    .map_err(|e| CliError::Compute(format!("{}: {e}", mesh.protocol)))?,
            );
        }
        let ranked = compare_levels(&metrics).map_err(|e| CliError::Compute(e.to_string()))?;
        let path = out_dir.join(format!("{}.metric.json", study.name));
        write_json(&path, &ranking_rows(&ranked))?;
        println!("study {} ({region}):", study.name);
        print!("{}", ranking_table(&ranked));
    }
    Ok(())
}

fn write_breakdowns(
    path: &Path,
    mesh: &BoundaryMesh,
    spec: &ProtocolSpec,
    engine: &ProtocolConfig,
) -> Result<(), CliError> {
    let stats = alpha_stats(&mesh.grid, spec, engine);
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (t, xi, _) in mesh.iter() {
        let ch = ChannelParams::new(t, xi).map_err(|e| CliError::Compute(e.to_string()))?;
        for (s, alpha) in stats.iter().zip(mesh.grid.alpha_axis()) {
            let line = match s.as_ref().map_err(Clone::clone).and_then(|s| skr_from_stats(s, &ch, engine)) {
                Ok(b) => serde_json::json!({"T": t, "xi": xi, "alpha": alpha, "breakdown": b}),
                Err(e) => serde_json::json!({"T": t, "xi": xi, "alpha": alpha, "error": e.to_string()}),
            };
            writeln!(w, "{line}").map_err(|e| CliError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn region_for(args: &RegionArgs, mesh: &BoundaryMesh) -> Result<Region, CliError> {
    let whole = Region::of_grid(&mesh.grid);
    Region::new(
        args.t_range.unwrap_or(whole.t),
        args.xi_range.unwrap_or(whole.xi),
    )
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn fit(args: FitArgs) -> Result<(), CliError> {
    let loaded = load_mesh(&args.mesh, args.force)?;
    let region = region_for(&args.region, &loaded.mesh)?;
    let mut s = fit_surface(&loaded.mesh, &region)
        .map_err(|e| CliError::Compute(format!("{}: {e}", args.mesh.display())))?;
    s.source_hash = loaded.config_hash().map(str::to_owned);
    write_output(args.out.as_deref(), &(s.to_json() + "\n"))
}

#[derive(Serialize)]
struct RankRow<'a> {
    rank: usize,
    protocol: &'a str,
    alpha_ave: f64,
    cell_count: usize,
    region: Region,
    source: atlas_core::fit::MetricSource,
}

fn ranking_rows(ranked: &[LevelMetric]) -> Vec<RankRow<'_>> {
    ranked
        .iter()
        .enumerate()
        .map(|(i, m)| RankRow {
            rank: i + 1,
            protocol: &m.protocol,
            alpha_ave: m.alpha_ave,
            cell_count: m.cell_count,
            region: m.region,
            source: m.source,
        })
        .collect()
}

fn ranking_table(ranked: &[LevelMetric]) -> String {
    let mut s = format!("{:<5} {:<18} {:>10} {:>7}\n", "rank", "protocol", "alpha_ave", "cells");
    for (i, m) in ranked.iter().enumerate() {
        s += &format!(
            "{:<5} {:<18} {:>10.4} {:>7}\n",
            i + 1,
            m.protocol,
            m.alpha_ave,
            m.cell_count
        );
    }
    s
}

fn metric(args: MetricArgs) -> Result<(), CliError> {
    let loaded: Vec<LoadedMesh> = args
        .meshes
        .iter()
        .map(|p| load_mesh(p, args.force))
        .collect::<Result<_, _>>()?;
    check_comparable(&loaded, args.force)?;
    let region = region_for(&args.region, &loaded[0].mesh)?;
    let mut metrics = Vec::new();
    for l in &loaded {
        let m = if args.from_surface {
            let s = fit_surface(&l.mesh, &region)
                .map_err(|e| CliError::Compute(format!("{}: {e}", l.path.display())))?;
            alpha_ave_surface(&s, &region, SURFACE_AVERAGE_POINTS)
        } else {
            alpha_ave(&l.mesh, &region)
        }
        .map_err(|e| CliError::Compute(format!("{}: {e}", l.path.display())))?;
        metrics.push(m);
    }
    let ranked = compare_levels(&metrics).map_err(|e| CliError::Compute(e.to_string()))?;
    if args.json {
        write_output(None, &to_json(&ranking_rows(&ranked)))
    } else {
        write_output(None, &format!("region: {region}\n{}", ranking_table(&ranked)))
    }
}

#[derive(Debug, Serialize)]
struct QueryResult {
    protocol: String,
    #[serde(rename = "T")]
    t: f64,
    xi: f64,
    feasible: bool,
    alpha_min: Option<f64>,
    source: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    extrapolated: Option<bool>,
}

fn query(args: QueryArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.t) || !(args.xi > 0.0) || !args.xi.is_finite() {
        return Err(CliError::Usage(format!(
            "need T in [0, 1] and xi > 0, got T={} xi={}",
            args.t, args.xi
        )));
    }
    let loaded = load_mesh(&args.mesh, args.force)?;
    let mesh = &loaded.mesh;
    let ti = BoundaryMesh::nearest_index(mesh.grid.t_axis(), args.t);
    let xj = BoundaryMesh::nearest_index(mesh.grid.xi_axis(), args.xi);
    let cell = mesh.cell(ti, xj).point().copied();

    let mut extrapolated = None;
    let (alpha_min, source) = match args.source {
        QuerySource::MeshCell => (cell.map(|p| p.alpha_min), "mesh-cell"),
        QuerySource::Refined => (refined_query(&loaded, args.t, args.xi)?, "refined"),
        QuerySource::Surface => {
            let path = args.surface.as_ref().ok_or_else(|| {
                CliError::Usage("--source surface needs --surface FILE".into())
            })?;
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let s = PolySurface::from_json(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            if s.protocol != mesh.protocol && !args.force {
                return Err(CliError::Usage(format!(
                    "surface is for {} but mesh is {} (use --force)",
                    s.protocol, mesh.protocol
                )));
            }
            let (v, outside) = s.evaluate_checked(args.t, args.xi);
            extrapolated = Some(outside);
            if outside {
                eprintln!("warning: ({}, {}) lies outside the fit region {}", args.t, args.xi, s.fit_region);
            }
            (cell.map(|_| v), "surface-interpolated")
        }
    };
    let result = QueryResult {
        protocol: mesh.protocol.clone(),
        t: args.t,
        xi: args.xi,
        feasible: alpha_min.is_some(),
        alpha_min,
        source,
        extrapolated,
    };
    if args.json {
        write_output(None, &to_json(&result))
    } else {
        let line = match result.alpha_min {
            Some(a) => format!(
                "{} at T={} xi={}: feasible, alpha_min = {a} ({source})\n",
                result.protocol, result.t, result.xi
            ),
            None => format!(
                "{} at T={} xi={}: no positive key rate for alpha in the grid range ({source})\n",
                result.protocol, result.t, result.xi
            ),
        };
        write_output(None, &line)
    }
}

/// Scans the mesh's alpha axis at the exact channel and bisects the crossing.
fn refined_query(loaded: &LoadedMesh, t: f64, xi: f64) -> Result<Option<f64>, CliError> {
    let spec: ProtocolSpec = loaded
        .mesh
        .protocol
        .parse()
        .map_err(|e| CliError::Usage(format!("mesh protocol: {e}")))?;
    let engine = match &loaded.manifest {
        Some(m) => m.config.engine.build()?,
        None => ProtocolConfig::default(),
    };
    let ch = ChannelParams::new(t, xi).map_err(|e| CliError::Usage(e.to_string()))?;
    let compute = |e: atlas_core::EngineError| CliError::Compute(e.to_string());
    let skr = |a: f64| -> Result<f64, atlas_core::EngineError> {
        let s = stats_with_retry(&spec, a, &engine)?;
        Ok(skr_from_stats(&s, &ch, &engine)?.skr)
    };
    let alphas = loaded.mesh.grid.alpha_axis();
    let Some(hit) = scan_min_positive(alphas, |_, a| skr(a)).map_err(compute)? else {
        return Ok(None);
    };
    if hit.index == 0 || skr(alphas[hit.index - 1]).map_err(compute)? > 0.0 {
        return Ok(Some(hit.alpha));
    }
    refine_crossing(skr, alphas[hit.index - 1], hit.alpha, REFINE_TOLERANCE)
        .map(Some)
        .map_err(|e| CliError::Compute(e.to_string()))
}

fn plot(args: PlotArgs) -> Result<(), CliError> {
    let loaded: Vec<LoadedMesh> = args
        .meshes
        .iter()
        .map(|p| load_mesh(p, args.force))
        .collect::<Result<_, _>>()?;
    let meshes: Vec<&BoundaryMesh> = loaded.iter().map(|l| &l.mesh).collect();
    let svg = match args.kind {
        PlotKind::Slice => {
            if let Some(bad) = args.t_values.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(CliError::Usage(format!("--T value {bad} outside [0, 1]")));
            }
            crate::plot::slice_svg(&meshes, &args.t_values)
        }
        PlotKind::Heatmap => crate::plot::heatmap_svg(&meshes),
    };
    write_output(args.out.as_deref(), &svg)
}

fn export(cmd: ExportCommand) -> Result<(), CliError> {
    match cmd {
        ExportCommand::Constellation {
            protocol,
            alpha,
            out,
        } => {
            let spec: ProtocolSpec = protocol
                .parse()
                .map_err(|e| CliError::Usage(format!("protocol '{protocol}': {e}")))?;
            let c = spec.build(alpha).map_err(|e| CliError::Usage(e.to_string()))?;
            write_output(out.as_deref(), &(c.to_json() + "\n"))
        }
        ExportCommand::Mesh { mesh, out, force } => {
            let l = load_mesh(&mesh, force)?;
            write_output(out.as_deref(), &to_json(&l.mesh))
        }
        ExportCommand::Cutoff { mesh, out, force } => {
            let l = load_mesh(&mesh, force)?;
            let mut s = String::from("T,xi_max\n");
            for (t, xi) in cutoff_curve(&l.mesh) {
                s += &format!("{t:?},{xi:?}\n");
            }
            write_output(out.as_deref(), &s)
        }
        ExportCommand::Breakdown {
            protocol,
            t,
            xi,
            alpha,
            config,
            out,
        } => {
            let spec: ProtocolSpec = protocol
                .parse()
                .map_err(|e| CliError::Usage(format!("protocol '{protocol}': {e}")))?;
            let engine = match config {
                Some(p) => RunConfig::load(&p)?.engine.build()?,
                None => ProtocolConfig::default(),
            };
            let ch = ChannelParams::new(t, xi).map_err(|e| CliError::Usage(e.to_string()))?;
            let c = spec.build(alpha).map_err(|e| CliError::Usage(e.to_string()))?;
            let b = compute_skr(&c, &ch, &engine).map_err(|e| CliError::Compute(e.to_string()))?;
            write_output(out.as_deref(), &to_json(&b))
        }
    }
}
