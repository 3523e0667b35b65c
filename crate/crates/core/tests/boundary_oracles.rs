use atlas_core::boundary::{alpha_stats, axis, AxisSpacing};
use atlas_core::{
    compute_skr, cutoff_curve, min_positive_scan, sweep, BoundaryMesh, CellStatus, ChannelParams,
    ProtocolConfig, ProtocolSpec, SweepGrid, SweepOptions,
};

fn spec(s: &str) -> ProtocolSpec {
    s.parse().unwrap()
}

/// Direct evaluation at every alpha, no shared statistics.
fn brute_force_min(p: &ProtocolSpec, ch: &ChannelParams, alphas: &[f64]) -> Option<(f64, f64)> {
    let cfg = ProtocolConfig::default();
    let mut best: Option<(f64, f64)> = None;
    for &a in alphas {
        let skr = compute_skr(&p.build(a).unwrap(), ch, &cfg).unwrap().skr;
        if skr > 0.0 && best.is_none_or(|(_, s)| skr < s) {
            best = Some((a, skr));
        }
    }
    best
}

fn small_grid() -> SweepGrid {
    SweepGrid::new(
        axis(0.0, 1.0, 11, AxisSpacing::Linear),
        axis(0.001, 0.1, 12, AxisSpacing::Linear),
        axis(0.1, 0.5, 40, AxisSpacing::Linear),
    )
    .unwrap()
}

#[test]
fn far_channel_is_infeasible_for_psk16() {
    let p = spec("psk16");
    let ch = ChannelParams::new(0.01, 0.5).unwrap();
    let fine = axis(0.1, 0.5, 2001, AxisSpacing::Linear);
    assert_eq!(brute_force_min(&p, &ch, &fine), None);
    let table = SweepGrid::reference();
    let scan = min_positive_scan(&p, &ch, table.alpha_axis(), &ProtocolConfig::default()).unwrap();
    assert_eq!(scan, None);
}

#[test]
fn scan_matches_brute_force() {
    let table = SweepGrid::reference();
    let cfg = ProtocolConfig::default();
    for name in ["psk16", "qam16", "apsk16"] {
        let p = spec(name);
        for (t, xi) in [(1.0, 0.001), (0.5, 0.01), (0.8, 0.03), (0.2, 0.005)] {
            let ch = ChannelParams::new(t, xi).unwrap();
            let scan = min_positive_scan(&p, &ch, table.alpha_axis(), &cfg).unwrap();
            assert_eq!(scan, brute_force_min(&p, &ch, table.alpha_axis()), "{name} T={t} xi={xi}");
        }
    }
}

#[test]
fn near_perfect_channel_is_feasible_for_qam16() {
    let p = spec("qam16");
    let ch = ChannelParams::new(1.0, 0.001).unwrap();
    let table = SweepGrid::reference();
    let (alpha, skr) = min_positive_scan(&p, &ch, table.alpha_axis(), &ProtocolConfig::default())
        .unwrap()
        .expect("feasible");
    assert!(skr > 0.0);
    assert!((0.1..=0.5).contains(&alpha));
}

#[test]
fn apsk16_changes_sign_near_region_edge() {
    let p = spec("apsk16");
    let ch = ChannelParams::new(1.0, 0.042).unwrap();
    let cfg = ProtocolConfig::default();
    let skr: Vec<f64> = axis(0.1, 0.5, 81, AxisSpacing::Linear)
        .iter()
        .map(|&a| compute_skr(&p.build(a).unwrap(), &ch, &cfg).unwrap().skr)
        .collect();
    assert!(skr.windows(2).any(|w| w[0] <= 0.0 && w[1] > 0.0), "{skr:?}");
}

#[test]
fn apsk16_frontier_grows_with_transmittance() {
    let mesh = sweep(&SweepGrid::reference(), &spec("apsk16"), &ProtocolConfig::default(), &SweepOptions::default())
        .unwrap();
    let curve = cutoff_curve(&mesh);
    let at = |t: f64| {
        curve
            .iter()
            .find(|(ct, _)| (ct - t).abs() < 1e-12)
            .map(|&(_, xi)| xi)
            .unwrap_or(0.0)
    };
    let t_half = mesh.grid.t_axis()[BoundaryMesh::nearest_index(mesh.grid.t_axis(), 0.5)];
    assert!(at(1.0) > at(t_half), "{} vs {}", at(1.0), at(t_half));
}

#[test]
fn refined_crossings_sit_within_one_step() {
    let grid = small_grid();
    let p = spec("apsk16");
    let cfg = ProtocolConfig::default();
    let plain = sweep(&grid, &p, &cfg, &SweepOptions::default()).unwrap();
    let refined = sweep(
        &grid,
        &p,
        &cfg,
        &SweepOptions {
            refine: true,
            progress: None,
        },
    )
    .unwrap();
    let step = grid.alpha_step();
    let mut n_refined = 0;
    for (a, b) in plain.cells().iter().zip(refined.cells()) {
        match (a.point(), b.point()) {
            (Some(a), Some(b)) => {
                assert!(b.alpha_min <= a.alpha_min + 1e-12);
                assert!(b.alpha_min >= a.alpha_min - step - 1e-12);
                n_refined += b.refined as usize;
            }
            (None, None) => {}
            _ => panic!("refinement changed feasibility"),
        }
    }
    assert!(n_refined > 0);
}

#[test]
fn sweep_agrees_with_per_cell_scan() {
    let grid = small_grid();
    let p = spec("psk16");
    let cfg = ProtocolConfig::default();
    let mesh = sweep(&grid, &p, &cfg, &SweepOptions::default()).unwrap();
    for (t, xi, cell) in mesh.iter() {
        let ch = ChannelParams::new(t, xi).unwrap();
        let scan = min_positive_scan(&p, &ch, grid.alpha_axis(), &cfg).unwrap();
        match (cell, scan) {
            (CellStatus::Ok(pt), Some((a, s))) => {
                assert_eq!(pt.alpha_min, a);
                assert_eq!(pt.skr_at_min, s);
            }
            (CellStatus::None, None) => {}
            other => panic!("mismatch at T={t} xi={xi}: {other:?}"),
        }
    }
    assert!(alpha_stats(&grid, &p, &cfg).iter().all(Result::is_ok));
}

#[test]
fn csv_round_trip_of_real_sweep() {
    let grid = small_grid();
    let mesh = sweep(&grid, &spec("qam16"), &ProtocolConfig::default(), &SweepOptions::default()).unwrap();
    let text = mesh.to_csv_string();
    let back = BoundaryMesh::read_csv(text.as_bytes(), grid.alpha_axis().to_vec()).unwrap();
    assert_eq!(back, mesh);
    assert_eq!(back.to_csv_string(), text);
}
