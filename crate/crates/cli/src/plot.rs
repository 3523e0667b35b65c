//! Static SVG rendering of boundary meshes. Output depends only on the input
//! meshes, so identical inputs give byte-identical files.

use std::fmt::Write;

use atlas_core::{BoundaryMesh, CellStatus};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
const DASHES: [&str; 4] = ["", "6 3", "2 3", "8 3 2 3"];
const CUTOFF_FILL: &str = "#c8c8c8";

const W: f64 = 760.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn header(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Boundary alpha against xi for fixed-T rows, one curve per mesh and T.
pub fn slice_svg(meshes: &[&BoundaryMesh], t_values: &[f64]) -> String {
    let mut out = String::new();
    header(&mut out, W, H, "Minimum positive SKR boundary slices");
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);

    let xi_lo = meshes.iter().map(|m| m.grid.xi_axis()[0]).fold(f64::INFINITY, f64::min);
    let xi_hi = meshes
        .iter()
        .map(|m| *m.grid.xi_axis().last().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let a_lo = meshes.iter().map(|m| m.grid.alpha_bounds().0).fold(f64::INFINITY, f64::min);
    let a_hi = meshes
        .iter()
        .map(|m| m.grid.alpha_bounds().1)
        .fold(f64::NEG_INFINITY, f64::max);
    let x = |xi: f64| LEFT + pw * (xi - xi_lo) / (xi_hi - xi_lo);
    let y = |a: f64| TOP + ph * (1.0 - (a - a_lo) / (a_hi - a_lo));

    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for v in ticks(xi_lo, xi_hi, 5) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.3}</text>"#,
            x(v),
            TOP + ph + 18.0
        );
    }
    for v in ticks(a_lo, a_hi, 4) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">xi (SNU)</text>"#,
        LEFT + pw / 2.0,
        H - 18.0
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">alpha_min (SNU)</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    let mut legend = 0;
    for (mi, mesh) in meshes.iter().enumerate() {
        let colour = PALETTE[mi % PALETTE.len()];
        for (k, &t) in t_values.iter().enumerate() {
            let ti = BoundaryMesh::nearest_index(mesh.grid.t_axis(), t);
            let t_row = mesh.grid.t_axis()[ti];
            let pts: Vec<String> = (0..mesh.grid.xi_axis().len())
                .filter_map(|xj| {
                    mesh.cell(ti, xj).point().map(|p| {
                        format!("{:.2},{:.2}", x(mesh.grid.xi_axis()[xj]), y(p.alpha_min))
                    })
                })
                .collect();
            let dash = DASHES[k % DASHES.len()];
            let dash_attr = if dash.is_empty() {
                String::new()
            } else {
                format!(r#" stroke-dasharray="{dash}""#)
            };
            let _ = writeln!(
                out,
                r#"<polyline class="slice" fill="none" stroke="{colour}" stroke-width="1.6"{dash_attr} points="{}"/>"#,
                pts.join(" ")
            );
            let ly = TOP + 10.0 + 18.0 * legend as f64;
            let lx = W - RIGHT + 14.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="1.6"{dash_attr}/>"#,
                lx + 26.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}">{} T={t_row:.3}</text>"#,
                lx + 32.0,
                ly + 4.0,
                escape(&mesh.protocol)
            );
            legend += 1;
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Linear blend through a fixed dark-blue to yellow ramp.
fn ramp(f: f64) -> String {
    const STOPS: [(f64, f64, f64); 4] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (253.0, 231.0, 37.0),
    ];
    let f = f.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (f.floor() as usize).min(STOPS.len() - 2);
    let u = f - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * u).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// `alpha_min` over the `(xi, T)` grid, one panel per mesh. Cut-off cells
/// are drawn in grey.
pub fn heatmap_svg(meshes: &[&BoundaryMesh]) -> String {
    let panel_w = 360.0;
    let panel_h = 300.0;
    let gap = 90.0;
    let width = LEFT + meshes.len() as f64 * (panel_w + gap) + 40.0;
    let height = TOP + panel_h + BOTTOM + 50.0;
    let mut out = String::new();
    header(&mut out, width, height, "Minimum positive SKR boundary alpha_min");

    let a_lo = meshes.iter().map(|m| m.grid.alpha_bounds().0).fold(f64::INFINITY, f64::min);
    let a_hi = meshes
        .iter()
        .map(|m| m.grid.alpha_bounds().1)
        .fold(f64::NEG_INFINITY, f64::max);

    for (mi, mesh) in meshes.iter().enumerate() {
        let x0 = LEFT + mi as f64 * (panel_w + gap);
        let y0 = TOP + 10.0;
        let (nt, nx) = (mesh.grid.t_axis().len(), mesh.grid.xi_axis().len());
        let cw = panel_w / nx as f64;
        let ch = panel_h / nt as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x0 + panel_w / 2.0,
            y0 - 4.0,
            escape(&mesh.protocol)
        );
        for ti in 0..nt {
            for xj in 0..nx {
                let (fill, class) = match mesh.cell(ti, xj) {
                    CellStatus::Ok(p) => (ramp((p.alpha_min - a_lo) / (a_hi - a_lo)), "cell"),
                    CellStatus::None => (CUTOFF_FILL.to_owned(), "cutoff"),
                    CellStatus::Failed { .. } => ("#ff00ff".to_owned(), "failed"),
                };
                // T grows upwards
                let _ = writeln!(
                    out,
                    r#"<rect class="{class}" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    x0 + xj as f64 * cw,
                    y0 + (nt - 1 - ti) as f64 * ch,
                    cw + 0.05,
                    ch + 0.05
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{panel_w}" height="{panel_h}" fill="none" stroke="black"/>"#
        );
        let xi = mesh.grid.xi_axis();
        let t = mesh.grid.t_axis();
        for (j, frac) in [0.0, 0.5, 1.0].iter().enumerate() {
            let idx = ((nx - 1) as f64 * frac).round() as usize;
            let anchor = ["start", "middle", "end"][j];
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="{anchor}">{:.3}</text>"#,
                x0 + panel_w * frac,
                y0 + panel_h + 16.0,
                xi[idx]
            );
            let tdx = ((nt - 1) as f64 * frac).round() as usize;
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.2}</text>"#,
                x0 - 5.0,
                y0 + panel_h * (1.0 - frac) + 4.0,
                t[tdx]
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">xi (SNU)</text>"#,
            x0 + panel_w / 2.0,
            y0 + panel_h + 34.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">T</text>"#,
            x0 - 40.0,
            y0 + panel_h / 2.0
        );
    }

    // colour bar and cut-off key
    let by = height - 34.0;
    for i in 0..50 {
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{by:.2}" width="4.2" height="12" fill="{}"/>"#,
            LEFT + 4.0 * i as f64,
            ramp(i as f64 / 49.0)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{LEFT}" y="{:.2}">{a_lo:.2}</text><text x="{:.2}" y="{:.2}" text-anchor="end">{a_hi:.2}</text>"#,
        by + 26.0,
        LEFT + 200.0,
        by + 26.0
    );
    let _ = writeln!(
        out,
        r#"<rect x="{:.2}" y="{by:.2}" width="14" height="12" fill="{CUTOFF_FILL}"/><text x="{:.2}" y="{:.2}">no positive SKR (cut-off)</text>"#,
        LEFT + 240.0,
        LEFT + 260.0,
        by + 10.0
    );
    out.push_str("</svg>\n");
    out
}
