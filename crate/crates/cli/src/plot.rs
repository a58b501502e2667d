//! Plot data: CSV scatter for vector states, per-pixel mean/SD grids for
//! images, and a bare-bones SVG scatter.

use std::fmt::Write as _;

use flowcast_core::dataset::fmt_f64;
use flowcast_core::metrics::{ensemble_mean_state, ensemble_sd_state};
use flowcast_core::Ensemble;

/// One row per member: `member,x1..xd`, plus the origin when recorded.
pub fn scatter_csv(e: &Ensemble) -> String {
    let d = e.dims().len();
    let mut out = String::from("member");
    for k in 1..=d {
        let _ = write!(out, ",x{k}");
    }
    if e.origins().is_some() {
        for k in 1..=d {
            let _ = write!(out, ",origin{k}");
        }
    }
    out.push('\n');
    for (i, m) in e.members().iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in m {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        if let Some(o) = e.origins() {
            for v in &o[i] {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// `channel,row,col,mean,sd` for every pixel.
pub fn grid_csv(e: &Ensemble) -> String {
    let dims = e.dims();
    let mean = ensemble_mean_state(e);
    let sd = ensemble_sd_state(e);
    let mut out = String::from("channel,row,col,mean,sd\n");
    for c in 0..dims.channels {
        for r in 0..dims.height {
            for col in 0..dims.width {
                let k = (c * dims.height + r) * dims.width + col;
                let _ = writeln!(out, "{c},{r},{col},{},{}", fmt_f64(mean[k]), fmt_f64(sd[k]));
            }
        }
    }
    out
}

pub fn ensemble_csv(e: &Ensemble) -> String {
    if e.dims().is_grid() {
        grid_csv(e)
    } else {
        scatter_csv(e)
    }
}

/// Scatter of the first two components of each named ensemble.
pub fn scatter_svg(series: &[(&str, &Ensemble)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 480.0;
    const PAD: f64 = 40.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

    let points = |e: &Ensemble| -> Vec<(f64, f64)> {
        e.members()
            .iter()
            .map(|m| (m[0], if m.len() > 1 { m[1] } else { 0.0 }))
            .collect()
    };
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, e)| points(e)).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if !(y1 > y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="{}" font-size="11">x1 [{x0:.3}, {x1:.3}]  x2 [{y0:.3}, {y1:.3}]</text>"#,
        H - 12.0
    );
    for (s, (name, e)) in series.iter().enumerate() {
        let color = COLORS[s % COLORS.len()];
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{name}</text>"#,
            PAD + 4.0 + 100.0 * s as f64,
            PAD - 10.0
        );
        let _ = writeln!(svg, r#"<g fill="{color}" fill-opacity="0.6">"#);
        for (x, y) in points(e) {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, sx(x), sy(y));
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}
