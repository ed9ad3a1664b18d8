//! Minimal SVG line plots.

use std::fmt::Write;

const W: f64 = 800.0;
const H: f64 = 500.0;
const PAD: f64 = 50.0;
pub const MAX_POINTS: usize = 2000;

/// One polyline per series over shared x values, each decimated to at most
/// `MAX_POINTS` points.
pub fn lines(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], series: &[Vec<f64>]) -> String {
    let (x0, x1) = range(xs.iter().copied());
    let (y0, y1) = range(series.iter().flatten().copied());
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let stride = xs.len().div_ceil(MAX_POINTS).max(1);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="25" text-anchor="middle" font-size="16">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for (v, x, anchor) in [(x0, PAD, "start"), (x1, W - PAD, "end")] {
        let _ = writeln!(s, r#"<text x="{x}" y="{}" font-size="12" text-anchor="{anchor}">{}</text>"#, H - PAD + 16.0, fmt(v));
    }
    for (v, y) in [(y0, H - PAD), (y1, PAD)] {
        let _ = writeln!(s, r#"<text x="{}" y="{y}" font-size="12" text-anchor="end">{}</text>"#, PAD - 4.0, fmt(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, H - 10.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 15 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(ylabel)
    );
    for ys in series {
        let mut pts = String::new();
        for k in (0..xs.len()).step_by(stride).chain(std::iter::once(xs.len() - 1)) {
            let _ = write!(pts, "{:.2},{:.2} ", sx(xs[k]), sy(ys[k]));
        }
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="0.6"/>"#, pts.trim_end());
    }
    s.push_str("</svg>\n");
    s
}

fn range(it: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn fmt(v: f64) -> String {
    format!("{:.3}", v)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
