//! Minimal SVG line plots: excess risk (log scale) against samples and
//! against serial steps, one polyline per series.

use std::fmt::Write;

use crate::output::TrajectoryPoint;

const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 320.0;
const MARGIN: f64 = 56.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub label: String,
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Clone, Copy)]
enum XAxis {
    Samples,
    Steps,
}

impl XAxis {
    fn value(self, p: &TrajectoryPoint) -> f64 {
        match self {
            XAxis::Samples => p.samples,
            XAxis::Steps => p.step as f64,
        }
    }

    fn label(self) -> &'static str {
        match self {
            XAxis::Samples => "samples",
            XAxis::Steps => "serial steps",
        }
    }
}

fn thin(points: &[TrajectoryPoint]) -> impl Iterator<Item = &TrajectoryPoint> {
    let stride = points.len().div_ceil(MAX_POINTS).max(1);
    points
        .iter()
        .enumerate()
        .filter(move |(i, _)| i % stride == 0 || *i + 1 == points.len())
        .map(|(_, p)| p)
}

fn panel(out: &mut String, series: &[Series], axis: XAxis, x0: f64) {
    let positive = |p: &&TrajectoryPoint| p.excess_risk > 0.0 && p.excess_risk.is_finite();
    let xs = series.iter().flat_map(|s| s.points.iter()).map(|p| axis.value(p));
    let x_max = xs.fold(0.0f64, f64::max).max(1.0);
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().filter(positive))
        .map(|p| p.excess_risk.log10())
        .collect();
    let (mut y_lo, mut y_hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
        (lo.min(y), hi.max(y))
    });
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (-1.0, 0.0);
    }
    y_lo = y_lo.floor();
    y_hi = y_hi.ceil().max(y_lo + 1.0);

    let left = x0 + MARGIN;
    let top = MARGIN / 2.0;
    let w = PANEL_W - 1.5 * MARGIN;
    let h = PANEL_H - 1.5 * MARGIN;
    let sx = |x: f64| left + w * x / x_max;
    let sy = |y: f64| top + h * (y_hi - y) / (y_hi - y_lo);

    let _ = writeln!(
        out,
        r##"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##
    );
    let mut decade = y_lo;
    while decade <= y_hi {
        let y = sy(decade);
        let _ = writeln!(
            out,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">1e{decade}</text>"##,
            left + w,
            left - 4.0,
            y + 3.0
        );
        decade += 1.0;
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
        left + w / 2.0,
        top + h + 30.0,
        axis.label()
    );
    let _ = writeln!(
        out,
        r#"<text x="{left}" y="{:.2}" font-size="10">0</text><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{x_max}</text>"#,
        top + h + 14.0,
        left + w,
        top + h + 14.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = thin(&s.points)
            .filter(positive)
            .map(|p| format!("{:.2},{:.2}", sx(axis.value(p)), sy(p.excess_risk.log10())))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            coords.join(" ")
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Two side-by-side panels (risk vs samples, risk vs serial steps) with a
/// shared legend.
pub fn risk_plot(series: &[Series]) -> String {
    let legend_h = 16.0 * series.len() as f64 + 8.0;
    let width = 2.0 * PANEL_W;
    let height = PANEL_H + legend_h;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(&mut out, series, XAxis::Samples, 0.0);
    panel(&mut out, series, XAxis::Steps, PANEL_W);
    for (i, s) in series.iter().enumerate() {
        let y = PANEL_H + 12.0 + 16.0 * i as f64;
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<line x1="{MARGIN}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            y - 4.0,
            MARGIN + 20.0,
            y - 4.0,
            MARGIN + 26.0,
            y,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}
