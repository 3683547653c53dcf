//! Report serialization: CSV rows (the machine contract), a JSON summary
//! with aggregates and traces, and a small hand-rolled SVG line plot.
//! All three are built with deterministic formatting so identical runs
//! produce byte-identical files.

use std::fmt::Write as _;

use super::experiment::ExperimentReport;

/// CSV with one row per (method, sweep position, trial):
/// `method,<x_label>,seed,<value_labels...>`.
pub fn to_csv(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = write!(out, "method,{},seed", report.x_label);
    for label in &report.value_labels {
        let _ = write!(out, ",{label}");
    }
    out.push('\n');
    for row in &report.rows {
        let _ = write!(out, "{},{},{}", row.method, row.x, row.seed);
        for v in &row.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Pretty JSON of the full report (rows, summary, traces).
pub fn to_json(report: &ExperimentReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 400.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;

/// Line plot of the per-method summary means of the first value column.
pub fn to_svg(report: &ExperimentReport) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for s in &report.summary {
        if !methods.contains(&s.method.as_str()) {
            methods.push(&s.method);
        }
    }

    let xs: Vec<f64> = report.summary.iter().map(|s| s.x).collect();
    let ys: Vec<f64> = report
        .summary
        .iter()
        .filter_map(|s| s.mean.first().copied())
        .collect();
    let (x_min, x_max) = bounds(&xs);
    let (y_min, y_max) = bounds(&ys);
    // Pad degenerate ranges so projections stay finite.
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let y_span = if y_max > y_min { y_max - y_min } else { 1.0 };

    let px = |x: f64| MARGIN_L + (x - x_min) / x_span * (PLOT_W - MARGIN_L - MARGIN_R);
    let py = |y: f64| PLOT_H - MARGIN_B - (y - y_min) / y_span * (PLOT_H - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_W}" height="{PLOT_H}" viewBox="0 0 {PLOT_W} {PLOT_H}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{PLOT_W}" height="{PLOT_H}" fill="white"/>"#
    );
    let title = format!(
        "{} — {} vs {}",
        report.experiment,
        report
            .value_labels
            .first()
            .map(String::as_str)
            .unwrap_or("value"),
        report.x_label
    );
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN_L}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#
    );

    // Axes.
    let x0 = px(x_min);
    let x1 = px(x_max);
    let y0 = py(y_min);
    let y1 = py(y_max);
    let _ = writeln!(
        svg,
        r##"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#333" stroke-width="1"/>"##
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#333" stroke-width="1"/>"##
    );
    for (v, x, y, anchor) in [
        (x_min, x0, y0 + 18.0, "middle"),
        (x_max, x1, y0 + 18.0, "middle"),
    ] {
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{v:.3}</text>"#
        );
    }
    for (v, y) in [(y_min, y0), (y_max, y1)] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.3}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }

    for (mi, method) in methods.iter().enumerate() {
        let color = PALETTE[mi % PALETTE.len()];
        let mut points: Vec<(f64, f64)> = report
            .summary
            .iter()
            .filter(|s| s.method == *method)
            .filter_map(|s| s.mean.first().map(|&m| (s.x, m)))
            .collect();
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let path: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for &(x, y) in &points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(x),
                py(y)
            );
        }
        let ly = MARGIN_T + 16.0 * mi as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{color}"/>"#,
            PLOT_W - MARGIN_R - 110.0,
            ly - 9.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly}" font-family="sans-serif" font-size="12">{method}</text>"#,
            PLOT_W - MARGIN_R - 96.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min.is_finite() && max.is_finite() {
        (min, max)
    } else {
        (0.0, 1.0)
    }
}
