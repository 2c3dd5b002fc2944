//! Deterministic run artifacts: JSONL traces, CSV tables, SVG line charts,
//! and JSON summaries.
//!
//! Every byte these writers emit is a pure function of the run inputs —
//! no timestamps, hostnames, random ids, or locale-dependent formatting —
//! so re-running a command into the same directory reproduces the trace,
//! metrics, and plot files exactly. (Summaries additionally carry the
//! measured wall-clock duration, which is the one intentionally
//! non-reproducible field.)

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use opd_core::theory::CertificateReport;
use serde::Serialize;

/// Fixed series palette; methods are assigned colors by position so plots
/// are stable across runs.
pub const PALETTE: [&str; 6] = [
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Distance threshold under which a run is reported as converged.
pub const CONVERGENCE_TOL: f64 = 1e-6;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 540.0;
/// Strictly positive floor applied before log-scaling so exact zeros in a
/// series stay plottable.
const LOG_FLOOR: f64 = 1e-18;

/// One polyline in a chart panel.
pub struct Series {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
}

/// One axes rectangle with its own y-scale; panels split the fixed
/// 960x540 canvas horizontally.
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

/// The per-run record written to `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    /// Deterministic identifier: subcommand, method label, and seed.
    pub run_id: String,
    pub subcommand: String,
    pub method: String,
    pub seed: u64,
    /// Echo of the effective configuration the run used.
    pub config: serde_json::Value,
    /// Last recorded distance to the reference saddle point, when a
    /// ground-truth solution was available.
    pub final_distance: Option<f64>,
    /// Smallest recorded distance across all iterations.
    pub min_distance: Option<f64>,
    /// `final_distance <= 1e-6`; `None` when no distance was recorded.
    pub converged: Option<bool>,
    /// Per-step contraction certificate over the run's potential sequence,
    /// when the potential was recorded at every iteration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateReport>,
    /// Measured wall-clock duration of the run in seconds.
    pub duration_seconds: f64,
    /// Path of the trace file backing this summary, relative to the
    /// summary's own directory.
    pub trace_path: String,
}

/// Serialize `records` as one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_string_pretty(value)?;
    out.push('\n');
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Comma-separated table with a header row and `\n` line endings.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Shortest round-trip float formatting (Rust's `Display` for `f64`), the
/// single formatting used in every CSV cell so reruns are byte-identical.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// `fmt_f64` for optional values; `None` becomes an empty cell.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Render panels onto the fixed 960x540 canvas.
pub fn render_chart(panels: &[Panel]) -> String {
    let n = panels.len().max(1);
    let panel_width = WIDTH / n as f64;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"monospace\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n"
    ));
    for (i, panel) in panels.iter().enumerate() {
        render_panel(&mut svg, panel, i as f64 * panel_width, panel_width);
    }
    svg.push_str("</svg>\n");
    svg
}

fn render_panel(svg: &mut String, panel: &Panel, x_off: f64, width: f64) {
    let left = x_off + 64.0;
    let right = x_off + width - 16.0;
    let top = 34.0;
    let bottom = HEIGHT - 46.0;
    let plot_w = (right - left).max(1.0);
    let plot_h = (bottom - top).max(1.0);

    // Transform y through log10 when requested and gather finite points.
    let transformed: Vec<Vec<(f64, f64)>> = panel
        .series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| {
                    let ty = if panel.log_y {
                        y.max(LOG_FLOOR).log10()
                    } else {
                        y
                    };
                    (x, ty)
                })
                .collect()
        })
        .collect();

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for series in &transformed {
        for &(x, y) in series {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() || !x_max.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if x_max - x_min < 1e-12 {
        x_min -= 0.5;
        x_max += 0.5;
    }

    // Tick positions in transformed coordinates, plus their labels.
    let (y_lo, y_hi, y_ticks) = if panel.log_y {
        let mut lo = y_min.floor() as i64;
        let mut hi = y_max.ceil() as i64;
        if hi <= lo {
            lo -= 1;
            hi += 1;
        }
        let span = (hi - lo) as usize;
        let step = span.div_ceil(6).max(1) as i64;
        let ticks: Vec<(f64, String)> = (lo..=hi)
            .step_by(step as usize)
            .map(|k| (k as f64, format!("1e{k}")))
            .collect();
        (lo as f64, hi as f64, ticks)
    } else {
        let pad = 0.05 * (y_max - y_min).max(1e-9_f64.max(y_max.abs() * 1e-3));
        let lo = y_min - pad;
        let hi = y_max + pad;
        let ticks: Vec<(f64, String)> = (0..=4)
            .map(|i| {
                let v = lo + (hi - lo) * i as f64 / 4.0;
                (v, format_linear_tick(v))
            })
            .collect();
        (lo, hi, ticks)
    };
    let x_ticks: Vec<(f64, String)> = (0..=4)
        .map(|i| {
            let v = x_min + (x_max - x_min) * i as f64 / 4.0;
            (v, format_linear_tick(v))
        })
        .collect();

    let map_x = |x: f64| left + (x - x_min) / (x_max - x_min) * plot_w;
    let map_y = |y: f64| top + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    // Frame, grid, ticks.
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        left + plot_w / 2.0,
        escape(&panel.title)
    ));
    for (v, label) in &y_ticks {
        let y = map_y(*v);
        svg.push_str(&format!(
            "<line x1=\"{left:.2}\" y1=\"{y:.2}\" x2=\"{right:.2}\" y2=\"{y:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            left - 6.0,
            y + 4.0,
            escape(label)
        ));
    }
    for (v, label) in &x_ticks {
        let x = map_x(*v);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{bottom:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
             stroke=\"#999999\" stroke-width=\"1\"/>\n",
            bottom + 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            bottom + 18.0,
            escape(label)
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{left:.2}\" y1=\"{top:.2}\" x2=\"{left:.2}\" y2=\"{bottom:.2}\" \
         stroke=\"#333333\" stroke-width=\"1\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{left:.2}\" y1=\"{bottom:.2}\" x2=\"{right:.2}\" y2=\"{bottom:.2}\" \
         stroke=\"#333333\" stroke-width=\"1\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
        left + plot_w / 2.0,
        HEIGHT - 10.0,
        escape(&panel.x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\" \
         transform=\"rotate(-90 {:.2} {:.2})\">{}</text>\n",
        x_off + 14.0,
        top + plot_h / 2.0,
        x_off + 14.0,
        top + plot_h / 2.0,
        escape(&panel.y_label)
    ));

    // Series polylines.
    for (series, points) in panel.series.iter().zip(&transformed) {
        if points.is_empty() {
            continue;
        }
        let coords: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", map_x(x), map_y(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            series.color,
            coords.join(" ")
        ));
    }

    // Legend, top-right inside the plot area.
    for (i, series) in panel.series.iter().enumerate() {
        let y = top + 14.0 + 16.0 * i as f64;
        let x = right - 150.0;
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"{}\" stroke-width=\"2\"/>\n",
            x + 18.0,
            series.color
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{}</text>\n",
            x + 24.0,
            y + 4.0,
            escape(&series.label)
        ));
    }
}

fn format_linear_tick(v: f64) -> String {
    let a = v.abs();
    if a > 0.0 && (a < 1e-3 || a >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
