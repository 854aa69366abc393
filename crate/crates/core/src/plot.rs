//! Minimal static SVG line charts for speed and time-gap profiles.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulator::SimulationTrace;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 300.0;
const MARGIN: f64 = 50.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 8] = ["#000000", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"];

/// One named polyline.
pub struct Series<'a> {
    pub label: String,
    pub x: &'a [f64],
    pub y: Vec<f64>,
}

/// Renders a single panel. Non-finite points are skipped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let finite = |v: &f64| v.is_finite();
    let xs = series.iter().flat_map(|s| s.x.iter().copied().filter(finite));
    let ys = series.iter().flat_map(|s| s.y.iter().copied().filter(finite));
    let (x0, x1) = bounds(xs);
    let (y0, y1) = bounds(ys);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(svg, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" stroke="black" fill="none"/>"#);
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="{anchor}">{}</text>"#, px(v), b + 15.0, tick(v));
    }
    for v in [y0, y1] {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, py(v) + 4.0, tick(v));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let stride = s.x.len().div_ceil(MAX_POINTS).max(1);
        let mut pts = String::new();
        for (x, y) in s.x.iter().zip(&s.y).step_by(stride) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(pts, "{:.1},{:.1} ", px(*x), py(*y));
            }
        }
        let _ = writeln!(svg, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1"/>"#, pts.trim_end());
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            r + 4.0,
            t + 14.0 * k as f64,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn tick(v: f64) -> String {
    format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn label(i: usize) -> String {
    if i == 0 { "Lead".to_string() } else { format!("Truck {i}") }
}

pub fn speed_chart(trace: &SimulationTrace) -> String {
    let series: Vec<Series> = (0..trace.truck_count())
        .map(|i| Series { label: label(i), x: &trace.time, y: trace.speed[i].clone() })
        .collect();
    line_chart("Speed profiles", "Time (s)", "Speed (m/s)", &series)
}

pub fn time_gap_chart(trace: &SimulationTrace) -> String {
    let series: Vec<Series> = (1..trace.truck_count())
        .map(|i| Series {
            label: label(i),
            x: &trace.time,
            y: (0..trace.len()).map(|k| trace.time_gap(i, k)).collect(),
        })
        .collect();
    line_chart("Time gap profiles", "Time (s)", "Time gap (s)", &series)
}

/// Writes `speed.svg` and `time_gap.svg` into `dir`.
pub fn write_trace_plots(dir: &Path, trace: &SimulationTrace) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [("speed.svg", speed_chart(trace)), ("time_gap.svg", time_gap_chart(trace))] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_polyline_per_series() {
        let x = [0.0, 1.0, 2.0];
        let series = vec![
            Series { label: "a".into(), x: &x, y: vec![1.0, 2.0, f64::NAN] },
            Series { label: "b<".into(), x: &x, y: vec![3.0, 3.0, 3.0] },
        ];
        let svg = line_chart("t", "Time (s)", "Speed (m/s)", &series);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn flat_and_empty_ranges_are_padded() {
        assert_eq!(bounds([2.0, 2.0].into_iter()), (1.5, 2.5));
        assert_eq!(bounds(std::iter::empty()), (0.0, 1.0));
    }
}
