//! SVG rendering of a band with trajectories on an 800x500 canvas. The
//! axes span the data range padded by 5% on each side.

use std::fmt::Write;

use ludyn::curves::Curve;

use crate::error::{CliError, CliResult};

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;
const PAD: f64 = 0.05;
const CURVE_POINTS: usize = 400;

/// `(t, u)` points of a `t,u,v` CSV.
pub fn read_trajectory_csv(name: &str, text: &str) -> CliResult<Vec<(f64, f64)>> {
    let schema = |message: String| CliError::Schema {
        path: name.to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| schema(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != ["t", "u", "v"] {
        return Err(schema(format!("expected header t,u,v, found {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| schema(e.to_string()))?;
        let field = |k: usize| -> CliResult<f64> {
            record
                .get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| schema(format!("row {}: column {} is not a number", i + 2, k + 1)))
        };
        points.push((field(0)?, field(1)?));
    }
    Ok(points)
}

/// A named polyline with its stroke colour.
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    /// The periodic extension of `curve` sampled over `[t0, t1]`.
    pub fn from_curve(label: &str, color: &'static str, curve: &Curve, t0: f64, t1: f64) -> Series {
        let points = (0..=CURVE_POINTS)
            .map(|i| {
                let t = t0 + (t1 - t0) * i as f64 / CURVE_POINTS as f64;
                (t, curve.value(t))
            })
            .collect();
        Series {
            label: label.to_string(),
            color,
            points,
        }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#17becf"];

pub fn palette(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Time span of the trajectories, or one period when there are none.
pub fn time_span(trajectories: &[Vec<(f64, f64)>], period: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(t, _) in trajectories.iter().flatten() {
        lo = lo.min(t);
        hi = hi.max(t);
    }
    if lo < hi {
        (lo, hi)
    } else {
        (0.0, period)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = if hi > lo { hi - lo } else { 1.0 };
    (lo - PAD * span, hi + PAD * span)
}

pub fn render(title: &str, series: &[Series]) -> String {
    let (mut t_lo, mut t_hi, mut u_lo, mut u_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(t, u) in series.iter().flat_map(|s| &s.points) {
        if t.is_finite() && u.is_finite() {
            t_lo = t_lo.min(t);
            t_hi = t_hi.max(t);
            u_lo = u_lo.min(u);
            u_hi = u_hi.max(u);
        }
    }
    if !(t_lo <= t_hi) {
        (t_lo, t_hi, u_lo, u_hi) = (0.0, 1.0, 0.0, 1.0);
    }
    let (t_lo, t_hi) = padded(t_lo, t_hi);
    let (u_lo, u_hi) = padded(u_lo, u_hi);
    let x = |t: f64| (t - t_lo) / (t_hi - t_lo) * WIDTH;
    let y = |u: f64| HEIGHT - (u - u_lo) / (u_hi - u_lo) * HEIGHT;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(svg, "<title>{}</title>", escape(title));
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    if t_lo < 0.0 && t_hi > 0.0 {
        let _ = writeln!(
            svg,
            "<line x1=\"{0:.3}\" y1=\"0\" x2=\"{0:.3}\" y2=\"{HEIGHT}\" stroke=\"#cccccc\"/>",
            x(0.0)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"4\" y=\"14\" font-size=\"12\">u in [{:.4}, {:.4}], t in [{:.4}, {:.4}]</text>",
        u_lo, u_hi, t_lo, t_hi
    );
    for s in series {
        let mut path = String::new();
        for &(t, u) in s.points.iter().filter(|(t, u)| t.is_finite() && u.is_finite()) {
            let _ = write!(path, "{:.3},{:.3} ", x(t), y(u));
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" points=\"{}\"><title>{}</title></polyline>",
            s.color,
            path.trim_end(),
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
