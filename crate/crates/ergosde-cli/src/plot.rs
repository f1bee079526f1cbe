//! Standalone SVG rendering for the two report types.
//!
//! Plots are self-contained files with no external assets: a scaling
//! report becomes a log-log scatter (one circle marker per grid point)
//! with the fitted power law drawn through it, and a lagged-correlation
//! report becomes a line chart with one polyline vertex per lag. Each
//! file embeds its source report as JSON inside a `<metadata>` block, so
//! the numbers behind a plot can be recovered from the plot alone.

use std::f64::consts::LN_10;
use std::fmt::Write as _;

use ergosde::stats::{ScalingReport, TwoPointReport};
use ergosde::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 56.0;

/// An affine map from data range to pixel range with a 5% pad; the pad
/// falls back to ±0.5 around a degenerate (single-value) range.
struct Axis {
    lo: f64,
    hi: f64,
    pix_lo: f64,
    pix_hi: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, pix_lo: f64, pix_hi: f64) -> Axis {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
        Axis { lo: lo - pad, hi: hi + pad, pix_lo, pix_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.pix_lo + (v - self.lo) / (self.hi - self.lo) * (self.pix_hi - self.pix_lo)
    }
}

fn svg_open(out: &mut String) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    out.push_str(&format!("<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"));
}

fn axes_frame(out: &mut String, x_label: &str, y_label: &str) {
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{y_label}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

fn tick_labels(out: &mut String, x: &Axis, y: &Axis, fmt: impl Fn(f64) -> String) {
    let y0 = HEIGHT - MARGIN_BOTTOM;
    for v in [x.lo, x.hi] {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            x.map(v),
            y0 + 20.0,
            fmt(v)
        );
    }
    for v in [y.lo, y.hi] {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            MARGIN_LEFT - 8.0,
            y.map(v) + 4.0,
            fmt(v)
        );
    }
}

fn metadata_block(out: &mut String, id: &str, json: &str) {
    let _ = writeln!(out, "<metadata id=\"{id}\"><![CDATA[{json}]]></metadata>");
}

/// Renders a scaling report as a log-log scatter with the fitted line.
///
/// Markers are drawn for grid points with a positive error (zero cannot
/// be placed on a log axis); the full report, zeros included, is
/// embedded in the metadata block. Errors when the report is empty or
/// no point is plottable.
pub fn scaling_plot_svg(report: &ScalingReport) -> Result<String> {
    if report.epsilons.is_empty() {
        return Err(Error::InvalidArgument("scaling report has no grid points to plot".into()));
    }
    let points: Vec<(f64, f64)> = report
        .epsilons
        .iter()
        .zip(&report.errors)
        .filter(|(_, &err)| err > 0.0)
        .map(|(&eps, &err)| (eps.log10(), err.log10()))
        .collect();
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "scaling report has no positive errors to place on a log axis".into(),
        ));
    }

    let x = Axis::new(points.iter().map(|p| p.0), MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let y = Axis::new(points.iter().map(|p| p.1), HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);

    let mut out = String::new();
    svg_open(&mut out);
    metadata_block(&mut out, "scaling-report", &serde_json::to_string(report)?);
    axes_frame(&mut out, "perturbation ε (log scale)", "response error (log scale)");
    tick_labels(&mut out, &x, &y, |v| format!("1e{v:.2}"));

    // The fit lives in natural-log space; rescale to the log10 axes.
    if let (Some(slope), Some(intercept)) = (report.slope, report.intercept) {
        let line_y = |lx: f64| slope * lx + intercept / LN_10;
        let _ = writeln!(
            out,
            "<line class=\"fit\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"firebrick\" stroke-width=\"1.5\"/>",
            x.map(x.lo),
            y.map(line_y(x.lo)),
            x.map(x.hi),
            y.map(line_y(x.hi))
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\">slope {slope:.4}</text>",
            MARGIN_LEFT + 12.0,
            MARGIN_TOP + 16.0
        );
    }
    for (px, py) in &points {
        let _ = writeln!(
            out,
            "<circle class=\"pt\" cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"steelblue\"/>",
            x.map(*px),
            y.map(*py)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Renders a lagged-correlation report as a line chart over time
/// `lag·δ`, one polyline vertex per lag. Errors when the report has no
/// lags.
pub fn two_point_plot_svg(report: &TwoPointReport) -> Result<String> {
    if report.lags.is_empty() {
        return Err(Error::InvalidArgument("correlation report has no lags to plot".into()));
    }
    let times: Vec<f64> = report.lags.iter().map(|&l| l as f64 * report.delta).collect();
    let x = Axis::new(times.iter().copied(), MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let y = Axis::new(report.values.iter().copied(), HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);

    let mut out = String::new();
    svg_open(&mut out);
    metadata_block(&mut out, "twopoint-report", &serde_json::to_string(report)?);
    axes_frame(
        &mut out,
        "time lag",
        &format!("⟨{}(0) {}(t)⟩", report.observable_a, report.observable_b),
    );
    tick_labels(&mut out, &x, &y, |v| format!("{v:.3}"));

    if y.lo < 0.0 && y.hi > 0.0 {
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>",
            MARGIN_LEFT,
            y.map(0.0),
            WIDTH - MARGIN_RIGHT,
            y.map(0.0)
        );
    }
    let vertices: Vec<String> = times
        .iter()
        .zip(&report.values)
        .map(|(&t, &v)| format!("{},{}", x.map(t), y.map(v)))
        .collect();
    let _ = writeln!(
        out,
        "<polyline class=\"series\" points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>",
        vertices.join(" ")
    );
    out.push_str("</svg>\n");
    Ok(out)
}
