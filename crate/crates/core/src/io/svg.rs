//! Deterministic SVG plots: same inputs, same bytes.
//!
//! Coordinates are printed with two decimals and colors come from a fixed
//! palette, so output never depends on the platform or on hash ordering.

use std::fmt::Write as _;

use super::csv::column_mean_std;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 46.0;
const TICKS: usize = 5;

const PARTICLE_COLOR: &str = "#7f9fbf";
const MEAN_COLOR: &str = "#1f3a93";
const BAND_COLOR: &str = "#9ecae1";
const POINT_COLOR: &str = "#d62728";
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Data-to-pixel mapping for one plot area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    /// Pads the y range by 5% and widens degenerate ranges to unit length.
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64), pad: f64| {
            if hi - lo <= 1e-12 * lo.abs().max(hi.abs()).max(1.0) {
                (lo - 0.5, hi + 0.5)
            } else {
                let p = (hi - lo) * pad;
                (lo - p, hi + p)
            }
        };
        Self {
            x: widen(x, 0.0),
            y: widen(y, 0.05),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn check_finite(context: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(context.to_string()));
    }
    Ok(())
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r##"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">
<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>
<text x="{:.2}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"##,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let _ = writeln!(
        out,
        r##"<g stroke="#333333" stroke-width="1"><line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/><line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/></g>"##
    );
    let _ = write!(out, r##"<g font-family="sans-serif" font-size="11" fill="#333333">"##);
    for t in 0..TICKS {
        let frac = t as f64 / (TICKS - 1) as f64;
        let xv = f.x.0 + frac * (f.x.1 - f.x.0);
        let yv = f.y.0 + frac * (f.y.1 - f.y.0);
        let _ = write!(
            out,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            f.px(xv),
            y0 + 16.0,
            tick_label(xv),
            x0 - 6.0,
            f.py(yv) + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>
<text x="16" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"##,
        (x0 + x1) / 2.0,
        HEIGHT - 8.0,
        escape(x_label),
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick_label(v: f64) -> String {
    // avoid printing "-0.00"
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn polyline(out: &mut String, f: &Frame, xs: &[f64], ys: &[f64], attrs: &str) {
    let mut pts = String::new();
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        if i > 0 {
            pts.push(' ');
        }
        let _ = write!(pts, "{:.2},{:.2}", f.px(x), f.py(y));
    }
    let _ = writeln!(out, r##"<polyline fill="none" {attrs} points="{pts}"/>"##);
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = MARGIN_TOP + 14.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN_RIGHT - 150.0;
        let _ = writeln!(
            out,
            r##"<rect x="{x:.2}" y="{:.2}" width="12" height="8" fill="{color}"/><text x="{:.2}" y="{y:.2}" font-family="sans-serif" font-size="11">{}</text>"##,
            y - 8.0,
            x + 18.0,
            escape(name)
        );
    }
}

/// Per-particle predictions (thin lines), their mean, a ±1 std band and the
/// training points. `predictions` is `n × G` over `grid_x`.
pub fn plot_regression_bands(grid_x: &[f64], predictions: &Matrix, train: &[(f64, f64)]) -> Result<String> {
    let g = grid_x.len();
    if g < 2 {
        return Err(Error::InvalidConfig(format!("regression plot needs at least 2 grid points, got {g}")));
    }
    if predictions.cols() != g || predictions.rows() == 0 {
        return Err(Error::DimensionMismatch {
            context: "particle predictions vs grid".into(),
            expected: g,
            found: predictions.cols(),
        });
    }
    check_finite("grid", grid_x.iter().copied())?;
    check_finite("particle predictions", predictions.as_slice().iter().copied())?;
    check_finite("training points", train.iter().flat_map(|&(x, y)| [x, y]))?;

    let (mean, std) = column_mean_std(predictions);
    let upper: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m + s).collect();
    let lower: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m - s).collect();
    let x_range = min_max(grid_x.iter().copied().chain(train.iter().map(|p| p.0)));
    let y_range = min_max(
        predictions
            .as_slice()
            .iter()
            .copied()
            .chain(upper.iter().copied())
            .chain(lower.iter().copied())
            .chain(train.iter().map(|p| p.1)),
    );
    let f = Frame::new(x_range, y_range);

    let mut out = String::new();
    open(&mut out, "Particle predictions");
    axes(&mut out, &f, "x", "y");

    let mut d = String::new();
    for (j, (&x, &y)) in grid_x.iter().zip(&upper).enumerate() {
        let _ = write!(d, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, f.px(x), f.py(y));
    }
    for (&x, &y) in grid_x.iter().zip(&lower).rev() {
        let _ = write!(d, "L{:.2},{:.2} ", f.px(x), f.py(y));
    }
    d.push('Z');
    let _ = writeln!(
        out,
        r##"<path class="band" fill="{BAND_COLOR}" fill-opacity="0.5" stroke="none" d="{d}"/>"##
    );
    for row in predictions.iter_rows() {
        polyline(
            &mut out,
            &f,
            grid_x,
            row,
            &format!(r##"class="particle" stroke="{PARTICLE_COLOR}" stroke-width="0.8" stroke-opacity="0.7""##),
        );
    }
    polyline(
        &mut out,
        &f,
        grid_x,
        &mean,
        &format!(r##"class="mean" stroke="{MEAN_COLOR}" stroke-width="2.2""##),
    );
    let _ = write!(out, r##"<g fill="{POINT_COLOR}">"##);
    for &(x, y) in train {
        let _ = write!(out, r##"<circle cx="{:.2}" cy="{:.2}" r="2.5"/>"##, f.px(x), f.py(y));
    }
    let _ = writeln!(out, "</g>");
    legend(
        &mut out,
        &[("particles", PARTICLE_COLOR), ("mean", MEAN_COLOR), ("mean ± 1 std", BAND_COLOR), ("train", POINT_COLOR)],
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Overlaid histograms sharing one set of `bins` equal-width bins, each
/// normalized to frequencies so sets of different size compare directly.
pub fn plot_histograms(title: &str, x_label: &str, series: &[(&str, &[f64])], bins: usize) -> Result<String> {
    if series.is_empty() || bins == 0 || series.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::Empty("histogram series"));
    }
    check_finite("histogram values", series.iter().flat_map(|(_, v)| v.iter().copied()))?;
    let (lo, hi) = min_max(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let width = (hi - lo) / bins as f64;
    let freqs: Vec<Vec<f64>> = series
        .iter()
        .map(|(_, v)| {
            let mut h = vec![0.0; bins];
            for &x in v.iter() {
                let b = (((x - lo) / width) as usize).min(bins - 1);
                h[b] += 1.0;
            }
            h.iter_mut().for_each(|c| *c /= v.len() as f64);
            h
        })
        .collect();
    let top = freqs.iter().flatten().copied().fold(0.0, f64::max);
    let f = Frame::new((lo, hi), (0.0, top));

    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &f, x_label, "frequency");
    for (s, h) in freqs.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let _ = write!(out, r##"<g fill="{color}" fill-opacity="0.45" stroke="{color}">"##);
        for (b, &c) in h.iter().enumerate() {
            let x0 = f.px(lo + b as f64 * width);
            let x1 = f.px(lo + (b + 1) as f64 * width);
            let y = f.py(c);
            let _ = write!(
                out,
                r##"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}"/>"##,
                x1 - x0,
                f.py(0.0) - y
            );
        }
        let _ = writeln!(out, "</g>");
    }
    let entries: Vec<(&str, &str)> = series
        .iter()
        .enumerate()
        .map(|(s, (name, _))| (*name, PALETTE[s % PALETTE.len()]))
        .collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Line chart of several `(name, xs, ys)` curves, e.g. accuracy per round.
pub fn plot_curves(title: &str, x_label: &str, y_label: &str, curves: &[(&str, &[f64], &[f64])]) -> Result<String> {
    if curves.is_empty() || curves.iter().any(|(_, x, _)| x.is_empty()) {
        return Err(Error::Empty("curve"));
    }
    if let Some((_, x, y)) = curves.iter().find(|(_, x, y)| x.len() != y.len()) {
        return Err(Error::DimensionMismatch {
            context: "curve x vs y".into(),
            expected: x.len(),
            found: y.len(),
        });
    }
    check_finite("curve values", curves.iter().flat_map(|(_, x, y)| x.iter().chain(y.iter()).copied()))?;
    let f = Frame::new(
        min_max(curves.iter().flat_map(|(_, x, _)| x.iter().copied())),
        min_max(curves.iter().flat_map(|(_, _, y)| y.iter().copied())),
    );
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &f, x_label, y_label);
    for (s, (_, xs, ys)) in curves.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        polyline(&mut out, &f, xs, ys, &format!(r##"stroke="{color}" stroke-width="1.8""##));
    }
    let entries: Vec<(&str, &str)> = curves
        .iter()
        .enumerate()
        .map(|(s, (name, _, _))| (*name, PALETTE[s % PALETTE.len()]))
        .collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}
