//! Static SVG line plots of seed-median metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricsTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    Dof,
    Budget,
}

impl std::str::FromStr for XAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dof" => Ok(XAxis::Dof),
            "budget" => Ok(XAxis::Budget),
            _ => Err(Error::InvalidConfig(format!("unknown x axis {s:?}"))),
        }
    }
}

impl std::fmt::Display for XAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            XAxis::Dof => "dof",
            XAxis::Budget => "budget",
        })
    }
}

/// Which rows to plot and how.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub experiment: String,
    /// Empty selects every kind.
    pub kinds: Vec<String>,
    pub x: XAxis,
    pub y: Metric,
    pub log_x: bool,
    pub log_y: bool,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// Sorted by x.
    pub points: Vec<(f64, f64)>,
}

/// One series per kind: the seed median at each x value.
pub fn select_series(table: &MetricsTable, spec: &PlotSpec) -> Result<Vec<Series>> {
    let mut out: Vec<Series> = Vec::new();
    for ((kind, dof, budget), v) in table.medians(&spec.experiment, spec.y) {
        if !spec.kinds.is_empty() && !spec.kinds.contains(&kind) {
            continue;
        }
        let x = match spec.x {
            XAxis::Dof => dof,
            XAxis::Budget => budget,
        } as f64;
        match out.iter_mut().find(|s| s.label == kind) {
            Some(s) => s.points.push((x, v)),
            None => out.push(Series { label: kind, points: vec![(x, v)] }),
        }
    }
    for s in &mut out {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    if out.is_empty() {
        return Err(Error::EmptySelection(format!("no {} values for experiment {:?} and kinds {:?}", spec.y, spec.experiment, spec.kinds)));
    }
    Ok(out)
}

pub fn plot_table(table: &MetricsTable, spec: &PlotSpec) -> Result<String> {
    render_svg(&select_series(table, spec)?, spec)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6b4e9b", "#555555"];

#[derive(Debug, Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Scale {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            if log && v <= 0.0 {
                return Err(Error::Domain(format!("log axis needs positive values, got {v}")));
            }
            let t = if log { v.log10() } else { v };
            lo = lo.min(t);
            hi = hi.max(t);
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::EmptySelection("no finite values to plot".into()));
        }
        let pad = if hi > lo { 0.05 * (hi - lo) } else if log { 0.3 } else { 0.5 * lo.abs().max(1.0) };
        Ok(Self { lo: lo - pad, hi: hi + pad, log })
    }

    fn unit(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    /// Data values of the range ends.
    fn ends(&self) -> (f64, f64) {
        if self.log {
            (10f64.powf(self.lo), 10f64.powf(self.hi))
        } else {
            (self.lo, self.hi)
        }
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0).map(|t| if self.log { 10f64.powf(t) } else { t }).collect()
    }
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders `series` as a self-contained SVG document. The output depends
/// only on the inputs.
pub fn render_svg(series: &[Series], spec: &PlotSpec) -> Result<String> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::EmptySelection("nothing to plot".into()));
    }
    let pts = || series.iter().flat_map(|s| s.points.iter().copied());
    let sx = Scale::fit(pts().map(|p| p.0), spec.log_x)?;
    let sy = Scale::fit(pts().map(|p| p.1), spec.log_y)?;
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + sx.unit(x) * pw;
    let py = |y: f64| TOP + (1.0 - sy.unit(y)) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="13">{}</text>"#, LEFT + pw / 2.0, escape(&spec.title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);

    let mut xs: Vec<f64> = pts().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in xs {
        let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/>"#, px(x), TOP + ph, TOP + ph + 4.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, px(x), TOP + ph + 16.0, label(x));
    }
    for y in sy.ticks() {
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{1:.2}" x2="{LEFT}" y2="{1:.2}" stroke="black"/>"#, LEFT - 4.0, py(y));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, py(y) + 4.0, label(y));
    }
    let log_tag = |on: bool| if on { " (log)" } else { "" };
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}{}</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0, spec.x, log_tag(spec.log_x));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">{1}{2}</text>"#,
        TOP + ph / 2.0,
        spec.y,
        log_tag(spec.log_y)
    );

    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = ser.points.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for (x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(*x), py(*y));
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.label));
    }
    let (x0, x1) = sx.ends();
    let (y0, y1) = sy.ends();
    let _ = writeln!(s, "<!-- x-range {} {} y-range {} {} -->", crate::config::fmt_f64(x0), crate::config::fmt_f64(x1), crate::config::fmt_f64(y0), crate::config::fmt_f64(y1));
    s.push_str("</svg>\n");
    Ok(s)
}

/// Reads back the axis ranges written by [`render_svg`].
pub fn svg_ranges(svg: &str) -> Option<((f64, f64), (f64, f64))> {
    let line = svg.lines().find(|l| l.starts_with("<!-- x-range "))?;
    let v: Vec<f64> = line.split_whitespace().filter_map(|t| t.parse().ok()).collect();
    (v.len() == 4).then(|| ((v[0], v[1]), (v[2], v[3])))
}
