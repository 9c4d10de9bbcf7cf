//! CSV and SVG export of trajectory logs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eval::{TrajectoryLog, TrajectoryRow};
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 7] = ["step", "t", "vehicle_id", "x", "v", "a", "gap_ahead"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    /// Front-bumper position over time, rear bumpers dashed.
    TimeSpace,
    TimeSpeed,
    /// Gap to the vehicle ahead over time.
    Spacing,
}

impl ChartKind {
    pub const ALL: [ChartKind; 3] = [ChartKind::TimeSpace, ChartKind::TimeSpeed, ChartKind::Spacing];

    pub fn as_str(&self) -> &'static str {
        match self {
            ChartKind::TimeSpace => "timespace",
            ChartKind::TimeSpeed => "timespeed",
            ChartKind::Spacing => "spacing",
        }
    }
}

impl FromStr for ChartKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "timespace" => Ok(ChartKind::TimeSpace),
            "timespeed" => Ok(ChartKind::TimeSpeed),
            "spacing" | "gap" => Ok(ChartKind::Spacing),
            _ => Err(Error::InvalidConfig(format!("unknown chart kind `{s}`"))),
        }
    }
}

pub fn export_csv(log: &TrajectoryLog, path: &Path) -> Result<()> {
    if log.is_empty() {
        return Err(Error::InvalidConfig("cannot export an empty log".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in &log.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`export_csv`]. Lengths are recovered from the first
/// step's gaps; the last vehicle's length is not recoverable and is NaN.
pub fn read_csv(path: &Path) -> Result<TrajectoryLog> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::InvalidConfig(format!("unexpected CSV header {header:?}")));
    }
    let rows: Vec<TrajectoryRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    let mut log = TrajectoryLog {
        rows,
        ..TrajectoryLog::default()
    };
    let first: Vec<&TrajectoryRow> = log.rows.iter().take_while(|r| r.step == log.rows[0].step).collect();
    log.lengths = (0..first.len())
        .map(|i| match (first.get(i), first.get(i + 1)) {
            (Some(a), Some(b)) => b.gap_ahead.map_or(f64::NAN, |g| a.x - b.x - g),
            _ => f64::NAN,
        })
        .collect();
    log.outcome.collision_step = log.first_overlap_step();
    Ok(log)
}

/// `(label, points, dashed)` triples for one chart.
pub type Series = (String, Vec<(f64, f64)>, bool);

pub fn chart_series(log: &TrajectoryLog, kind: ChartKind) -> Vec<Series> {
    let n = log.vehicle_count();
    let mut out = Vec::new();
    for i in 0..n {
        let rows: Vec<&TrajectoryRow> = log.series(i).collect();
        match kind {
            ChartKind::TimeSpace => {
                out.push((format!("vehicle {i}"), rows.iter().map(|r| (r.t, r.x)).collect(), false));
            }
            ChartKind::TimeSpeed => {
                out.push((format!("vehicle {i}"), rows.iter().map(|r| (r.t, r.v)).collect(), false));
            }
            ChartKind::Spacing => {
                if i > 0 {
                    let pts = rows.iter().filter_map(|r| r.gap_ahead.map(|g| (r.t, g))).collect();
                    out.push((format!("gap {}-{i}", i - 1), pts, false));
                }
            }
        }
    }
    if kind == ChartKind::TimeSpace {
        for i in 0..n {
            let len = log.lengths.get(i).copied().unwrap_or(f64::NAN);
            if len.is_finite() {
                let pts = log.series(i).map(|r| (r.t, r.x - len)).collect();
                out.push((format!("vehicle {i} rear"), pts, true));
            }
        }
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const W: f64 = 900.0;
const H: f64 = 520.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    while t <= hi + step * 1e-9 {
        ticks.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    ticks
}

pub fn render_svg(log: &TrajectoryLog, kind: ChartKind) -> Result<String> {
    if log.is_empty() {
        return Err(Error::InvalidConfig("cannot plot an empty log".into()));
    }
    let series = chart_series(log, kind);
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if kind == ChartKind::Spacing {
        y0 = y0.min(0.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(0.5);
    y0 -= pad;
    y1 += pad;

    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;
    let (title, ylabel) = match kind {
        ChartKind::TimeSpace => ("Time-space diagram", "position (m)"),
        ChartKind::TimeSpeed => ("Time-speed diagram", "speed (m/s)"),
        ChartKind::Spacing => ("Spacing", "gap (m)"),
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{title}</text>"#, LEFT + pw / 2.0);
    for t in nice_ticks(x0, x1, 8) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#eee"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"##,
            TOP + ph,
            TOP + ph + 18.0
        );
    }
    for t in nice_ticks(y0, y1, 8) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#eee"/><text x="{:.2}" y="{:.2}" text-anchor="end">{t}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time (s)</text>"#,
        LEFT + pw / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{ylabel}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    if kind == ChartKind::Spacing {
        let y = sy(0.0);
        let _ = writeln!(
            s,
            r#"<line class="zero" x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-width="1.5"/>"#,
            LEFT + pw
        );
    }

    let solid = series.iter().filter(|x| !x.2).count().max(1);
    for (k, (label, points, dashed)) in series.iter().enumerate() {
        let colour = PALETTE[(if *dashed { k - solid } else { k }) % PALETTE.len()];
        let mut p = String::with_capacity(points.len() * 16);
        for &(x, y) in points {
            let _ = write!(p, "{:.2},{:.2} ", sx(x), sy(y));
        }
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<polyline data-label="{label}" fill="none" stroke="{colour}" stroke-width="1.5"{dash} points="{}"/>"#,
            p.trim_end()
        );
    }
    for (k, (label, _, dashed)) in series.iter().filter(|x| !x.2).enumerate() {
        let y = TOP + 10.0 + k as f64 * 18.0;
        let x = LEFT + pw + 12.0;
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{label}</text>"#,
            x + 24.0,
            x + 30.0,
            y + 4.0
        );
        debug_assert!(!dashed);
    }
    if series.iter().any(|x| x.2) {
        let y = TOP + 10.0 + solid as f64 * 18.0;
        let x = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="black" stroke-dasharray="6 4"/><text x="{}" y="{}">rear bumper</text>"#,
            x + 24.0,
            x + 30.0,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn export_svg(log: &TrajectoryLog, kind: ChartKind, path: &Path) -> Result<()> {
    let svg = render_svg(log, kind)?;
    fs::write(path, svg)?;
    Ok(())
}
