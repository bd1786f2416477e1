//! Rejection-curve artifacts: CSV tables, one-panel SVG charts and a
//! fixed-fraction summary table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::format_float;
use crate::rejection::RejectionCurvePoint;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Panel {
    Nra,
    Cq,
    Rq,
}

impl Panel {
    pub const ALL: [Panel; 3] = [Panel::Nra, Panel::Cq, Panel::Rq];

    pub fn tag(self) -> &'static str {
        match self {
            Panel::Nra => "nra",
            Panel::Cq => "cq",
            Panel::Rq => "rq",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Panel::Nra => "Non-rejected accuracy",
            Panel::Cq => "Classification quality",
            Panel::Rq => "Rejection quality",
        }
    }

    fn value(self, p: &CurveRow) -> f64 {
        match self {
            Panel::Nra => p.nra,
            Panel::Cq => p.cq,
            Panel::Rq => p.rq,
        }
    }
}

/// Curve point reduced to the columns that are written out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub fraction: f64,
    pub threshold: f64,
    pub nra: f64,
    pub cq: f64,
    pub rq: f64,
}

impl From<&RejectionCurvePoint> for CurveRow {
    fn from(p: &RejectionCurvePoint) -> Self {
        Self {
            fraction: p.rejected_fraction,
            threshold: p.threshold,
            nra: p.nra,
            cq: p.cq,
            rq: p.rq,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodCurve {
    pub method: String,
    pub points: Vec<CurveRow>,
}

/// Rejection curves of several scoring methods over one fraction grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveBundle {
    pub dataset: String,
    pub curves: Vec<MethodCurve>,
}

impl CurveBundle {
    pub fn new(dataset: impl Into<String>) -> Self {
        Self {
            dataset: dataset.into(),
            curves: Vec::new(),
        }
    }

    pub fn push(&mut self, method: impl Into<String>, points: &[RejectionCurvePoint]) -> Result<()> {
        self.push_rows(method, points.iter().map(CurveRow::from).collect())
    }

    pub fn push_rows(&mut self, method: impl Into<String>, points: Vec<CurveRow>) -> Result<()> {
        let curve = MethodCurve {
            method: method.into(),
            points,
        };
        if curve.method.contains(',') || curve.method.contains('\n') {
            return Err(Error::Config(format!("method label {:?} cannot be written to CSV", curve.method)));
        }
        if self.curves.iter().any(|c| c.method == curve.method) {
            return Err(Error::Config(format!("duplicate method label {}", curve.method)));
        }
        if let Some(first) = self.curves.first() {
            let same = first.points.len() == curve.points.len()
                && first.points.iter().zip(&curve.points).all(|(a, b)| a.fraction == b.fraction);
            if !same {
                return Err(Error::Config(format!(
                    "curve for {} uses a different fraction grid",
                    curve.method
                )));
            }
        }
        self.curves.push(curve);
        Ok(())
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.curves.is_empty() || self.curves[0].points.is_empty() {
            return Err(Error::Config("curve bundle is empty".into()));
        }
        Ok(())
    }

    fn sorted(&self) -> Vec<&MethodCurve> {
        let mut v: Vec<&MethodCurve> = self.curves.iter().collect();
        v.sort_by(|a, b| a.method.cmp(&b.method));
        v
    }
}

pub fn curves_csv_string(bundle: &CurveBundle) -> Result<String> {
    bundle.check_nonempty()?;
    let mut s = String::from("method,fraction,threshold,nra,cq,rq\n");
    for c in bundle.sorted() {
        for p in &c.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.method,
                p.fraction,
                format_float(p.threshold),
                p.nra,
                p.cq,
                p.rq
            );
        }
    }
    Ok(s)
}

pub fn write_curves_csv(bundle: &CurveBundle, path: &Path) -> Result<()> {
    std::fs::write(path, curves_csv_string(bundle)?).map_err(|e| Error::io(path, e))
}

/// Inverse of [`curves_csv_string`]; methods come back in sorted order.
pub fn parse_curves_csv(dataset: &str, text: &str) -> Result<CurveBundle> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "method,fraction,threshold,nra,cq,rq")) => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "unexpected curves header".into(),
            })
        }
    }
    let mut bundle = CurveBundle::new(dataset);
    for (i, line) in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = |m: String| Error::Parse { line: i + 1, message: m };
        if cols.len() != 6 {
            return Err(bad(format!("expected 6 columns, got {}", cols.len())));
        }
        let num = |k: usize| cols[k].parse::<f64>().map_err(|e| bad(format!("column {k}: {e}")));
        let row = CurveRow {
            fraction: num(1)?,
            threshold: num(2)?,
            nra: num(3)?,
            cq: num(4)?,
            rq: num(5)?,
        };
        match bundle.curves.last_mut() {
            Some(c) if c.method == cols[0] => c.points.push(row),
            _ => bundle.curves.push(MethodCurve {
                method: cols[0].to_string(),
                points: vec![row],
            }),
        }
    }
    Ok(bundle)
}

const CURVE_HEADER: &str = "fraction,threshold,nra,cq,rq";

/// Single-method curve table.
pub fn curve_csv_string(points: &[RejectionCurvePoint]) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for p in points {
        let threshold = format_float(p.threshold);
        let _ = writeln!(s, "{},{threshold},{},{},{}", p.rejected_fraction, p.nra, p.cq, p.rq);
    }
    s
}

pub fn write_curve_csv(points: &[RejectionCurvePoint], path: &Path) -> Result<()> {
    std::fs::write(path, curve_csv_string(points)).map_err(|e| Error::io(path, e))
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurveRow>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(CURVE_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {CURVE_HEADER}"),
        });
    }
    lines
        .map(|(i, line)| {
            let cols = line
                .split(',')
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            match cols[..] {
                [fraction, threshold, nra, cq, rq] => Ok(CurveRow { fraction, threshold, nra, cq, rq }),
                _ => Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected 5 columns, got {}", cols.len()),
                }),
            }
        })
        .collect()
}

pub fn load_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    parse_curve_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Upper end of the x axis: the grid maximum rounded up to a 10% tick.
fn x_extent(bundle: &CurveBundle) -> f64 {
    let max = bundle.curves[0].points.iter().map(|p| p.fraction).fold(0.0, f64::max);
    ((max * 10.0).ceil() / 10.0).max(0.1)
}

fn y_extent(bundle: &CurveBundle, panel: Panel) -> (f64, f64) {
    let finite: Vec<f64> = bundle
        .curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| panel.value(p)))
        .filter(|v| v.is_finite())
        .collect();
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if finite.is_empty() {
        return (0.0, 1.0);
    }
    match panel {
        Panel::Nra | Panel::Cq => (((lo * 10.0).floor() / 10.0).min(0.9), 1.0),
        Panel::Rq => (0.0, hi.max(1.0).ceil()),
    }
}

pub fn render_curves_svg_string(bundle: &CurveBundle, panel: Panel) -> Result<String> {
    bundle.check_nonempty()?;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_max = x_extent(bundle);
    let (y_lo, y_hi) = y_extent(bundle, panel);
    let sx = |f: f64| MARGIN_LEFT + f / x_max * plot_w;
    let sy = |v: f64| MARGIN_TOP + (1.0 - (v - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"10\">"
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{} ({})</text>",
        MARGIN_LEFT + plot_w / 2.0,
        panel.title(),
        xml_escape(&bundle.dataset)
    );
    // axes
    let _ = writeln!(
        s,
        "<path d=\"M{:.1} {:.1} V{:.1} H{:.1}\" fill=\"none\" stroke=\"black\"/>",
        MARGIN_LEFT,
        MARGIN_TOP,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w
    );
    let x_ticks = (x_max * 10.0).round() as usize;
    for k in 0..=x_ticks {
        let f = k as f64 / 10.0;
        let x = sx(f);
        let _ = writeln!(
            s,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/><text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}%</text>",
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 5.0,
            MARGIN_TOP + plot_h + 17.0,
            k * 10
        );
    }
    for k in 0..=5 {
        let v = y_lo + (y_hi - y_lo) * k as f64 / 5.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"black\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>",
            MARGIN_LEFT - 5.0,
            MARGIN_LEFT,
            MARGIN_LEFT - 8.0,
            y + 3.5
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">rejected fraction</text>",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"15\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {:.1})\">{}</text>",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        panel.tag()
    );

    for (i, c) in bundle.curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        let mut markers = String::new();
        for p in &c.points {
            let v = panel.value(p);
            if v.is_nan() {
                continue;
            }
            let x = sx(p.fraction);
            let y = if v.is_infinite() { sy(y_hi) } else { sy(v.min(y_hi)) };
            if !pts.is_empty() {
                pts.push(' ');
            }
            let _ = write!(pts, "{x:.2},{y:.2}");
            if v.is_infinite() {
                let _ = write!(
                    markers,
                    "<path d=\"M{:.2} {:.2} l3 6 h-6 z\" fill=\"{color}\"/>",
                    x,
                    y - 3.0
                );
            }
        }
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{pts}\"/>"
        );
        if !markers.is_empty() {
            let _ = writeln!(s, "{markers}");
        }
        let ly = MARGIN_TOP + 10.0 + 16.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            s,
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            lx + 18.0,
            lx + 22.0,
            ly + 3.5,
            xml_escape(&c.method)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_curves_svg(bundle: &CurveBundle, panel: Panel, path: &Path) -> Result<()> {
    std::fs::write(path, render_curves_svg_string(bundle, panel)?).map_err(|e| Error::io(path, e))
}

pub const SUMMARY_FRACTIONS: [f64; 3] = [0.10, 0.20, 0.30];

fn point_at(curve: &MethodCurve, fraction: f64) -> Result<&CurveRow> {
    curve
        .points
        .iter()
        .find(|p| (p.fraction - fraction).abs() < 1e-9)
        .ok_or_else(|| Error::Config(format!("fraction {fraction} not in the curve grid")))
}

fn pct(v: f64) -> String {
    if v.is_finite() {
        format!("{:.2}%", 100.0 * v)
    } else {
        "n/a".into()
    }
}

fn raw(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else if v.is_nan() {
        "n/a".into()
    } else {
        format!("{v:.2}")
    }
}

/// Accuracy at 0% plus NRA, CQ (percent) and RQ (raw) at each fraction.
pub fn summary_table(bundle: &CurveBundle, fractions: &[f64]) -> Result<String> {
    bundle.check_nonempty()?;
    let labels: Vec<String> = fractions.iter().map(|f| format!("{:.0}%", f * 100.0)).collect();
    let mut header = vec!["method".to_string(), "acc@0%".to_string()];
    for metric in ["NRA", "CQ", "RQ"] {
        for l in &labels {
            header.push(format!("{metric}@{l}"));
        }
    }
    let mut rows = vec![header];
    for c in &bundle.curves {
        let mut row = vec![c.method.clone(), pct(point_at(c, 0.0)?.nra)];
        let pts = fractions.iter().map(|&f| point_at(c, f)).collect::<Result<Vec<_>>>()?;
        row.extend(pts.iter().map(|p| pct(p.nra)));
        row.extend(pts.iter().map(|p| pct(p.cq)));
        row.extend(pts.iter().map(|p| raw(p.rq)));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|k| rows.iter().map(|r| r[k].len()).max().unwrap_or(0))
        .collect();
    let mut s = format!("dataset: {}\n", bundle.dataset);
    for r in &rows {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(k, (c, w))| if k == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        s.push_str(cells.join("  ").trim_end());
        s.push('\n');
    }
    Ok(s)
}
