//! Static plots of stored result documents: the observed process in red over
//! resampled paths in grey, written as SVG polylines with a CSV of every series.

use std::fmt::Write as _;

use thiserror::Error;

use crate::gof::TestType;
use crate::report::ResultDocument;

pub const DEFAULT_QUANTILES: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 0.90];
pub const DEFAULT_PLOT_NPATH: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlotError {
    #[error("exactly five quantiles are required, got {0}")]
    QuantileCountNotFive(usize),
    #[error("quantile '{0}' is not a number in (0, 1] or (0, 100]")]
    BadQuantile(String),
}

/// Parses a comma-separated quantile list. Values above 1 are read as percentages.
pub fn parse_quantiles(s: &str) -> Result<Vec<f64>, PlotError> {
    let qs = s
        .split(',')
        .map(|tok| {
            let t = tok.trim();
            let v: f64 = t.parse().map_err(|_| PlotError::BadQuantile(t.to_string()))?;
            let v = if v > 1.0 { v / 100.0 } else { v };
            if v > 0.0 && v <= 1.0 {
                Ok(v)
            } else {
                Err(PlotError::BadQuantile(t.to_string()))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    if qs.len() != 5 {
        return Err(PlotError::QuantileCountNotFive(qs.len()));
    }
    Ok(qs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    /// `"observed"` or `"path_<k>"` with 1-based `k`.
    pub id: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub series: Vec<Series>,
}

/// Panels and series for a plot of `doc`.
pub fn build_panels(doc: &ResultDocument, npath: usize, std: bool, quantiles: &[f64]) -> Result<Vec<Panel>, PlotError> {
    if quantiles.len() != 5 {
        return Err(PlotError::QuantileCountNotFive(quantiles.len()));
    }
    let (obs, paths) = if std {
        (&doc.obs_std_process, &doc.apprx_std_process)
    } else {
        (&doc.obs_process, &doc.apprx_process)
    };
    let shown = npath.min(paths.len());
    let series_for = |row: usize| -> Vec<Series> {
        let line = |v: &[f64]| v.iter().enumerate().map(|(k, y)| ((k + 1) as f64, *y)).collect();
        std::iter::once(Series { id: "observed".into(), points: line(obs.row(row)) })
            .chain(paths[..shown].iter().enumerate().map(|(b, p)| Series { id: format!("path_{}", b + 1), points: line(p.row(row)) }))
            .collect()
    };
    let label = if std { "standardized process" } else { "process" };
    Ok(match doc.test_type {
        TestType::Omnibus => {
            let n = obs.shape().0;
            quantiles
                .iter()
                .map(|&q| {
                    let row = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
                    Panel {
                        title: format!("{label}, z anchor at {}% (rank {})", fmt_num(q * 100.0), row + 1),
                        x_label: "time rank".into(),
                        series: series_for(row),
                    }
                })
                .collect()
        }
        t => {
            let what = match (&doc.cov_tested, t) {
                (Some(name), TestType::Covform) => format!("functional form of {name}"),
                _ => "link function".into(),
            };
            vec![Panel { title: format!("{label}, {what}"), x_label: "z anchor rank".into(), series: series_for(0) }]
        }
    })
}

/// Shortest round-trip decimal representation.
fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// `panel,series,x,y` rows for every plotted point.
pub fn panels_csv(panels: &[Panel]) -> String {
    let mut out = String::from("panel,series,x,y\n");
    for (p, panel) in panels.iter().enumerate() {
        for s in &panel.series {
            for (x, y) in &s.points {
                let _ = writeln!(out, "{},{},{},{}", p + 1, s.id, fmt_num(*x), fmt_num(*y));
            }
        }
    }
    out
}

const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 48.0;

/// Renders panels side by side (wrapping after three) as a standalone SVG.
pub fn panels_svg(panels: &[Panel]) -> String {
    let per_row = panels.len().clamp(1, 3);
    let rows = panels.len().div_ceil(per_row);
    let width = per_row as f64 * (PANEL_W + MARGIN) + MARGIN;
    let height = rows as f64 * (PANEL_H + 2.0 * MARGIN) + MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = width,
        h = height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (idx, panel) in panels.iter().enumerate() {
        let ox = MARGIN + (idx % per_row) as f64 * (PANEL_W + MARGIN);
        let oy = MARGIN + (idx / per_row) as f64 * (PANEL_H + 2.0 * MARGIN);
        render_panel(&mut svg, panel, ox, oy);
    }
    svg.push_str("</svg>\n");
    svg
}

fn render_panel(svg: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let pts = panel.series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, -1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let sx = |x: f64| ox + (x - x0) / (x1 - x0) * PANEL_W;
    let sy = |y: f64| oy + PANEL_H - (y - y0) / (y1 - y0) * PANEL_H;

    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, ox, oy - 10.0, escape(&panel.title));
    let _ = writeln!(
        svg,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        ox, oy, PANEL_W, PANEL_H
    );
    if y0 < 0.0 && y1 > 0.0 {
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{z:.2}" x2="{:.2}" y2="{z:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
            ox,
            ox + PANEL_W,
            z = sy(0.0)
        );
    }
    for (val, anchor_y) in [(y1, oy), (y0, oy + PANEL_H)] {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#, ox - 4.0, anchor_y + 4.0, val);
    }
    for (val, anchor_x) in [(x0, ox), (x1, ox + PANEL_W)] {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, anchor_x, oy + PANEL_H + 16.0, fmt_num(val));
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        ox + PANEL_W / 2.0,
        oy + PANEL_H + 32.0,
        escape(&panel.x_label)
    );
    // grey paths first so the observed path is drawn on top
    for s in panel.series.iter().filter(|s| s.id != "observed").chain(panel.series.iter().filter(|s| s.id == "observed")) {
        let (stroke, width) = if s.id == "observed" { ("#d62728", 1.6) } else { ("#b0b0b0", 0.6) };
        let mut points = String::new();
        for (i, (x, y)) in s.points.iter().enumerate() {
            if i > 0 {
                points.push(' ');
            }
            let _ = write!(points, "{:.2},{:.2}", sx(*x), sy(*y));
        }
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{stroke}" stroke-width="{width}" points="{points}"/>"#);
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG and CSV for a result document.
pub fn emit_plot(doc: &ResultDocument, npath: usize, std: bool, quantiles: &[f64]) -> Result<(String, String), PlotError> {
    let panels = build_panels(doc, npath, std, quantiles)?;
    Ok((panels_svg(&panels), panels_csv(&panels)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_parsing() {
        assert_eq!(parse_quantiles("10,25,50,75,90").unwrap(), DEFAULT_QUANTILES.to_vec());
        assert_eq!(parse_quantiles("0.1, 0.25,0.5,0.75,0.9").unwrap(), DEFAULT_QUANTILES.to_vec());
        assert_eq!(parse_quantiles("10,50"), Err(PlotError::QuantileCountNotFive(2)));
        assert!(matches!(parse_quantiles("10,x,50,75,90"), Err(PlotError::BadQuantile(_))));
        assert!(matches!(parse_quantiles("0,25,50,75,90"), Err(PlotError::BadQuantile(_))));
    }

    #[test]
    fn csv_lists_points() {
        let panels = vec![Panel {
            title: "t".into(),
            x_label: "x".into(),
            series: vec![Series { id: "observed".into(), points: vec![(1.0, 0.5), (2.0, -0.25)] }],
        }];
        assert_eq!(panels_csv(&panels), "panel,series,x,y\n1,observed,1,0.5\n1,observed,2,-0.25\n");
        let svg = panels_svg(&panels);
        assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    }
}
