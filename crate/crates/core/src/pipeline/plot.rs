//! Line charts of metric curves as standalone SVG.
//!
//! One panel per metric in order of first appearance, one polyline per
//! method. Grassmannian values are drawn on a natural-log scale; points that
//! have no logarithm (zero distance) are left out of that panel.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 44.0;
const LEGEND_H: f64 = 22.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub method: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub metric: String,
    pub log: bool,
    pub series: Vec<Series>,
}

/// Parses `method,metric,k,value` (or `metric,k,value`) CSV text; summary
/// rows, whose `k` is not a number, are skipped.
pub fn panels_from_csv(text: &str) -> Result<Vec<Panel>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (metric, k, value) = match (col("metric"), col("k"), col("value")) {
        (Some(m), Some(k), Some(v)) => (m, k, v),
        _ => return Err(Error::InvalidArgument("CSV needs metric, k and value columns".into())),
    };
    let method = col("method");

    let mut panels: Vec<Panel> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let Ok(kv) = rec[k].parse::<f64>() else { continue };
        let v: f64 = rec[value]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad value `{}`", &rec[value])))?;
        let name = &rec[metric];
        let label = method.map_or("model", |m| &rec[m]);
        let log = name == "grassmannian";
        let y = if log { v.ln() } else { v };
        let idx = match panels.iter().position(|p| p.metric == name) {
            Some(i) => i,
            None => {
                panels.push(Panel { metric: name.to_string(), log, series: Vec::new() });
                panels.len() - 1
            }
        };
        let panel = &mut panels[idx];
        let s = match panel.series.iter().position(|s| s.method == label) {
            Some(i) => i,
            None => {
                panel.series.push(Series { method: label.to_string(), points: Vec::new() });
                panel.series.len() - 1
            }
        };
        if y.is_finite() {
            panel.series[s].points.push((kv, y));
        }
    }
    if panels.is_empty() {
        return Err(Error::InvalidArgument("no metric rows to plot".into()));
    }
    Ok(panels)
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 * hi.abs().max(1.0) {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn render_svg(panels: &[Panel]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for s in panels.iter().flat_map(|p| &p.series) {
        if !methods.contains(&s.method.as_str()) {
            methods.push(&s.method);
        }
    }
    let color = |m: &str| COLORS[methods.iter().position(|x| *x == m).unwrap_or(0) % COLORS.len()];
    let width = PANEL_W * panels.len() as f64;
    let height = PANEL_H + LEGEND_H;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        let x0 = i as f64 * PANEL_W;
        let (l, r, t, b) = (x0 + MARGIN, x0 + PANEL_W - 12.0, 24.0, PANEL_H - 30.0);
        let pts = || panel.series.iter().flat_map(|s| s.points.iter());
        let (xmin, xmax) = bounds(pts().map(|p| p.0));
        let (ymin, ymax) = bounds(pts().map(|p| p.1));
        let sx = |x: f64| l + (x - xmin) / (xmax - xmin) * (r - l);
        let sy = |y: f64| b - (y - ymin) / (ymax - ymin) * (b - t);

        let title = if panel.log { format!("log {}", panel.metric) } else { panel.metric.clone() };
        let _ = writeln!(svg, r#"<text x="{}" y="14" text-anchor="middle" font-weight="bold">{title}</text>"#, (l + r) / 2.0);
        let _ = writeln!(svg, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
        for (v, y) in [(ymin, b), (ymax, t)] {
            let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, y + 4.0, fmt_num(v));
        }
        for (v, x) in [(xmin, l), (xmax, r)] {
            let _ = writeln!(svg, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, b + 14.0, fmt_num(v));
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">k</text>"#, (l + r) / 2.0, b + 26.0);
        for s in &panel.series {
            if s.points.is_empty() {
                continue;
            }
            let coords: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
                color(&s.method),
                coords.join(" "),
                s.method
            );
        }
    }
    for (j, m) in methods.iter().enumerate() {
        let x = 10.0 + j as f64 * 110.0;
        let y = PANEL_H + 8.0;
        let _ = writeln!(svg, r#"<rect x="{x}" y="{}" width="12" height="4" fill="{}"/>"#, y - 2.0, color(m));
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{m}</text>"#, x + 16.0, y + 4.0);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads a report CSV and writes its SVG chart.
pub fn plot_csv(csv_path: &Path, svg_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let svg = render_svg(&panels_from_csv(&text)?);
    if let Some(dir) = svg_path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(svg_path, svg).map_err(|e| Error::io(svg_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_series_gives_one_polyline() {
        let csv = "metric,k,value\ncompactness,1,0.75\ncompactness,2,1\ncompactness,AUC,0.875\n";
        let panels = panels_from_csv(csv).unwrap();
        assert_eq!(panels.len(), 1);
        assert_eq!(panels[0].series[0].points, vec![(1.0, 0.75), (2.0, 1.0)]);
        let svg = render_svg(&panels);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn panels_per_metric_and_log_for_grassmannian() {
        let csv = "method,metric,k,value\n\
                   gt,generalization,1,2\ngt,generalization,2,1\n\
                   A,generalization,1,3\nA,generalization,2,2\n\
                   gt,grassmannian,1,0\nA,grassmannian,1,0.5\nA,grassmannian,2,1\n";
        let panels = panels_from_csv(csv).unwrap();
        assert_eq!(panels.iter().map(|p| p.metric.as_str()).collect::<Vec<_>>(), ["generalization", "grassmannian"]);
        let g = &panels[1];
        assert!(g.log);
        assert!(g.series[0].points.is_empty());
        assert_eq!(g.series[1].points, vec![(1.0, 0.5f64.ln()), (2.0, 0.0)]);
        assert_eq!(render_svg(&panels).matches("<polyline").count(), 3);
    }

    #[test]
    fn rejects_csv_without_metric_columns() {
        assert!(panels_from_csv("a,b\n1,2\n").is_err());
        assert!(panels_from_csv("metric,k,value\n").is_err());
    }
}
