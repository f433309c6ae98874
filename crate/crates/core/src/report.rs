//! CSV tables and SVG figures. Every plotted marker carries its exact value
//! in `data-x` / `data-y` and comes from a row of the CSV written alongside.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{compute_optimal_frontier, fit_power_law, FrontierPoint, PowerFit};
use crate::costmodel::count_params;
use crate::error::{LabError, Result};
use crate::trainer::RunLog;

pub const FRONTIER_HEADER: &str = "bin_lo,bin_hi,flops,loss,run_id,step,params,tokens_seen";
pub const RECORDS_HEADER: &str = "run_id,params,step,tokens_seen,flops,eval_loss";

pub fn frontier_to_csv(points: &[FrontierPoint]) -> String {
    let mut s = format!("{FRONTIER_HEADER}\n");
    for p in points {
        let _ = writeln!(
            s,
            "{:e},{:e},{:e},{},{},{},{},{}",
            p.bin_lo, p.bin_hi, p.flops, p.loss, p.run_id, p.step, p.params, p.tokens_seen
        );
    }
    s
}

/// Reads two named numeric columns from a headed CSV.
pub fn read_xy_csv(text: &str, x_col: &str, y_col: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| LabError::EmptyInput("csv".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| LabError::Parse { line: 1, msg: format!("missing column {name}") })
    };
    let (xi, yi) = (col(x_col)?, col(y_col)?);
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let get = |i: usize| -> Result<f64> {
            f.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| LabError::Parse { line: n + 2, msg: format!("bad number in column {i}") })
        };
        out.push((get(xi)?, get(yi)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    /// CSV the points were read from, recorded in the SVG.
    pub source: String,
    pub series: Vec<Series>,
    pub fit: Option<PowerFit>,
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Figure {
    pub fn to_svg(&self) -> String {
        let (w, h, m) = (640.0, 420.0, 60.0);
        let tx = |v: f64| if self.log_x { v.log10() } else { v };
        let ty = |v: f64| if self.log_y { v.log10() } else { v };
        let pts = self.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(tx(x));
            x1 = x1.max(tx(x));
            y0 = y0.min(ty(y));
            y1 = y1.max(ty(y));
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y1 = y0 + 1.0;
        }
        let px = |v: f64| m + (tx(v) - x0) / (x1 - x0) * (w - 2.0 * m);
        let py = |v: f64| h - m - (ty(v) - y0) / (y1 - y0) * (h - 2.0 * m);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(s, "<!-- data source: {} -->", escape(&self.source));
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
            w / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<path d="M{m} {m} V{} H{}" stroke="black" fill="none"/>"#,
            h - m,
            w - m
        );
        let scale = |log: bool| if log { " (log10)" } else { "" };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}{}</text>"#,
            w / 2.0,
            h - 15.0,
            escape(&self.x_label),
            scale(self.log_x)
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle" font-family="sans-serif" font-size="12">{}{}</text>"#,
            h / 2.0,
            h / 2.0,
            escape(&self.y_label),
            scale(self.log_y)
        );
        for (label, v, x, y) in [
            ("x-min", x0, m, h - m + 16.0),
            ("x-max", x1, w - m, h - m + 16.0),
        ] {
            let _ = writeln!(
                s,
                r#"<text class="{label}" x="{x}" y="{y}" text-anchor="middle" font-family="sans-serif" font-size="10">{v:.3}</text>"#
            );
        }
        for (label, v, y) in [("y-min", y0, h - m), ("y-max", y1, m)] {
            let _ = writeln!(
                s,
                r#"<text class="{label}" x="{}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3}</text>"#,
                m - 4.0
            );
        }
        for (k, series) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let _ = writeln!(s, r#"<g class="series" data-label="{}" fill="{color}">"#, escape(&series.label));
            for &(x, y) in &series.points {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" data-x="{x:e}" data-y="{y:e}"/>"#,
                    px(x),
                    py(y)
                );
            }
            let _ = writeln!(s, "</g>");
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
                w - m + 4.0,
                m + 14.0 * k as f64,
                escape(&series.label)
            );
        }
        if let Some(fit) = &self.fit {
            let n = 64;
            let mut d = String::new();
            for i in 0..=n {
                let lx = fit.x_min.log10() + (fit.x_max.log10() - fit.x_min.log10()) * i as f64 / n as f64;
                let x = 10f64.powf(lx);
                let _ = write!(d, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, px(x), py(fit.predict(x)));
            }
            let _ = writeln!(
                s,
                r#"<path class="fit" d="{}" stroke="black" stroke-dasharray="4 3" fill="none" data-c="{:e}" data-e="{}"/>"#,
                d.trim_end(),
                fit.c,
                fit.e
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn unescape(s: &str) -> String {
    s.replace("&quot;", "\"").replace("&gt;", ">").replace("&lt;", "<").replace("&amp;", "&")
}

/// `(series label, x, y)` of every marker in an SVG written by [`Figure::to_svg`].
pub fn svg_points(svg: &str) -> Vec<(String, f64, f64)> {
    let attr = |line: &str, name: &str| -> Option<String> {
        let key = format!("{name}=\"");
        let start = line.find(&key)? + key.len();
        let end = line[start..].find('"')? + start;
        Some(line[start..end].to_string())
    };
    let mut label = String::new();
    let mut out = Vec::new();
    for line in svg.lines() {
        if line.starts_with(r#"<g class="series""#) {
            label = unescape(&attr(line, "data-label").unwrap_or_default());
        } else if line.starts_with("<circle") {
            if let (Some(x), Some(y)) = (attr(line, "data-x"), attr(line, "data-y")) {
                if let (Ok(x), Ok(y)) = (x.parse(), y.parse()) {
                    out.push((label.clone(), x, y));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub runs: usize,
    pub records: usize,
    pub frontier_points: usize,
    pub frontier_fit: Option<PowerFit>,
    pub files: Vec<PathBuf>,
}

fn records_csv(runs: &[RunLog]) -> String {
    let mut s = format!("{RECORDS_HEADER}\n");
    for r in runs {
        let params = count_params(&r.config);
        for rec in &r.records {
            let _ = writeln!(
                s,
                "{},{params},{},{},{:e},{}",
                r.run_id, rec.step, rec.tokens_seen, rec.flops, rec.eval_loss
            );
        }
    }
    s
}

fn parse_records(text: &str) -> Result<Vec<(String, u64, u64, f64, f64)>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || LabError::Parse { line: i + 2, msg: "bad records row".into() };
            if f.len() != 6 {
                return Err(bad());
            }
            Ok((
                f[0].to_string(),
                f[1].parse().map_err(|_| bad())?,
                f[3].parse().map_err(|_| bad())?,
                f[4].parse().map_err(|_| bad())?,
                f[5].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

fn group<K: PartialEq + Clone>(rows: impl Iterator<Item = (K, f64, f64)>) -> Vec<(K, Vec<(f64, f64)>)> {
    let mut out: Vec<(K, Vec<(f64, f64)>)> = Vec::new();
    for (k, x, y) in rows {
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push((x, y)),
            None => out.push((k, vec![(x, y)])),
        }
    }
    out
}

/// Writes tables, figures and the frontier fit for a set of runs. The
/// figures are built by re-reading the CSVs just written.
pub fn write_report(runs: &[RunLog], n_bins: usize, out: &Path) -> Result<ReportSummary> {
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, text)?;
        files.push(p);
        Ok(())
    };

    put("records.csv", &records_csv(runs))?;
    let frontier = compute_optimal_frontier(runs, n_bins)?;
    put("frontier.csv", &frontier_to_csv(&frontier))?;

    let records_text = fs::read_to_string(out.join("records.csv"))?;
    let rows = parse_records(&records_text)?;
    let frontier_pts = read_xy_csv(&fs::read_to_string(out.join("frontier.csv"))?, "flops", "loss")?;
    let fit = if frontier_pts.len() >= 3 {
        fit_power_law(&frontier_pts).ok()
    } else {
        None
    };
    put("fit.json", &serde_json::to_string_pretty(&fit)?)?;

    let positive = rows.iter().filter(|r| r.3 > 0.0);
    let mut series: Vec<Series> = group(positive.clone().map(|r| (r.0.clone(), r.3, r.4)))
        .into_iter()
        .map(|(label, points)| Series { label, points })
        .collect();
    series.push(Series { label: "frontier".into(), points: frontier_pts });
    let flops_fig = Figure {
        title: "Eval loss vs training FLOPs".into(),
        x_label: "FLOPs".into(),
        y_label: "MLM loss".into(),
        log_x: true,
        log_y: true,
        source: "records.csv, frontier.csv".into(),
        series,
        fit,
    };
    put("loss_vs_flops.svg", &flops_fig.to_svg())?;

    let tokens_fig = Figure {
        title: "Eval loss vs tokens seen".into(),
        x_label: "tokens".into(),
        y_label: "MLM loss".into(),
        log_x: true,
        log_y: true,
        source: "records.csv".into(),
        series: group(rows.iter().filter(|r| r.2 > 0).map(|r| (r.0.clone(), r.2 as f64, r.4)))
            .into_iter()
            .map(|(label, points)| Series { label, points })
            .collect(),
        fit: None,
    };
    put("loss_vs_tokens.svg", &tokens_fig.to_svg())?;

    let mut finals = String::from("run_id,params,eval_loss\n");
    let mut final_pts = Vec::new();
    for (id, pts) in group(rows.iter().map(|r| (r.0.clone(), r.1 as f64, r.4))) {
        if let Some(&(p, l)) = pts.last() {
            let _ = writeln!(finals, "{id},{p},{l}");
            final_pts.push((p, l));
        }
    }
    put("final_losses.csv", &finals)?;
    let params_fig = Figure {
        title: "Final eval loss vs parameters".into(),
        x_label: "parameters".into(),
        y_label: "MLM loss".into(),
        log_x: true,
        log_y: true,
        source: "final_losses.csv".into(),
        series: vec![Series {
            label: "final".into(),
            points: read_xy_csv(&finals, "params", "eval_loss")?,
        }],
        fit: None,
    };
    put("loss_vs_params.svg", &params_fig.to_svg())?;

    Ok(ReportSummary {
        runs: runs.len(),
        records: rows.len(),
        frontier_points: frontier.len(),
        frontier_fit: fit,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_markers_round_trip() {
        let fig = Figure {
            title: "t <1>".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: true,
            log_y: false,
            source: "a.csv".into(),
            series: vec![Series { label: "s&1".into(), points: vec![(1e15, 2.5), (3.3e16, 0.1 + 0.2)] }],
            fit: None,
        };
        let svg = fig.to_svg();
        assert_eq!(
            svg_points(&svg),
            vec![("s&1".to_string(), 1e15, 2.5), ("s&1".to_string(), 3.3e16, 0.1 + 0.2)]
        );
        assert!(svg.contains("data source: a.csv"));
    }

    #[test]
    fn xy_csv_by_column_name() {
        let pts = read_xy_csv("a,flops,loss\n1,2,3\n4,5,6\n", "flops", "loss").unwrap();
        assert_eq!(pts, vec![(2.0, 3.0), (5.0, 6.0)]);
        assert!(read_xy_csv("a,b\n1,2\n", "flops", "loss").is_err());
        assert!(read_xy_csv("flops,loss\n1,x\n", "flops", "loss").is_err());
    }
}
