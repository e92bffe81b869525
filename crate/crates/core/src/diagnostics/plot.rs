//! Minimal SVG rendering of scatter, line and heatmap figures.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.03 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

struct Frame {
    svg: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
        let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
        let _ = writeln!(svg, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, escape(xlabel));
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(ylabel)
        );
        let mut f = Self { svg, x, y };
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = x.0 + t * (x.1 - x.0);
            let yv = y.0 + t * (y.1 - y.0);
            let (px, _) = f.map(xv, y.0);
            let (_, py) = f.map(x.0, yv);
            let _ = writeln!(f.svg, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 16.0, tick(xv));
            let _ = writeln!(f.svg, r#"<text x="{}" y="{py:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, tick(yv));
        }
        f
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
        (
            LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * pw,
            TOP + ph - (y - self.y.0) / (self.y.1 - self.y.0) * ph,
        )
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

pub fn scatter_svg(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)]) -> String {
    let f = Frame::new(
        title,
        xlabel,
        ylabel,
        range(points.iter().map(|p| p.0)),
        range(points.iter().map(|p| p.1)),
    );
    let mut f = f;
    for &(x, y) in points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
        let (px, py) = f.map(x, y);
        let _ = writeln!(f.svg, r#"<circle cx="{px:.1}" cy="{py:.1}" r="3" fill="{}" fill-opacity="0.6"/>"#, PALETTE[0]);
    }
    f.finish()
}

pub fn lines_svg(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let all = || series.iter().flat_map(|(_, s)| s.iter());
    let mut f = Frame::new(title, xlabel, ylabel, range(all().map(|p| p.0)), range(all().map(|p| p.1)));
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| {
                let (px, py) = f.map(x, y);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        let _ = writeln!(f.svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        let _ = writeln!(
            f.svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            LEFT + 8.0,
            TOP + 16.0 + 14.0 * i as f64,
            escape(name)
        );
    }
    f.finish()
}

/// `values[row][col]`; `None` cells are drawn grey.
pub fn heatmap_svg(title: &str, row_labels: &[String], col_labels: &[String], values: &[Vec<Option<f64>>]) -> String {
    let (lo, hi) = range(values.iter().flatten().flatten().copied());
    let mut f = Frame::new(title, "", "", (0.0, col_labels.len().max(1) as f64), (0.0, row_labels.len().max(1) as f64));
    for (r, row) in values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let (x0, y1) = f.map(c as f64, r as f64);
            let (x1, y0) = f.map(c as f64 + 1.0, r as f64 + 1.0);
            let fill = match v {
                Some(v) => {
                    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                    format!("rgb({},{},{})", (255.0 * t) as u8, (80.0 + 100.0 * t) as u8, (255.0 * (1.0 - t)) as u8)
                }
                None => "#cccccc".to_string(),
            };
            let _ = writeln!(
                f.svg,
                r#"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="{fill}"/>"#,
                x1 - x0,
                y1 - y0
            );
            if let Some(v) = v {
                let _ = writeln!(
                    f.svg,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="white">{v:.0}</text>"#,
                    (x0 + x1) / 2.0,
                    (y0 + y1) / 2.0 + 4.0
                );
            }
        }
    }
    for (c, l) in col_labels.iter().enumerate() {
        let (px, _) = f.map(c as f64 + 0.5, 0.0);
        let _ = writeln!(f.svg, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 30.0, escape(l));
    }
    for (r, l) in row_labels.iter().enumerate() {
        let (_, py) = f.map(0.0, r as f64 + 0.5);
        let _ = writeln!(f.svg, r#"<text x="{}" y="{py:.1}" text-anchor="end">{}</text>"#, LEFT - 30.0, escape(l));
    }
    f.finish()
}

fn unique(values: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn parse_column(rows: &[csv::StringRecord], idx: usize) -> Vec<f64> {
    rows.iter().map(|r| r.get(idx).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)).collect()
}

/// Render a CSV produced by one of the harnesses, picking the figure type
/// from its header.
pub fn plot_csv(path: &Path) -> Result<String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    })?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let rows: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let title = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();

    if let (Some(s), Some(e), Some(m)) = (col("s"), col("epsilon"), col("median_reward")) {
        let mut ss = unique(rows.iter().map(|r| r[s].to_string()));
        ss.sort_by_key(|v| v.parse::<usize>().unwrap_or(0));
        let es = unique(rows.iter().map(|r| r[e].to_string()));
        let values = ss
            .iter()
            .map(|sv| {
                es.iter()
                    .map(|ev| {
                        rows.iter()
                            .find(|r| &r[s] == sv && &r[e] == ev)
                            .and_then(|r| r[m].parse().ok())
                    })
                    .collect()
            })
            .collect::<Vec<Vec<Option<f64>>>>();
        let es_short: Vec<String> = es.iter().map(|v| v.parse::<f64>().map_or(v.clone(), |x| format!("{x:.2}"))).collect();
        return Ok(heatmap_svg(&title, &ss, &es_short, &values));
    }
    if let (Some(x), Some(y)) = (col("ll_batch_median"), col("mean_reward")) {
        let xs = parse_column(&rows, x);
        let ys = parse_column(&rows, y);
        return Ok(scatter_svg(&title, "log-likelihood", "reward", &xs.into_iter().zip(ys).collect::<Vec<_>>()));
    }
    let (xname, skip): (&str, &[&str]) = if col("generation").is_some() {
        ("generation", &["generation"])
    } else if col("epoch").is_some() {
        ("epoch", &["epoch"])
    } else if col("trial").is_some() && col("reward").is_some() {
        ("trial", &[])
    } else {
        (header.first().map(String::as_str).unwrap_or(""), &[])
    };
    let xi = col(xname).ok_or_else(|| Error::param(format!("{}: empty header", path.display())))?;
    let xs = parse_column(&rows, xi);
    let series: Vec<(String, Vec<(f64, f64)>)> = header
        .iter()
        .enumerate()
        .filter(|(i, h)| *i != xi && !skip.contains(&h.as_str()))
        .filter_map(|(i, h)| {
            let ys = parse_column(&rows, i);
            ys.iter().any(|v| v.is_finite()).then(|| (h.clone(), xs.iter().copied().zip(ys).collect()))
        })
        .collect();
    Ok(lines_svg(&title, xname, "value", &series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svgs_are_well_formed() {
        let s = scatter_svg("a<b", "x", "y", &[(0.0, 1.0), (1.0, 2.0), (f64::NAN, 0.0)]);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert_eq!(s.matches("<circle").count(), 2);
        assert!(s.contains("a&lt;b"));
        let l = lines_svg("t", "x", "y", &[("r".into(), vec![(0.0, 0.0), (1.0, 1.0)])]);
        assert_eq!(l.matches("<polyline").count(), 1);
        let h = heatmap_svg("h", &["1".into()], &["a".into(), "b".into()], &[vec![Some(1.0), None]]);
        assert!(h.contains("#cccccc"));
    }

    #[test]
    fn csv_kind_is_inferred() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cma.csv");
        std::fs::write(&p, "generation,best_fitness,sigma,reward,ll\n1,5,0.1,5,3\n2,4,0.1,4,3\n").unwrap();
        assert_eq!(plot_csv(&p).unwrap().matches("<polyline").count(), 4);
        let p = dir.path().join("heat.csv");
        std::fs::write(&p, "s,epsilon,weighting,mean_reward,median_reward\n10,0.5,on,1,2\n10,2,on,,\n").unwrap();
        assert!(plot_csv(&p).unwrap().contains("#cccccc"));
        assert!(plot_csv(&dir.path().join("missing.csv")).is_err());
    }
}
