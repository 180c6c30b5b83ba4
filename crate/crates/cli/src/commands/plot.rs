//! `plot`: recall-vs-IoU curves as a standalone SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

pub const X_RANGE: (f64, f64) = (0.3, 0.9);
pub const Y_RANGE: (f64, f64) = (0.0, 1.0);

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 56.0;
const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// `threshold,recall` rows with an optional header line.
pub fn parse_curve_csv(name: &str, text: &str) -> Result<Curve> {
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [x, y] => x.parse::<f64>().ok().zip(y.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((x, y)) if x.is_finite() && y.is_finite() => points.push((x, y)),
            _ => bail!("format error: {name}: line {}: expected `threshold,recall`, got `{line}`", n + 1),
        }
    }
    if points.is_empty() {
        bail!("format error: {name}: no data rows");
    }
    Ok(Curve {
        name: name.to_string(),
        points,
    })
}

fn sx(x: f64) -> f64 {
    LEFT + (x - X_RANGE.0) / (X_RANGE.1 - X_RANGE.0) * (WIDTH - LEFT - RIGHT)
}

fn sy(y: f64) -> f64 {
    HEIGHT - BOTTOM - (y - Y_RANGE.0) / (Y_RANGE.1 - Y_RANGE.0) * (HEIGHT - TOP - BOTTOM)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(curves: &[Curve]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (sx(X_RANGE.0), sx(X_RANGE.1), sy(Y_RANGE.0), sy(Y_RANGE.1));
    let _ = writeln!(s, r##"<g class="axes" stroke="#333" fill="none">"##);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    s.push_str("</g>\n");
    for k in 0..=6 {
        let x = X_RANGE.0 + 0.1 * k as f64;
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{:.2}" y="{:.2}" text-anchor="middle">{x:.1}</text>"#,
            sx(x),
            y0 + 16.0
        );
    }
    for k in 0..=5 {
        let y = 0.2 * k as f64;
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{:.2}" y="{:.2}" text-anchor="end">{y:.1}</text>"#,
            x0 - 6.0,
            sy(y) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text class="label" x="{:.2}" y="{:.2}" text-anchor="middle">IoU threshold</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text class="label" transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">recall</text>"#,
        (y0 + y1) / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text class="legend" x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&c.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn curve_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn run(inputs: &[PathBuf], out: &Path) -> Result<()> {
    if inputs.is_empty() {
        bail!("plot needs at least one curve CSV");
    }
    let mut curves = Vec::with_capacity(inputs.len());
    for path in inputs {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        curves.push(parse_curve_csv(&path.display().to_string(), &text).map(|c| Curve {
            name: curve_name(path),
            ..c
        })?);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(out, render_svg(&curves)).with_context(|| format!("writing {}", out.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_and_without_header() {
        let c = parse_curve_csv("a", "threshold,recall\n0.30,1.0\n0.35,0.9\n").unwrap();
        assert_eq!(c.points, vec![(0.3, 1.0), (0.35, 0.9)]);
        assert_eq!(parse_curve_csv("b", "0.5,0.5\n").unwrap().points.len(), 1);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let err = parse_curve_csv("c.csv", "threshold,recall\n0.3,1\n0.4;0.8\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(parse_curve_csv("d", "threshold,recall\n").is_err());
    }

    #[test]
    fn axis_mapping() {
        assert_eq!(sx(0.3), LEFT);
        assert_eq!(sx(0.9), WIDTH - RIGHT);
        assert_eq!(sy(0.0), HEIGHT - BOTTOM);
        assert_eq!(sy(1.0), TOP);
    }
}
