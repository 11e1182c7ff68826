//! Minimal SVG line charts of shape graphs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use gamirl_core::evaluation::{scale_for_display, FeatureShape, ShapeGraph};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Writes `<dir>/<feature>.svg` for every feature of `reference`. Each series
/// is rescaled by [`scale_for_display`] against the reference first.
pub fn write_plots(dir: &Path, reference: &ShapeGraph, series: &[(String, ShapeGraph)]) -> Result<Vec<PathBuf>> {
    let scaled: Vec<(String, ShapeGraph)> = series
        .iter()
        .map(|(label, g)| (label.clone(), g.scaled(scale_for_display(reference, g).scale)))
        .collect();
    let mut written = Vec::new();
    for feature in &reference.features {
        let mut lines: Vec<(&str, &FeatureShape)> = vec![("truth", feature)];
        for (label, g) in &scaled {
            if let Some(f) = g.feature(&feature.name) {
                lines.push((label, f));
            }
        }
        let path = dir.join(format!("{}.svg", sanitize(&feature.name)));
        fs::write(&path, render(&feature.name, &lines))?;
        written.push(path);
    }
    Ok(written)
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn render(title: &str, lines: &[(&str, &FeatureShape)]) -> String {
    let points = || lines.iter().flat_map(|(_, f)| f.points.iter());
    let (x0, x1) = bounds(points().map(|p| p.value));
    let (y0, y1) = bounds(points().map(|p| p.contribution));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {t} V{b} H{r}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for (y, anchor) in [(y0, HEIGHT - MARGIN), (y1, MARGIN)] {
        let _ = writeln!(svg, r#"<text x="{}" y="{anchor}" text-anchor="end" font-size="10">{y:.2}</text>"#, MARGIN - 4.0);
    }
    for (x, anchor) in [(x0, MARGIN), (x1, WIDTH - MARGIN)] {
        let _ = writeln!(svg, r#"<text x="{anchor}" y="{}" text-anchor="middle" font-size="10">{x:.2}</text>"#, HEIGHT - MARGIN + 14.0);
    }
    for (i, (label, f)) in lines.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = f.points.iter().map(|p| format!("{:.2},{:.2}", px(p.value), py(p.contribution))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, coords.join(" "));
        for p in &f.points {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(p.value), py(p.contribution));
        }
        let ly = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-size="11" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 70.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
