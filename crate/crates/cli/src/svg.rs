//! Hand-written SVG scatter plots of embedding CSVs.

use std::fmt::Write as _;
use std::path::Path;

use nio_core::util::write_atomic;

use crate::Failure;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];
const LABELS: [&str; 2] = ["random", "geometric"];

struct Point {
    x: f64,
    y: f64,
    label: usize,
}

fn read_points(input: &Path, source: Option<&str>) -> Result<Vec<Point>, Failure> {
    let mut reader = csv::Reader::from_path(input).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Failure::Usage(format!("cannot read {}: {e}", input.display())),
        _ => Failure::Runtime(e.to_string()),
    })?;
    let headers = reader.headers().map_err(|e| Failure::Usage(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y", "label", "source"] {
        return Err(Failure::Usage(format!(
            "{} is not an embedding CSV (expected header x,y,label,source)",
            input.display()
        )));
    }
    let mut points = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Failure::Usage(e.to_string()))?;
        if source.is_some_and(|s| s != &record[3]) {
            continue;
        }
        let bad = |what: &str| Failure::Usage(format!("row {}: bad {what}", line + 2));
        let x: f64 = record[0].parse().map_err(|_| bad("x"))?;
        let y: f64 = record[1].parse().map_err(|_| bad("y"))?;
        let label: usize = record[2].parse().map_err(|_| bad("label"))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(bad("coordinate"));
        }
        points.push(Point { x, y, label });
    }
    if points.is_empty() {
        return Err(Failure::Usage("no points to plot".into()));
    }
    Ok(points)
}

fn render(points: &[Point], title: &str) -> String {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let plot = SIZE - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x0) / span(x0, x1) * plot;
    let sy = |y: f64| SIZE - MARGIN - (y - y0) / span(y0, y1) * plot;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect class="axes" x="{MARGIN}" y="{MARGIN}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
    );
    for (v, anchor, x, y) in [
        (x0, "start", MARGIN, SIZE - MARGIN + 18.0),
        (x1, "end", SIZE - MARGIN, SIZE - MARGIN + 18.0),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{v:.3}</text>"#
        );
    }
    for (v, y) in [(y0, SIZE - MARGIN), (y1, MARGIN + 10.0)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.3}</text>"#,
            MARGIN - 4.0
        );
    }
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.3}" cy="{:.3}" r="3" fill="{}" fill-opacity="0.7"/>"#,
            sx(p.x),
            sy(p.y),
            COLORS[p.label % 2]
        );
    }
    for (i, (color, name)) in COLORS.iter().zip(LABELS).enumerate() {
        let y = MARGIN + 8.0 + 18.0 * i as f64;
        let x = SIZE - MARGIN - 110.0;
        let _ = writeln!(s, r#"<rect class="legend" x="{x}" y="{y}" width="12" height="12" fill="{color}"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{i}: {name}</text>"#,
            x + 18.0,
            y + 10.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn plot(input: &Path, out: &Path, source: Option<&str>) -> Result<(), Failure> {
    let points = read_points(input, source)?;
    let title = source.unwrap_or("embedding");
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    write_atomic(out, render(&points, title).as_bytes())?;
    eprintln!("plot: {} points → {}", points.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_circle_per_point() {
        let pts: Vec<Point> = (0..7).map(|i| Point { x: i as f64, y: (i * i) as f64, label: i % 2 }).collect();
        let svg = render(&pts, "t");
        assert_eq!(svg.matches("<circle").count(), 7);
        assert_eq!(svg.matches(r#"class="legend""#).count(), 2);
        assert!(svg.contains(r#"class="axes""#));
    }

    #[test]
    fn degenerate_ranges_stay_finite() {
        let pts = [Point { x: 1.0, y: 1.0, label: 0 }];
        assert!(!render(&pts, "t").contains("NaN"));
    }
}
