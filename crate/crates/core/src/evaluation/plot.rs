//! Minimal SVG charts for study reports.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

fn bounds<'a>(pts: impl Iterator<Item = &'a (f64, f64)>) -> (f64, f64, f64, f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |a: f64, b: f64| if b - a < 1e-12 { (a - 0.5, b + 0.5) } else { (a, b) };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    (x0, x1, y0, y1)
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, b: (f64, f64, f64, f64)) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="16" text-anchor="middle" font-size="13">{title}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>
<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">{ylabel}</text>
<text x="{PAD}" y="{}" text-anchor="start">{:.3}</text>
<text x="{}" y="{}" text-anchor="end">{:.3}</text>
<text x="{}" y="{}" text-anchor="end">{:.3}</text>
<text x="{}" y="{}" text-anchor="end">{:.3}</text>
"#,
        W / 2.0,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
        W / 2.0,
        H - 10.0,
        H / 2.0,
        H / 2.0,
        H - PAD + 14.0,
        b.0,
        W - PAD,
        H - PAD + 14.0,
        b.1,
        PAD - 4.0,
        H - PAD,
        b.2,
        PAD - 4.0,
        PAD + 4.0,
        b.3,
    );
}

fn project(b: (f64, f64, f64, f64), (x, y): (f64, f64)) -> (f64, f64) {
    let px = PAD + (x - b.0) / (b.1 - b.0) * (W - 2.0 * PAD);
    let py = H - PAD - (y - b.2) / (b.3 - b.2) * (H - 2.0 * PAD);
    (px, py)
}

/// Labelled scatter plot.
pub fn scatter(title: &str, xlabel: &str, ylabel: &str, points: &[(String, f64, f64)]) -> String {
    let xy: Vec<(f64, f64)> = points.iter().map(|(_, x, y)| (*x, *y)).collect();
    let b = bounds(xy.iter());
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel, b);
    for (label, x, y) in points {
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        let (px, py) = project(b, (*x, *y));
        let _ = writeln!(out, r#"<circle cx="{px:.1}" cy="{py:.1}" r="3.5" fill="{}"><title>{label}</title></circle>"#, COLORS[0]);
    }
    out.push_str("</svg>\n");
    out
}

/// Multi-series line chart with a legend.
pub fn lines(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let b = bounds(series.iter().flat_map(|s| s.points.iter()));
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel, b);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&p| {
                let (px, py) = project(b, p);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, pts.join(" "));
        let ly = PAD + 14.0 * i as f64;
        let _ = writeln!(out, r#"<text x="{}" y="{ly:.1}" fill="{color}" text-anchor="end">{}</text>"#, W - PAD, s.label);
    }
    out.push_str("</svg>\n");
    out
}
