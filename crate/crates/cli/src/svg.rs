//! Minimal SVG line charts: polylines, dashed horizontal bounds, axis labels.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 300.0;
const PAD_L: f64 = 60.0;
const PAD_R: f64 = 20.0;
const PAD_T: f64 = 30.0;
const PAD_B: f64 = 40.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

fn nice(x: f64) -> String {
    let s = format!("{x:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// One chart of `series` against `t`, with each value in `bounds` drawn as a dashed line.
pub fn line_chart(title: &str, y_label: &str, t: &[f64], series: &[Series], bounds: &[f64]) -> String {
    let finite = |v: &&f64| v.is_finite();
    let all = series.iter().flat_map(|s| s.values.iter()).chain(bounds.iter()).filter(finite);
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let (t0, t1) = (t.first().copied().unwrap_or(0.0), t.last().copied().unwrap_or(1.0));
    let span = if t1 > t0 { t1 - t0 } else { 1.0 };
    let px = |x: f64| PAD_L + (x - t0) / span * (W - PAD_L - PAD_R);
    let py = |y: f64| PAD_T + (hi - y) / (hi - lo) * (H - PAD_T - PAD_B);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        out,
        r#"<rect x="{PAD_L}" y="{PAD_T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - PAD_L - PAD_R,
        H - PAD_T - PAD_B
    );
    for k in 0..=4 {
        let y = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, PAD_L - 4.0, py(y) + 4.0, nice(y));
        let x = t0 + span * k as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, px(x), H - PAD_B + 16.0, nice(x));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">t [s]</text>"#, (W + PAD_L) / 2.0, H - 6.0);
    let _ = writeln!(out, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#, H / 2.0, H / 2.0);
    for &b in bounds.iter().filter(|b| b.is_finite()) {
        let _ = writeln!(
            out,
            r#"<line x1="{PAD_L}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black" stroke-dasharray="6,4"/>"#,
            W - PAD_R,
            y = py(b)
        );
    }
    let stride = t.len().div_ceil(MAX_POINTS).max(1);
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut pts = String::new();
        for (i, (&x, &y)) in t.iter().zip(&s.values).enumerate() {
            if (i % stride == 0 || i + 1 == t.len()) && y.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", px(x), py(y));
            }
        }
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, pts.trim_end());
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            PAD_L + 8.0 + 60.0 * k as f64,
            PAD_T + 14.0,
            s.label
        );
    }
    out.push_str("</svg>\n");
    out
}
